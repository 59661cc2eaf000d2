import csv
import math

import numpy as np
import pytest

from conftest import FIXTURES
from relaymining.config import Config
from relaymining.tracesim import (
    BlockRecord,
    ShapeParamsError,
    TraceBlock,
    TraceError,
    compute_metrics,
    format_trace,
    load_trace,
    parse_trace,
    run_simulation,
    save_trace,
    substream,
    synth_trace,
    warmup_blocks,
    write_metrics_csv,
)

FIXTURE = FIXTURES / "trace_small.csv"


# -- trace files -------------------------------------------------------------


def test_load_fixture():
    blocks = load_trace(FIXTURE)
    assert [b.height for b in blocks] == [100, 101, 102]
    assert blocks[0] == TraceBlock(100, "svc-eth", 1500, (("app-a", 1000), ("app-b", 500)))


def test_roundtrip_is_byte_identical(tmp_path):
    out = tmp_path / "t.csv"
    save_trace(load_trace(FIXTURE), out)
    assert out.read_bytes() == FIXTURE.read_bytes()


@pytest.mark.parametrize(
    "body,line,word",
    [
        ("5,s,10\n5,s,11\n", 3, "duplicate"),
        ("5,s,10\n7,s,11\n", 3, "gap"),
        ("5,s,10\n6,s,11\n4,s,11\n", 4, "out of order"),
        ("5,s,ten\n", 2, "integer"),
        ("5,s,-1\n", 2, "negative"),
        ("5,s\n", 2, "fields"),
    ],
)
def test_malformed_rows_name_line(body, line, word):
    with pytest.raises(TraceError) as exc:
        parse_trace("height,service_id,relay_count\n" + body)
    assert exc.value.line == line
    assert f"line {line}" in str(exc.value)
    assert word in str(exc.value)


def test_bad_header_and_breakdown():
    with pytest.raises(TraceError):
        parse_trace("h,s,c\n1,s,1\n")
    with pytest.raises(TraceError, match="sum"):
        parse_trace("height,service_id,relay_count,app_id,app_count\n1,s,10,a,9\n")
    with pytest.raises(TraceError):
        parse_trace("")


def test_services_have_independent_heights():
    blocks = parse_trace("height,service_id,relay_count\n1,a,5\n1,b,6\n2,a,7\n2,b,8\n")
    assert len(blocks) == 4


# -- synthetic shapes --------------------------------------------------------


def test_step_surge_completes_quickly():
    t = synth_trace("step-surge", {"noise": 0})
    counts = [b.relay_count for b in t]
    first_after = next(i for i, c in enumerate(counts) if c == 276_000)
    last_before = max(i for i, c in enumerate(counts) if c == 1_120)
    assert first_after - last_before <= 4


def test_step_transition_capped():
    with pytest.raises(ShapeParamsError):
        synth_trace("step-surge", {"transition_blocks": 4})


def test_soft_surge_ramp():
    t = synth_trace("soft-surge", {"noise": 0})
    counts = np.array([b.relay_count for b in t])
    assert counts[0] == 2_900_000 and counts[-1] == 11_000_000
    ramp = counts[60 : 60 + 175]
    assert np.all(np.diff(ramp) > 0)
    assert ramp[-1] == 11_000_000
    assert counts[59] == 2_900_000


def test_steady_without_noise_is_flat():
    t = synth_trace("steady", {"noise": 0, "blocks": 50})
    assert {b.relay_count for b in t} == {1_000_000}


def test_noise_is_seeded():
    assert synth_trace("steady", seed=4) == synth_trace("steady", seed=4)
    assert synth_trace("steady", seed=4) != synth_trace("steady", seed=5)


@pytest.mark.parametrize(
    "shape,params",
    [
        ("steady", {"blocks": 0}),
        ("steady", {"noise": 2}),
        ("steady", {"bogus": 1}),
        ("step-drop", {"before": 10, "after": 20}),
        ("step-surge", {"before": 20, "after": 10}),
        ("volcano", {}),
    ],
)
def test_invalid_shape_params(shape, params):
    with pytest.raises(ShapeParamsError):
        synth_trace(shape, params)


def test_substreams_are_order_free():
    a = substream(1, "x", 5).random()
    substream(1, "y").random()
    assert substream(1, "x", 5).random() == a
    assert substream(1, "x", 6).random() != a


# -- simulation --------------------------------------------------------------


def small_config(**sim):
    cfg = Config()
    cfg.difficulty.target_claims = 100
    for k, v in sim.items():
        setattr(cfg.sim, k, v)
    return cfg


def test_simulation_is_deterministic():
    trace = synth_trace("steady", {"blocks": 60})
    a = run_simulation(trace, small_config(seed=3))
    b = run_simulation(trace, small_config(seed=3))
    c = run_simulation(trace, small_config(seed=4))
    assert a.records == b.records
    assert a.records != c.records
    assert a.metadata == b.metadata


def test_fast_and_full_claim_counts_agree():
    trace = synth_trace("steady", {"blocks": 50, "level": 400})
    cfg = small_config(seed=9, apps={"app-a": 2.0, "app-b": 1.0})
    fast = run_simulation(trace, cfg, mode="fast")
    full = run_simulation(trace, cfg, mode="full")
    assert [r.claims for r in fast.records] == [r.claims for r in full.records]
    assert fast.cell_claims == full.cell_claims
    assert [r.estimated_relays for r in fast.records] == [r.estimated_relays for r in full.records]
    assert any(r.probability < 1 for r in full.records)


def test_full_mode_settles_everything():
    trace = synth_trace("steady", {"blocks": 16, "level": 300, "noise": 0})
    cfg = small_config(seed=1)
    cfg.difficulty.fixed_probability = 0.1
    res = run_simulation(trace, cfg, mode="full")
    settlements = [e for e in res.log.events if e["event"] == "settlement"]
    claims = [e for e in res.log.events if e["event"] == "claim"]
    assert len(settlements) == len(claims) > 0
    assert {e["outcome"] for e in settlements} == {"settled"}
    assert res.registry.ledger.minted == res.registry.ledger.burned
    assert sum(e["sum"] for e in claims) == sum(r.claims for r in res.records)


def test_full_mode_rejects_mid_session_retarget():
    cfg = small_config()
    cfg.difficulty.update_interval = 3
    with pytest.raises(ValueError, match="one difficulty per session"):
        run_simulation(synth_trace("steady", {"blocks": 4, "level": 10}), cfg, mode="full")


def test_trace_breakdown_is_respected():
    cfg = small_config(apps={"app-a": 1.0, "app-b": 1.0})
    cfg.difficulty.fixed_probability = 1.0
    res = run_simulation(load_trace(FIXTURE), cfg)
    per_app = {}
    for h, _, app, _, n, _ in res.cell_claims:
        per_app[(h, app)] = per_app.get((h, app), 0) + n
    assert per_app[(100, "app-a")] == 1000 and per_app[(100, "app-b")] == 500


def test_fast_mode_caps_by_tokens():
    cfg = small_config()
    cfg.session.app_stake = 12
    cfg.session.ttrm = 1
    cfg.session.relay_accuracy = 0.0  # one token per servicer
    cfg.difficulty.fixed_probability = 1.0
    res = run_simulation(synth_trace("steady", {"blocks": 4, "level": 1000, "noise": 0}), cfg)
    assert sum(r.claims for r in res.records) == 12


def test_margin_breach_logged():
    cfg = small_config()
    cfg.session.app_stake = 24
    cfg.session.ttrm = 1
    cfg.session.relay_accuracy = 1.0  # each servicer may spend twice its share
    cfg.difficulty.fixed_probability = 1.0
    res = run_simulation(synth_trace("steady", {"blocks": 4, "level": 200, "noise": 0}), cfg, mode="full")
    assert any(e["event"] == "margin-breach" for e in res.log.events)


# -- metrics -----------------------------------------------------------------


def rec(claims, relays=100, est=None, h=0, svc="s"):
    est = relays if est is None else est
    return BlockRecord(h, svc, relays, 1.0, claims, est, 0.0, 0.0, 0.0)


def test_metrics_all_on_target():
    a = compute_metrics([rec(50, h=i) for i in range(5)], 50)
    assert a.mean_target_error_pct == a.min_target_error_pct == a.max_target_error_pct == 0
    assert a.accumulated_target_error == 0
    assert a.mean_volume_error_pct == 0


def test_metrics_symmetric_pair():
    a = compute_metrics([rec(0), rec(200, h=1)], 100)
    assert (a.min_target_error_pct, a.max_target_error_pct) == (-100, 100)
    assert a.accumulated_target_error == 0


def test_metrics_skip_and_empty():
    recs = [rec(0, h=0), rec(100, h=1)]
    assert compute_metrics(recs, 100, skip=1).min_target_error_pct == 0
    with pytest.raises(ValueError):
        compute_metrics(recs, 100, skip=2)


def naive_aggregates(path, target):
    """Spreadsheet-style recomputation straight from the metrics CSV."""
    with open(path) as fh:
        rows = list(csv.DictReader(fh))
    terr, verr, acc = [], [], 0.0
    for r in rows:
        c = int(r["claims"])
        terr.append((c - target) * 100 / target)
        acc += c - target
        truth = int(r["relay_count"])
        if truth:
            verr.append((float(r["estimated_relays"]) - truth) * 100 / truth)
    return {
        "mean_t": sum(terr) / len(terr),
        "min_t": min(terr),
        "max_t": max(terr),
        "acc": acc,
        "mean_v": sum(verr) / len(verr),
        "min_v": min(verr),
        "max_v": max(verr),
    }


def test_metrics_match_naive_recomputation(tmp_path):
    cfg = small_config(seed=2)
    cfg.difficulty.target_claims = 50
    res = run_simulation(load_trace(FIXTURE) + synth_trace("steady", {"blocks": 5, "level": 900, "start_height": 103, "service_id": "svc-eth"}), cfg)
    path = tmp_path / "m.csv"
    write_metrics_csv(res.records, path)
    a = compute_metrics(res.records, 50)
    n = naive_aggregates(path, 50)
    assert a.mean_target_error_pct == pytest.approx(n["mean_t"])
    assert a.min_target_error_pct == pytest.approx(n["min_t"])
    assert a.max_target_error_pct == pytest.approx(n["max_t"])
    assert a.accumulated_target_error == pytest.approx(n["acc"])
    assert a.accumulated_target_error_per_block == pytest.approx(n["acc"] / 8)
    assert a.mean_volume_error_pct == pytest.approx(n["mean_v"])
    assert a.min_volume_error_pct == pytest.approx(n["min_v"])
    assert a.max_volume_error_pct == pytest.approx(n["max_v"])


def test_warmup_convention():
    assert warmup_blocks(0.1) == 30
    assert warmup_blocks(0.3) == 10


@pytest.mark.parametrize("shape", ["step-surge", "step-drop", "soft-surge"])
def test_volume_error_does_not_spike(shape):
    trace = synth_trace(shape, seed=0)
    res = run_simulation(trace, Config())
    skip = warmup_blocks(0.1)
    verr = [abs(r.volume_error_pct) for r in res.records[skip:]]
    assert max(verr) < 10
    assert all(math.isfinite(v) for v in verr)
