import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import World
from relaymining.primitives import Difficulty, KeyPair, sign
from relaymining.session import (
    Admission,
    InsufficientServicersError,
    Relay,
    SessionParams,
    ZeroBudgetError,
    compute_budget,
    handle_relay,
    make_request,
    new_session,
    session_start,
)


# -- budget ------------------------------------------------------------------


def test_default_budget_is_one_hundred_million():
    assert compute_budget(1_000_000, 1000, 12, 0.2).tokens == 100_000_000


def test_zero_accuracy_is_plain_floor():
    assert compute_budget(1_000_000, 1000, 12, 0).tokens == 1_000_000_000 // 12


def test_unit_budget():
    assert compute_budget(12, 1, 12, 0).tokens == 1


@pytest.mark.parametrize("stake", [0, -5])
def test_non_positive_stake_rejected(stake):
    with pytest.raises(ZeroBudgetError):
        compute_budget(stake, 1000, 12, 0.2)


def test_budget_rounding_to_zero_rejected():
    with pytest.raises(ZeroBudgetError):
        compute_budget(1, 1, 12, 0)


@given(
    st.integers(1, 10**9),
    st.integers(1, 10**4),
    st.integers(1, 100),
    st.sampled_from([0, 0.05, 0.1, 0.2, 0.5, 1.0]),
)
def test_budget_matches_integer_oracle(stake, ttrm, sps, acc):
    # Accuracy as a hundredth-fraction keeps the oracle in integers.
    num = stake * ttrm * (100 + round(acc * 100))
    expected = num // (sps * 100)
    if expected == 0:
        with pytest.raises(ZeroBudgetError):
            compute_budget(stake, ttrm, sps, acc)
    else:
        assert compute_budget(stake, ttrm, sps, acc).tokens == expected


# -- sessions ----------------------------------------------------------------


def test_session_is_deterministic():
    pool = [f"s{i}" for i in range(40)]
    a = new_session(b"\x01" * 32, "app", "svc", pool)
    b = new_session(b"\x01" * 32, "app", "svc", list(reversed(pool)))
    assert a == b
    assert len(a.servicers) == 12 and len(set(a.servicers)) == 12


def test_entropy_changes_selection():
    pool = [f"s{i}" for i in range(40)]
    a = new_session(b"\x01" * 32, "app", "svc", pool)
    b = new_session(b"\x02" * 32, "app", "svc", pool)
    assert a.servicers != b.servicers


def test_full_pool_selected():
    pool = [f"s{i}" for i in range(12)]
    assert new_session(b"\x00" * 32, "app", "svc", pool).servicers == tuple(sorted(pool))


def test_small_pool_rejected():
    with pytest.raises(InsufficientServicersError):
        new_session(b"\x00" * 32, "app", "svc", ["a", "b"])


def test_selection_is_uniform():
    pool = [f"s{i:03d}" for i in range(100)]
    counts = dict.fromkeys(pool, 0)
    n = 10_000
    for i in range(n):
        for s in new_session(i.to_bytes(32, "big"), "app", "svc", pool).servicers:
            counts[s] += 1
    sigma = math.sqrt(n * 0.12 * 0.88)
    assert all(abs(c - n * 0.12) <= 3 * sigma for c in counts.values())


def test_session_windows():
    assert session_start(0, 4) == 0
    assert session_start(7, 4) == 4
    s = new_session(b"\x00" * 32, "a", "b", [f"s{i}" for i in range(12)], start_height=8)
    assert s.end_height == 12
    assert s.contains(8) and s.contains(11) and not s.contains(12) and not s.contains(7)


# -- relay handling ----------------------------------------------------------


def small_world(tokens_stake=60, **kw):
    # stake 60, ttrm 1, sps 12, accuracy 0 gives b = 5.
    return World(stake=tokens_stake, ttrm=1, accuracy=0, **kw)


def test_collision_inserts_and_spends_token(p_one):
    w = small_world()
    state = w.state()
    assert state.token_count == 5
    out = handle_relay(state, w.request(state.servicer_id, 0), p_one)
    assert out is Admission.SERVED_AND_INSERTED
    assert state.token_count == 4
    assert state.trie.root.sum == 1


def test_exhausted_bucket_rejects(p_one):
    w = small_world()
    state = w.state()
    state.token_count = 0
    before = state.trie.root
    assert handle_relay(state, w.request(state.servicer_id, 0), p_one) is Admission.REJECTED_EXHAUSTED
    assert state.trie.root == before


def test_outsider_servicer_unpayable(p_one):
    w = World(pool=20)
    outsider = next(s for s in w.pool if s not in w.session.servicers)
    state = w.state(outsider)
    assert handle_relay(state, w.request(outsider, 0), p_one) is Admission.REJECTED_UNPAYABLE
    assert state.trie.root.sum == 0


def test_cross_session_request_unpayable(p_one):
    w = World()
    state = w.state()
    other = new_session(b"\x99" * 32, "app-0", "svc-0", w.pool, w.params)
    req = make_request(w.app, other, state.servicer_id, 0, b"x")
    assert handle_relay(state, req, p_one) is Admission.REJECTED_UNPAYABLE


def test_request_outside_window_unpayable(p_one):
    w = World()
    state = w.state()
    req = w.request(state.servicer_id, 0, height=w.session.end_height)
    assert handle_relay(state, req, p_one) is Admission.REJECTED_UNPAYABLE


def test_forged_signature_invalid(p_one):
    w = World()
    state = w.state()
    req = w.request(state.servicer_id, 0)
    forged = replace(req, signature=sign(KeyPair.derive("mallory"), req.body()))
    assert handle_relay(state, forged, p_one) is Admission.REJECTED_INVALID
    assert state.token_count == w.budget.tokens


def test_replayed_request_not_counted_twice(p_one):
    w = World()
    state = w.state()
    req = w.request(state.servicer_id, 0)
    assert handle_relay(state, req, p_one) is Admission.SERVED_AND_INSERTED
    assert handle_relay(state, req, p_one) is Admission.REJECTED_REPLAY
    assert state.trie.root.sum == 1


def test_relay_roundtrip_and_signatures(p_one):
    w = World()
    state = w.state()
    handle_relay(state, w.request(state.servicer_id, 3), p_one)
    (key, _, _), = state.trie.leaves()
    relay = Relay.deserialize(state.trie.get(key))
    assert relay.digest == key.to_bytes(32, "big")
    assert relay.signatures_valid(w.keyring)
    tampered = replace(relay, response=relay.response + b"!")
    assert not tampered.signatures_valid(w.keyring)


def test_p_one_sum_equals_served():
    w = World(stake=120, ttrm=1, accuracy=0)  # b = 10
    state = w.state()
    for i in range(7):
        handle_relay(state, w.request(state.servicer_id, i), Difficulty(1.0))
    assert state.trie.root.sum == state.served == 7


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 40), st.sampled_from([1.0, 0.5, 0.1]))
def test_trie_sum_never_exceeds_budget(n, p):
    w = World(stake=120, ttrm=1, accuracy=0)  # b = 10
    state = w.state()
    diff = Difficulty(p)
    for i in range(n):
        handle_relay(state, w.request(state.servicer_id, i), diff)
        assert state.trie.root.sum <= w.budget.tokens
    assert state.trie.root.sum + state.token_count == w.budget.tokens


def test_collision_count_is_binomial():
    p, n, runs = 0.25, 40, 60
    w = World(key_width=256)
    diff = Difficulty(p)
    sums = []
    for r in range(runs):
        state = w.state()
        for i in range(n):
            req = make_request(w.app, w.session, state.servicer_id, 0, f"run{r}-{i}".encode())
            handle_relay(state, req, diff)
        sums.append(state.trie.root.sum)
    mean = float(np.mean(sums))
    se = math.sqrt(n * p * (1 - p) / runs)
    assert abs(mean - n * p) <= 3 * se


def test_total_served_within_stake_margin(p_one):
    w = World(stake=24, ttrm=1, accuracy=0.5, pool=12)  # b = 3 per servicer
    total = 0
    for s in w.session.servicers:
        state = w.state(s)
        for i in range(10):
            handle_relay(state, w.request(s, i), p_one)
        total += state.trie.root.sum
    assert total == 12 * 3
    assert total <= 24 * 1 * 1.5
