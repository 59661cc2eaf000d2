"""Block-by-block relay mining simulation over traffic traces.

Two modes share one sampling core. For every block, service, application
and session servicer the number of colliding relays is drawn as
``Binomial(n, p)`` from a named random stream.

* ``fast``: those counts are the claims (capped by remaining tokens).
* ``full``: the same counts drive real traffic. Each servicer receives
  ``n`` signed relays of which exactly the drawn number have colliding
  digests, runs them through :func:`~relaymining.session.handle_relay`,
  and later claims, is challenged, reveals a proof and is settled.

Drawing the collision count first and then the relay contents
conditionally on it gives the same joint distribution as drawing contents
and counting collisions, and it makes both modes agree draw for draw.
"""

from __future__ import annotations

import csv
import io
import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .claimproof import ClaimRegistry, EventLog, build_reveal
from .config import Config
from .difficulty import BlockObservation, DifficultyState
from .primitives import Difficulty, KeyPair, Keyring, check_collision, sha256
from .session import (
    Admission,
    ServicerState,
    SessionHeader,
    SessionParams,
    compute_budget,
    handle_relay,
    make_request,
    new_session,
    serve,
    session_start,
)
from .smst import SumTrie

SHAPES = ("steady", "soft-surge", "step-drop", "step-surge")


class TraceError(ValueError):
    """Malformed trace input; ``line`` is 1-based when known."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class ShapeParamsError(ValueError):
    pass


@dataclass(frozen=True)
class TraceBlock:
    height: int
    service_id: str
    relay_count: int
    apps: tuple[tuple[str, int], ...] = ()


# -- trace files -----------------------------------------------------------------


def parse_trace(text: str) -> list[TraceBlock]:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows:
        raise TraceError("empty trace", 1)
    header = [c.strip() for c in rows[0]]
    if header[:3] != ["height", "service_id", "relay_count"] or len(header) % 2 == 0:
        raise TraceError("header must be height,service_id,relay_count[,app_id,app_count]*", 1)
    for i in range(3, len(header), 2):
        if header[i : i + 2] != ["app_id", "app_count"]:
            raise TraceError("breakdown columns must be app_id,app_count pairs", 1)
    blocks = []
    last: dict[str, int] = {}
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) < 3 or len(row) % 2 == 0 or len(row) > len(header):
            raise TraceError("wrong number of fields", lineno)
        try:
            height = int(row[0])
            count = int(row[2])
            apps = tuple((row[i], int(row[i + 1])) for i in range(3, len(row), 2))
        except ValueError as exc:
            raise TraceError(f"not an integer: {exc}", lineno) from None
        service = row[1]
        if count < 0 or any(c < 0 for _, c in apps):
            raise TraceError("negative relay count", lineno)
        if apps and sum(c for _, c in apps) != count:
            raise TraceError("app counts do not sum to relay_count", lineno)
        if service in last:
            if height == last[service]:
                raise TraceError(f"duplicate height {height} for service {service}", lineno)
            if height < last[service]:
                raise TraceError(f"height {height} out of order for service {service}", lineno)
            if height != last[service] + 1:
                raise TraceError(f"gap before height {height} for service {service}", lineno)
        last[service] = height
        blocks.append(TraceBlock(height, service, count, apps))
    if not blocks:
        raise TraceError("trace has no blocks", 2)
    return blocks


def load_trace(path) -> list[TraceBlock]:
    with open(path, newline="") as fh:
        return parse_trace(fh.read())


def format_trace(blocks: Sequence[TraceBlock]) -> str:
    width = max((len(b.apps) for b in blocks), default=0)
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["height", "service_id", "relay_count"] + ["app_id", "app_count"] * width)
    for b in blocks:
        row = [b.height, b.service_id, b.relay_count]
        for app, c in b.apps:
            row += [app, c]
        w.writerow(row)
    return out.getvalue()


def save_trace(blocks: Sequence[TraceBlock], path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(format_trace(blocks))


# -- synthetic traces ----------------------------------------------------------------

SHAPE_DEFAULTS = {
    "steady": {"level": 1_000_000, "blocks": 530},
    "soft-surge": {"start_level": 2_900_000, "end_level": 11_000_000, "ramp_blocks": 175, "pre_blocks": 60, "post_blocks": 60},
    "step-drop": {"before": 273_000, "after": 21_000, "pre_blocks": 60, "post_blocks": 100, "transition_blocks": 2},
    "step-surge": {"before": 1_120, "after": 276_000, "pre_blocks": 60, "post_blocks": 100, "transition_blocks": 2},
}
COMMON_DEFAULTS = {"noise": 0.01, "start_height": 0, "service_id": "svc-0"}


def _levels(shape: str, prm: dict) -> np.ndarray:
    if shape == "steady":
        return np.full(prm["blocks"], float(prm["level"]))
    if shape == "soft-surge":
        ramp = np.linspace(prm["start_level"], prm["end_level"], prm["ramp_blocks"] + 1)[1:]
        return np.concatenate(
            [np.full(prm["pre_blocks"], float(prm["start_level"])), ramp, np.full(prm["post_blocks"], float(prm["end_level"]))]
        )
    tb = prm["transition_blocks"]
    mid = np.linspace(prm["before"], prm["after"], tb + 2)[1:-1]
    return np.concatenate([np.full(prm["pre_blocks"], float(prm["before"])), mid, np.full(prm["post_blocks"], float(prm["after"]))])


def _check_shape_params(shape: str, prm: dict) -> None:
    def positive_int(name, allow_zero=False):
        v = prm[name]
        if not isinstance(v, int) or isinstance(v, bool) or v < (0 if allow_zero else 1):
            raise ShapeParamsError(f"{shape}: {name} must be a {'non-negative' if allow_zero else 'positive'} integer")

    def level(name):
        v = prm[name]
        if not isinstance(v, (int, float)) or v < 0:
            raise ShapeParamsError(f"{shape}: {name} must be a non-negative number")

    if not isinstance(prm["noise"], (int, float)) or not 0 <= prm["noise"] < 1:
        raise ShapeParamsError(f"{shape}: noise must be in [0, 1)")
    if shape == "steady":
        positive_int("blocks")
        level("level")
    elif shape == "soft-surge":
        positive_int("ramp_blocks")
        positive_int("pre_blocks", True)
        positive_int("post_blocks", True)
        level("start_level")
        level("end_level")
    else:
        positive_int("pre_blocks", True)
        positive_int("post_blocks", True)
        positive_int("transition_blocks", True)
        level("before")
        level("after")
        if prm["transition_blocks"] > 3:
            raise ShapeParamsError(f"{shape}: a step must complete in under four blocks (transition_blocks <= 3)")
        if shape == "step-drop" and not prm["after"] < prm["before"]:
            raise ShapeParamsError("step-drop: after must be below before")
        if shape == "step-surge" and not prm["after"] > prm["before"]:
            raise ShapeParamsError("step-surge: after must be above before")


def synth_trace(shape: str, params: dict | None = None, seed: int = 0) -> list[TraceBlock]:
    """Synthetic single-service trace of a named shape.

    ``steady`` holds one level; ``soft-surge`` ramps linearly over
    ``ramp_blocks``; ``step-drop``/``step-surge`` jump between two levels
    through at most three intermediate blocks. Every block gets
    multiplicative Gaussian noise of relative size ``noise``.
    """
    if shape not in SHAPES:
        raise ShapeParamsError(f"unknown shape {shape!r}; expected one of {SHAPES}")
    prm = {**COMMON_DEFAULTS, **SHAPE_DEFAULTS[shape], **(params or {})}
    unknown = set(prm) - set(COMMON_DEFAULTS) - set(SHAPE_DEFAULTS[shape])
    if unknown:
        raise ShapeParamsError(f"{shape}: unknown parameters {sorted(unknown)}")
    _check_shape_params(shape, prm)
    levels = _levels(shape, prm)
    if prm["noise"] > 0:
        rng = substream(seed, "trace", shape)
        levels = levels * (1 + prm["noise"] * rng.standard_normal(len(levels)))
    counts = np.maximum(np.rint(levels), 0).astype(np.int64)
    h0 = prm["start_height"]
    return [TraceBlock(h0 + i, prm["service_id"], int(c)) for i, c in enumerate(counts)]


# -- random streams -------------------------------------------------------------------


def _stream_key(name) -> int:
    if isinstance(name, (int, np.integer)):
        return int(name)
    return int.from_bytes(sha256(str(name).encode())[:8], "big")


def substream(seed: int, *names) -> np.random.Generator:
    """Generator for a named sub-stream of ``seed``; independent of call order."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=tuple(_stream_key(n) for n in names)))


def block_hash(seed: int, height: int) -> bytes:
    """Stand-in chain: deterministic block hash per height."""
    return sha256(b"block", seed.to_bytes(8, "big"), height.to_bytes(8, "big", signed=True))


# -- simulation -------------------------------------------------------------------


@dataclass(frozen=True)
class BlockRecord:
    height: int
    service_id: str
    relay_count: int
    probability: float
    claims: int
    estimated_relays: float
    r_ema: float
    target_error_pct: float
    volume_error_pct: float


@dataclass
class SimResult:
    records: list[BlockRecord]
    observations: dict[str, list[BlockObservation]]
    log: EventLog
    metadata: dict
    registry: ClaimRegistry | None = None
    cell_claims: list[tuple] = field(default_factory=list)


def target_error_pct(claims: float, target: float) -> float:
    return 100.0 * (claims - target) / target


def volume_error_pct(estimate: float, truth: float) -> float:
    if truth == 0:
        return 0.0 if estimate == 0 else math.inf
    return 100.0 * (estimate - truth) / truth


class _Simulator:
    def __init__(self, config: Config, mode: str):
        self.cfg = config
        self.mode = mode
        self.seed = config.sim.seed
        sc = config.session
        self.params = SessionParams(sc.servicers_per_session, sc.window, sc.ttrm, sc.relay_accuracy)
        self.budget = compute_budget(sc.app_stake, sc.ttrm, sc.servicers_per_session, sc.relay_accuracy)
        self.pool = [f"servicer-{i:03d}" for i in range(config.sim.servicers)]
        self.app_weights = dict(sorted(config.sim.apps.items()))
        self.sessions: dict[tuple, SessionHeader] = {}
        self.tokens: dict[tuple, int] = {}
        self.log = EventLog()
        self.cell_claims: list[tuple] = []
        if mode == "full":
            key_seed = self.seed.to_bytes(8, "big")
            self.keyring = Keyring()
            self.keys = {
                name: self.keyring.add(KeyPair.derive(name, key_seed)) for name in [*self.pool, *self.app_weights]
            }
            cp = config.claimproof
            self.registry = ClaimRegistry(
                self.keyring,
                claim_window=cp.claim_window,
                proof_window=cp.proof_window,
                reward_rate=cp.reward_rate,
                log=self.log,
            )
            self.states: dict[tuple, ServicerState] = {}
            self.session_p: dict[tuple, float] = {}
            self.pending_claims: list = []
            self.session_burn: dict[tuple, float] = defaultdict(float)
            self.breached: set = set()
        else:
            self.registry = None

    def session_for(self, service: str, app: str, height: int) -> SessionHeader:
        start = session_start(height, self.params.window)
        key = (service, app, start)
        if key not in self.sessions:
            self.sessions[key] = new_session(
                block_hash(self.seed, start), app, service, self.pool, self.params, start_height=start
            )
        return self.sessions[key]

    def split_apps(self, block: TraceBlock) -> list[tuple[str, int]]:
        if block.apps:
            return sorted(block.apps)
        names = list(self.app_weights)
        w = np.array([self.app_weights[n] for n in names], dtype=float)
        counts = substream(self.seed, "apps", block.service_id, block.height).multinomial(block.relay_count, w / w.sum())
        return list(zip(names, (int(c) for c in counts)))

    def run_block(self, block: TraceBlock, p: float) -> int:
        total = 0
        for app, n_app in self.split_apps(block):
            session = self.session_for(block.service_id, app, block.height)
            k = len(session.servicers)
            split = substream(self.seed, "servicers", block.service_id, app, block.height).multinomial(n_app, [1.0 / k] * k)
            hits = substream(self.seed, "collisions", block.service_id, app, block.height).binomial(split, p)
            for servicer, n, c in zip(session.servicers, split.tolist(), hits.tolist()):
                slot = (block.service_id, app, session.start_height, servicer)
                if self.mode == "full":
                    inserted = self.full_cell(slot, session, servicer, block.height, n, c, p)
                else:
                    left = self.tokens.setdefault(slot, self.budget.tokens)
                    inserted = min(c, left)
                    self.tokens[slot] = left - inserted
                self.cell_claims.append((block.height, block.service_id, app, servicer, n, inserted))
                total += inserted
        return total

    # -- full fidelity -----------------------------------------------------

    def state_for(self, slot, session: SessionHeader, servicer: str, p: float) -> ServicerState:
        st = self.states.get(slot)
        if st is None:
            st = ServicerState(session, self.keys[servicer], self.budget, self.keyring, trie=SumTrie(self.cfg.sim.key_width))
            self.states[slot] = st
            self.session_p[slot] = p
        return st

    def full_cell(self, slot, session, servicer, height, n, c, p) -> int:
        if n == 0:
            return 0
        st = self.state_for(slot, session, servicer, p)
        if self.session_p[slot] != p:
            raise RuntimeError("difficulty changed inside a session; use an update interval that is a multiple of the session window")
        diff = Difficulty(p)
        app_key = self.keys[session.app_id]
        rng = substream(self.seed, "content", session.service_id, session.app_id, servicer, height)
        hits, misses = [], []
        while len(hits) < c or len(misses) < n - c:
            req = make_request(app_key, session, servicer, height, rng.bytes(16))
            d = serve(st, req).digest
            if check_collision(d, diff):
                if len(hits) < c:
                    hits.append(req)
            elif len(misses) < n - c:
                misses.append(req)
        reqs = hits + misses
        before = st.trie.root.sum
        for i in rng.permutation(n):
            outcome = handle_relay(st, reqs[i], diff)
            if outcome not in (Admission.SERVED_AND_INSERTED, Admission.SERVED_NO_COLLISION, Admission.REJECTED_EXHAUSTED):
                raise RuntimeError(f"honest relay rejected: {outcome.value}")
        return st.trie.root.sum - before

    def lifecycle(self, height: int) -> None:
        """Claims, challenges, reveals and settlement due at ``height``."""
        reg = self.registry
        due = [(slot, st) for slot, st in self.states.items() if st.session.end_height == height and not st.trie.frozen]
        for slot, st in sorted(due, key=lambda x: x[0]):
            claim = reg.submit_claim(st, height, self.session_p[slot])
            self.pending_claims.append((claim, st, slot))
        still = []
        for claim, st, slot in self.pending_claims:
            if claim.claim_height >= height:
                still.append((claim, st, slot))
                continue
            target = reg.challenge(claim, block_hash(self.seed, height), height)
            if claim.root.sum > 0:
                reg.submit_proof(claim, build_reveal(st, claim, target), height)
            s = reg.settle(claim)
            burn_key = (st.session.service_id, st.session.app_id, st.session.start_height)
            self.session_burn[burn_key] += s.burned
            allowance = self.cfg.session.app_stake * self.cfg.session.ttrm
            if self.session_burn[burn_key] > allowance and burn_key not in self.breached:
                self.breached.add(burn_key)
                self.log.append(
                    "margin-breach",
                    service=burn_key[0],
                    app=burn_key[1],
                    session_start=burn_key[2],
                    burned=self.session_burn[burn_key],
                    allowance=allowance,
                )
        self.pending_claims = still

    def pending(self) -> bool:
        return bool(self.pending_claims) or any(not st.trie.frozen for st in self.states.values())


def run_simulation(trace: Sequence[TraceBlock], config: Config | None = None, mode: str | None = None) -> SimResult:
    """Drive the trace block by block and record claims and errors."""
    cfg = (config or Config()).validate()
    mode = mode or cfg.sim.mode
    if mode not in ("fast", "full"):
        raise ValueError(f"unknown mode {mode!r}")
    if not trace:
        raise ValueError("trace is empty")
    dc = cfg.difficulty
    if mode == "full" and dc.fixed_probability is None:
        if dc.retarget_timing != "start" or dc.update_interval % cfg.session.window:
            raise ValueError(
                "full mode needs one difficulty per session: use retarget_timing 'start' "
                "with update_interval a multiple of session.window, or a fixed probability"
            )
    sim = _Simulator(cfg, mode)
    T = dc.target_claims
    by_service: dict[str, list[TraceBlock]] = defaultdict(list)
    for b in trace:
        by_service[b.service_id].append(b)
    records: list[BlockRecord] = []
    observations: dict[str, list[BlockObservation]] = {}
    controllers = {
        svc: DifficultyState(T, dc.alpha, dc.update_interval, retarget_timing=dc.retarget_timing) for svc in by_service
    }
    heights = sorted({b.height for b in trace})
    by_height: dict[int, list[TraceBlock]] = defaultdict(list)
    for b in trace:
        by_height[b.height].append(b)
    for h in heights:
        for block in sorted(by_height[h], key=lambda b: b.service_id):
            ctl = controllers[block.service_id]
            if dc.fixed_probability is not None:
                ctl.probability = float(dc.fixed_probability)
            p = ctl.probability
            claims = sim.run_block(block, p)
            obs = ctl.observe_block(claims)
            observations.setdefault(block.service_id, []).append(obs)
            est = claims / p
            records.append(
                BlockRecord(
                    height=h,
                    service_id=block.service_id,
                    relay_count=block.relay_count,
                    probability=p,
                    claims=claims,
                    estimated_relays=est,
                    r_ema=obs.r_ema,
                    target_error_pct=target_error_pct(claims, T),
                    volume_error_pct=volume_error_pct(est, block.relay_count),
                )
            )
        if mode == "full":
            sim.lifecycle(h)
    if mode == "full":
        h = heights[-1] + 1
        while sim.pending():
            sim.lifecycle(h)
            h += 1
    meta = {
        **cfg.metadata(),
        "mode": mode,
        "warmup_blocks": warmup_blocks(dc.alpha),
        "retarget_timing": dc.retarget_timing,
    }
    return SimResult(records, observations, sim.log, meta, sim.registry, sim.cell_claims)


# -- metrics --------------------------------------------------------------------


def warmup_blocks(alpha: float) -> int:
    return math.ceil(3 / alpha)


@dataclass(frozen=True)
class Aggregates:
    blocks: int
    skipped_blocks: int
    min_claims: int
    max_claims: int
    mean_target_error_pct: float
    min_target_error_pct: float
    max_target_error_pct: float
    accumulated_target_error: float
    accumulated_target_error_per_block: float
    mean_volume_error_pct: float
    min_volume_error_pct: float
    max_volume_error_pct: float

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def compute_metrics(
    records: Sequence[BlockRecord], target: float, *, skip: int = 0, service_id: str | None = None
) -> Aggregates:
    """Aggregate per-block errors, ignoring the first ``skip`` blocks.

    ``accumulated_target_error`` is the total ``sum(C - T)`` over the window
    and ``accumulated_target_error_per_block`` that total over the window
    length. Blocks with no true traffic are left out of volume statistics.
    """
    rows = [r for r in records if service_id is None or r.service_id == service_id][skip:]
    if not rows:
        raise ValueError("no blocks left to aggregate")
    claims = np.array([r.claims for r in rows], dtype=float)
    terr = 100.0 * (claims - target) / target
    est = np.array([r.estimated_relays for r in rows], dtype=float)
    truth = np.array([r.relay_count for r in rows], dtype=float)
    has = truth > 0
    verr = 100.0 * (est[has] - truth[has]) / truth[has] if has.any() else np.array([0.0])
    acc = float((claims - target).sum())
    return Aggregates(
        blocks=len(rows),
        skipped_blocks=skip,
        min_claims=int(claims.min()),
        max_claims=int(claims.max()),
        mean_target_error_pct=float(terr.mean()),
        min_target_error_pct=float(terr.min()),
        max_target_error_pct=float(terr.max()),
        accumulated_target_error=acc,
        accumulated_target_error_per_block=acc / len(rows),
        mean_volume_error_pct=float(verr.mean()),
        min_volume_error_pct=float(verr.min()),
        max_volume_error_pct=float(verr.max()),
    )


METRIC_COLUMNS = (
    "height",
    "service_id",
    "relay_count",
    "probability",
    "claims",
    "estimated_relays",
    "r_ema",
    "target_error_pct",
    "volume_error_pct",
)


def write_metrics_csv(records: Iterable[BlockRecord], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRIC_COLUMNS)
        for r in records:
            w.writerow(
                [
                    r.height,
                    r.service_id,
                    r.relay_count,
                    repr(r.probability),
                    r.claims,
                    repr(r.estimated_relays),
                    repr(r.r_ema),
                    repr(r.target_error_pct),
                    repr(r.volume_error_pct),
                ]
            )
