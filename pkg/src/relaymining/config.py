"""Run configuration: defaults, strict JSON loading and validation."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field

from . import __version__
from .estimator import DEFAULT_DIFFICULTIES, DEFAULT_PARTICIPATIONS


class ConfigError(ValueError):
    def __init__(self, problems: list[str]):
        self.problems = problems
        super().__init__("invalid config: " + "; ".join(problems))


@dataclass
class DifficultyConfig:
    target_claims: int = 10_000
    alpha: float = 0.1
    update_interval: int = 4
    retarget_timing: str = "start"
    fixed_probability: float | None = None


@dataclass
class SessionConfig:
    servicers_per_session: int = 12
    window: int = 4
    ttrm: int = 1000
    relay_accuracy: float = 0.2
    app_stake: int = 1_000_000


@dataclass
class ClaimProofConfig:
    claim_window: int = 4
    proof_window: int = 4
    reward_rate: float = 1.0


@dataclass
class EstimatorConfig:
    difficulties: list[float] = field(default_factory=lambda: list(DEFAULT_DIFFICULTIES))
    participations: list[float] = field(default_factory=lambda: list(DEFAULT_PARTICIPATIONS))
    draws: int = 10_000
    relays_per_block: float | None = None


@dataclass
class SimConfig:
    mode: str = "fast"
    seed: int = 0
    servicers: int = 24
    apps: dict[str, float] = field(default_factory=lambda: {"app-0": 1.0})
    key_width: int = 256


@dataclass
class Config:
    difficulty: DifficultyConfig = field(default_factory=DifficultyConfig)
    session: SessionConfig = field(default_factory=SessionConfig)
    claimproof: ClaimProofConfig = field(default_factory=ClaimProofConfig)
    estimator: EstimatorConfig = field(default_factory=EstimatorConfig)
    sim: SimConfig = field(default_factory=SimConfig)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def config_hash(self) -> str:
        canon = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()

    def metadata(self) -> dict:
        return {"config_hash": self.config_hash(), "seed": self.sim.seed, "version": __version__}

    @classmethod
    def from_dict(cls, data: dict) -> "Config":
        """Build a config from a complete mapping; every field is required."""
        problems: list[str] = []
        if not isinstance(data, dict):
            raise ConfigError(["config root must be an object"])
        sections = {}
        for f in dataclasses.fields(cls):
            sub = data.get(f.name)
            if sub is None:
                problems.append(f"missing section: {f.name}")
                continue
            if not isinstance(sub, dict):
                problems.append(f"{f.name}: must be an object")
                continue
            sub_cls = f.default_factory().__class__
            kwargs = {}
            for sf in dataclasses.fields(sub_cls):
                if sf.name not in sub:
                    problems.append(f"missing field: {f.name}.{sf.name}")
                else:
                    kwargs[sf.name] = sub[sf.name]
            for extra in sorted(set(sub) - {sf.name for sf in dataclasses.fields(sub_cls)}):
                problems.append(f"unknown field: {f.name}.{extra}")
            sections[f.name] = kwargs
        for extra in sorted(set(data) - {f.name for f in dataclasses.fields(cls)}):
            problems.append(f"unknown section: {extra}")
        if problems:
            raise ConfigError(problems)
        cfg = cls(
            difficulty=DifficultyConfig(**sections["difficulty"]),
            session=SessionConfig(**sections["session"]),
            claimproof=ClaimProofConfig(**sections["claimproof"]),
            estimator=EstimatorConfig(**sections["estimator"]),
            sim=SimConfig(**sections["sim"]),
        )
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> "Config":
        with open(path) as fh:
            try:
                data = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError([f"not valid JSON: {exc}"]) from exc
        return cls.from_dict(data)

    def validate(self) -> "Config":
        problems: list[str] = []

        def need(cond, msg):
            if not cond:
                problems.append(msg)

        def is_int(x):
            return isinstance(x, int) and not isinstance(x, bool)

        def is_num(x):
            return isinstance(x, (int, float)) and not isinstance(x, bool)

        d = self.difficulty
        need(is_num(d.target_claims) and d.target_claims > 0, "difficulty.target_claims: must be > 0")
        need(is_num(d.alpha) and 0 < d.alpha <= 1, "difficulty.alpha: must be in (0, 1]")
        need(is_int(d.update_interval) and d.update_interval >= 1, "difficulty.update_interval: must be an integer >= 1")
        need(d.retarget_timing in ("start", "end"), "difficulty.retarget_timing: must be 'start' or 'end'")
        need(
            d.fixed_probability is None or (is_num(d.fixed_probability) and 0 < d.fixed_probability <= 1),
            "difficulty.fixed_probability: must be null or in (0, 1]",
        )
        s = self.session
        need(is_int(s.servicers_per_session) and s.servicers_per_session >= 1, "session.servicers_per_session: must be an integer >= 1")
        need(is_int(s.window) and s.window >= 1, "session.window: must be an integer >= 1")
        need(is_num(s.ttrm) and s.ttrm > 0, "session.ttrm: must be > 0")
        need(is_num(s.relay_accuracy) and s.relay_accuracy >= 0, "session.relay_accuracy: must be >= 0")
        need(is_num(s.app_stake) and s.app_stake > 0, "session.app_stake: must be > 0")
        c = self.claimproof
        need(is_int(c.claim_window) and c.claim_window >= 1, "claimproof.claim_window: must be an integer >= 1")
        need(is_int(c.proof_window) and c.proof_window >= 1, "claimproof.proof_window: must be an integer >= 1")
        need(is_num(c.reward_rate) and c.reward_rate >= 0, "claimproof.reward_rate: must be >= 0")
        e = self.estimator
        need(
            isinstance(e.difficulties, list) and e.difficulties and all(is_num(x) and x >= 1 for x in e.difficulties),
            "estimator.difficulties: must be a non-empty list of numbers >= 1",
        )
        need(
            isinstance(e.participations, list)
            and e.participations
            and all(is_num(x) and 0 < x <= 1 for x in e.participations),
            "estimator.participations: must be a non-empty list of numbers in (0, 1]",
        )
        need(is_int(e.draws) and e.draws >= 1, "estimator.draws: must be an integer >= 1")
        need(
            e.relays_per_block is None or (is_num(e.relays_per_block) and e.relays_per_block > 0),
            "estimator.relays_per_block: must be null or > 0",
        )
        m = self.sim
        need(m.mode in ("fast", "full"), "sim.mode: must be 'fast' or 'full'")
        need(is_int(m.seed) and m.seed >= 0, "sim.seed: must be a non-negative integer")
        need(is_int(m.servicers) and m.servicers >= 1, "sim.servicers: must be an integer >= 1")
        need(
            is_int(m.servicers) and is_int(s.servicers_per_session) and m.servicers >= s.servicers_per_session,
            "sim.servicers: must be >= session.servicers_per_session",
        )
        need(
            isinstance(m.apps, dict) and m.apps and all(is_num(w) and w > 0 for w in m.apps.values()),
            "sim.apps: must map app ids to positive weights",
        )
        need(is_int(m.key_width) and 1 <= m.key_width <= 256, "sim.key_width: must be in [1, 256]")
        if problems:
            raise ConfigError(problems)
        return self
