"""Per-service EMA difficulty controller.

Every block the controller turns observed claims ``C`` into a volume
estimate ``R = C / p`` and folds it into an exponential moving average.
Every ``U`` blocks the collision probability is retargeted to
``min(1, T / R_ema)`` so that expected claims per block track ``T``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Iterable

from .primitives import MIN_PROBABILITY, Difficulty

RETARGET_TIMINGS = ("start", "end")


@dataclass(frozen=True)
class BlockObservation:
    height: int
    claims: int
    probability: float
    relays: float
    r_ema: float
    next_probability: float


@dataclass
class DifficultyState:
    """Controller state for one service.

    ``retarget_timing`` picks when a retarget lands relative to the update
    height ``h`` (``h % U == 0``):

    ``"start"`` (default)
        ``p`` is recomputed from the EMA of blocks ``< h`` and is already in
        force for the claims of block ``h``.
    ``"end"``
        literal loop order: block ``h``'s claims are folded into the EMA
        first and the new ``p`` applies from block ``h + 1``.
    """

    target_claims: float = 10_000
    alpha: float = 0.1
    update_interval: int = 4
    r_ema: float = 0.0
    probability: float = 1.0
    height: int = 0
    retarget_timing: str = "start"

    def __post_init__(self):
        if self.target_claims <= 0:
            raise ValueError("target claims must be positive")
        if not 0 < self.alpha <= 1:
            raise ValueError("alpha must be in (0, 1]")
        if self.update_interval < 1:
            raise ValueError("update interval must be >= 1")
        if self.r_ema < 0:
            raise ValueError("r_ema must be non-negative")
        if self.retarget_timing not in RETARGET_TIMINGS:
            raise ValueError(f"retarget timing must be one of {RETARGET_TIMINGS}")
        self.probability = min(1.0, max(MIN_PROBABILITY, float(self.probability)))

    @property
    def difficulty(self) -> Difficulty:
        return Difficulty(self.probability)

    def retarget(self) -> float:
        """Set ``p`` from the current EMA and return it."""
        if self.r_ema <= 0:
            # No observed volume: treat as below target.
            self.probability = 1.0
        else:
            self.probability = min(1.0, max(MIN_PROBABILITY, self.target_claims / self.r_ema))
        return self.probability

    def observe_block(self, claims: int) -> BlockObservation:
        """Fold one block's claim count into the controller."""
        if claims < 0:
            raise ValueError("claims must be non-negative")
        h = self.height
        p = self.probability
        relays = claims / p
        self.r_ema = self.alpha * relays + (1 - self.alpha) * self.r_ema
        if self.retarget_timing == "end":
            if h % self.update_interval == 0:
                self.retarget()
            self.height = h + 1
        else:
            self.height = h + 1
            if self.height % self.update_interval == 0:
                self.retarget()
        return BlockObservation(h, claims, p, relays, self.r_ema, self.probability)


def write_series_csv(observations: Iterable[BlockObservation], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["height", "claims", "relays", "r_ema", "probability"])
        for o in observations:
            w.writerow([o.height, o.claims, repr(o.relays), repr(o.r_ema), repr(o.probability)])
