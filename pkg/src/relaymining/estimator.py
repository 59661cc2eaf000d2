"""Relay volume estimation from sampled claims, and the dApp bias/variability
Monte Carlo grid.

Claims are binomial in the relay count, ``C ~ Binomial(R, p)``, so
``C / p`` is an unbiased estimate of ``R``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Sequence

import numpy as np

DEFAULT_DIFFICULTIES = (1.25, 2.0, 5.0, 10.0, 20.0, 50.0, 100.0, 200.0, 500.0, 1000.0)
DEFAULT_PARTICIPATIONS = (0.001, 0.002, 0.005, 0.01, 0.02, 0.05, 0.1)


class InvalidProbabilityError(ValueError):
    pass


@dataclass(frozen=True)
class VolumeEstimate:
    claims: int
    probability: float
    relays: float


def estimate_volume(claims: int, probability: float) -> VolumeEstimate:
    if not 0 < probability <= 1:
        raise InvalidProbabilityError(f"probability must be in (0, 1], got {probability!r}")
    if claims < 0:
        raise ValueError("claims must be non-negative")
    return VolumeEstimate(claims, probability, claims / probability)


@dataclass(frozen=True)
class BiasGridCell:
    difficulty: float
    participation: float
    draws: int
    relays_per_block: float
    mean_estimate: float
    bias_pct: float
    variability_pct: float
    relative_variability_pct: float
    degenerate: bool


def bias_pct(mean_estimate: float, true_volume: float) -> float:
    return (mean_estimate - true_volume) / true_volume * 100


def variability_pct(estimates: np.ndarray, mean_estimate: float) -> float:
    """Two standard deviations of the per-draw estimates, times 100."""
    return 2 * float(np.sqrt(np.mean((estimates - mean_estimate) ** 2))) * 100


def run_bias_experiment(
    difficulties: Sequence[float] = DEFAULT_DIFFICULTIES,
    participations: Sequence[float] = DEFAULT_PARTICIPATIONS,
    *,
    target_claims: float = 10_000,
    draws: int = 10_000,
    seed: int = 0,
    relays_per_block: float | None = None,
) -> list[BiasGridCell]:
    """Estimate bias and spread of one dApp's volume estimate over a grid.

    For difficulty ``d`` the chain carries ``R`` relays per block (by
    default ``T * d``, the volume at which the controller settles on
    ``T`` claims). Each of those relays belongs to the dApp with
    probability ``v`` and collides with probability ``1 / d``, so a draw of
    the dApp's claims is ``Binomial(R, v / d)`` and its estimate is that
    count times ``d``. Every cell gets its own seed stream, keyed by its
    grid position.
    """
    if not difficulties or not participations:
        raise ValueError("grid must be non-empty")
    if draws < 1:
        raise ValueError("need at least one draw per cell")
    cells = []
    for i, d in enumerate(difficulties):
        if d < 1:
            raise ValueError(f"difficulty must be >= 1, got {d}")
        p = 1.0 / d
        R = target_claims * d if relays_per_block is None else relays_per_block
        n_relays = int(round(R))
        for j, v in enumerate(participations):
            if not 0 < v <= 1:
                raise ValueError(f"participation must be in (0, 1], got {v}")
            rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(i, j)))
            x = rng.binomial(n_relays, v * p, size=draws) * d
            truth = v * n_relays
            mean = float(x.mean())
            var = variability_pct(x, mean)
            rel = var / mean if mean > 0 else float("inf")
            cells.append(
                BiasGridCell(
                    difficulty=float(d),
                    participation=float(v),
                    draws=draws,
                    relays_per_block=float(n_relays),
                    mean_estimate=mean,
                    bias_pct=bias_pct(mean, truth),
                    variability_pct=var,
                    relative_variability_pct=rel,
                    degenerate=truth < 1,
                )
            )
    return cells


GRID_COLUMNS = (
    "difficulty",
    "participation",
    "bias_pct",
    "variability_pct",
    "relative_variability_pct",
    "draws",
    "relays_per_block",
    "flag",
)


def write_grid_csv(cells: Sequence[BiasGridCell], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(GRID_COLUMNS)
        for c in cells:
            w.writerow(
                [
                    repr(c.difficulty),
                    repr(c.participation),
                    repr(c.bias_pct),
                    repr(c.variability_pct),
                    repr(c.relative_variability_pct),
                    c.draws,
                    repr(c.relays_per_block),
                    "degenerate" if c.degenerate else "",
                ]
            )
