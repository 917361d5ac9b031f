"""Noise-level weights of occupancy measures and the assembled ratio mu_E / mu_theta.

Level-weight vectors are indexed by level subscript: ``w[i]`` is the mass on
Sigma_i, so ``w[0]`` is the terminal mass.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np


@dataclass(frozen=True)
class LevelWeights:
    weights: np.ndarray
    counts: np.ndarray | None = None

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
            raise ValueError("level weights must be non-negative and sum to 1")
        object.__setattr__(self, "weights", w)

    def __getitem__(self, level):
        return self.weights[level]

    def __len__(self) -> int:
        return self.weights.size

    @property
    def terminal(self) -> float:
        return float(self.weights[0])

    def as_fractions(self) -> list[Fraction]:
        if self.counts is None:
            raise ValueError("exact fractions are only available for counted weights")
        total = int(self.counts.sum())
        return [Fraction(int(c), total) for c in self.counts]


def estimate_level_weights(batch, N: int | None = None) -> LevelWeights:
    """Fraction of all visits to s_1..s_T spent at each level.

    ``batch`` is a TrajectoryBatch, a list of Trajectory, or an integer array
    of visited levels [n, T].
    """
    if hasattr(batch, "level") and hasattr(batch, "actions"):
        levels = np.asarray(batch.level)[..., 1:]
    elif isinstance(batch, (list, tuple)) and batch and hasattr(batch[0], "level"):
        levels = np.stack([np.asarray(tr.level)[1:] for tr in batch])
    else:
        levels = np.asarray(batch, dtype=int)
    if levels.size == 0:
        raise ValueError("need at least one visited state")
    if N is None:
        N = int(levels.max())
    counts = np.bincount(levels.ravel(), minlength=N + 1)
    return LevelWeights(counts / counts.sum(), counts)


def expert_level_weights(N: int, alpha: float) -> LevelWeights:
    """Mass alpha on Sigma_0 and (1 - alpha) / N on each of Sigma_1..Sigma_N."""
    if not 0.0 < alpha < 1.0:
        raise ValueError("terminal mass alpha must lie in (0, 1)")
    w = np.full(N + 1, (1.0 - alpha) / N)
    w[0] = alpha
    return LevelWeights(w)


def default_terminal_mass(T: int, N: int) -> float:
    """Terminal mass of the straight-descent sampler plus a 0.1 margin, capped at 0.9."""
    return min((T - N + 1) / T + 0.1, 0.9)


def level_weight_ratio(w_E: LevelWeights, w_theta: LevelWeights, level) -> np.ndarray:
    level = np.asarray(level, dtype=int)
    wt = w_theta.weights[level]
    if np.any(wt <= 0):
        bad = np.unique(level[wt <= 0]) if level.ndim else level
        raise ValueError(f"level(s) {bad} were never visited by the policy")
    return w_E.weights[level] / wt


def occupancy_ratio(w_E: LevelWeights, w_theta: LevelWeights, disc, x, level, sigma=None, clamp=(1e-3, 1e3)):
    """(w_E / w_theta at the level) * discriminator ratio, clamped after the product.

    ``disc`` needs a ``conditional_ratio(x, sigma)`` method; ``sigma`` defaults to
    the discriminator's schedule lookup of ``level``.
    """
    level_arr = np.atleast_1d(np.asarray(level, dtype=int))
    wr = level_weight_ratio(w_E, w_theta, level_arr)
    if sigma is None:
        sigma = disc.sigmas[level_arr]
    x2 = np.atleast_2d(np.asarray(x, dtype=float))
    r = np.clip(wr * disc.conditional_ratio(x2, sigma), *clamp)
    return float(r[0]) if np.ndim(level) == 0 else r
