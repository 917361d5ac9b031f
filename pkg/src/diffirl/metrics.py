"""Sample-quality and cost metrics at desk scale."""

from __future__ import annotations

import csv
import io
from dataclasses import asdict, dataclass, fields

import numpy as np
from scipy.spatial.distance import cdist

from .target import GaussianMixture, class_posterior

HIST_SMOOTHING = 1e-6
CHUNK = 512


def _as2d(X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    return X[:, None] if X.ndim == 1 else X


def _mean_dist(X: np.ndarray, Y: np.ndarray) -> float:
    total = 0.0
    for lo in range(0, X.shape[0], CHUNK):
        total += float(cdist(X[lo : lo + CHUNK], Y).sum())
    return total / (X.shape[0] * Y.shape[0])


def _mean_within(X: np.ndarray, unbiased: bool) -> float:
    n = X.shape[0]
    total = 0.0
    for lo in range(0, n, CHUNK):
        total += float(cdist(X[lo : lo + CHUNK], X).sum())
    return total / (n * (n - 1) if unbiased else n * n)


def energy_distance(X, Y, unbiased: bool = True) -> float:
    """2 E|x - y| - E|x - x'| - E|y - y'|.

    The within-sample terms are U-statistics by default (``unbiased=False``
    gives the plug-in V-statistic, which is exactly 0 for X = Y).
    """
    X, Y = _as2d(X), _as2d(Y)
    if X.shape[0] < 2 or Y.shape[0] < 2:
        raise ValueError("energy distance needs at least two samples on each side")
    # fixed argument order so that swapping X and Y gives the same float
    if (X.shape[0], X.tobytes()) > (Y.shape[0], Y.tobytes()):
        X, Y = Y, X
    return 2.0 * _mean_dist(X, Y) - (_mean_within(X, unbiased) + _mean_within(Y, unbiased))


def shared_edges(X, Y, bins: int, range_=None) -> list[np.ndarray]:
    X, Y = _as2d(X), _as2d(Y)
    if range_ is None:
        both = np.concatenate([X, Y])
        range_ = list(zip(both.min(axis=0), both.max(axis=0)))
    elif np.ndim(range_[0]) == 0:
        range_ = [tuple(range_)] * X.shape[1]
    return [np.linspace(lo, hi if hi > lo else lo + 1.0, bins + 1) for lo, hi in range_]


def smoothed_histogram(X, edges, smoothing: float = HIST_SMOOTHING) -> np.ndarray:
    h, _ = np.histogramdd(_as2d(X), bins=edges)
    p = h.ravel() / max(h.sum(), 1.0) + smoothing
    return p / p.sum()


def histogram_kl(X, Y, bins: int = 50, range_=None, smoothing: float = HIST_SMOOTHING) -> float:
    """KL(hist X || hist Y) on a shared grid, each bin smoothed by ``smoothing``."""
    if smoothing <= 0:
        raise ValueError("smoothing must be positive")
    edges = shared_edges(X, Y, bins, range_)
    p = smoothed_histogram(X, edges, smoothing)
    q = smoothed_histogram(Y, edges, smoothing)
    return float(max(np.sum(p * (np.log(p) - np.log(q))), 0.0))


def class_histogram(target: GaussianMixture, X) -> np.ndarray:
    """Soft class frequencies: mean of the sigma = 0 component posterior."""
    return np.asarray(class_posterior(target, _as2d(X), 0.0)).mean(axis=0)


def class_tv(p, q) -> float:
    return 0.5 * float(np.sum(np.abs(np.asarray(p, float) - np.asarray(q, float))))


def mean_nfe(trajectories) -> float:
    if hasattr(trajectories, "total_nfe") and np.ndim(trajectories.total_nfe) == 1:
        totals = np.asarray(trajectories.total_nfe)
    else:
        totals = np.array([tr.total_nfe for tr in trajectories])
    if totals.size == 0:
        raise ValueError("mean NFE of an empty trajectory set is undefined")
    return float(totals.mean())


@dataclass
class MetricReport:
    energy_distance: float
    histogram_kl: float
    class_tv: float
    mean_nfe: float
    n_samples: int

    def __post_init__(self):
        vals = [self.energy_distance, self.histogram_kl, self.class_tv, self.mean_nfe]
        if not np.all(np.isfinite(vals)):
            raise ValueError(f"non-finite metric in {self}")

    @classmethod
    def columns(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    def row(self) -> list[str]:
        return [repr(v) if isinstance(v, float) else str(v) for v in asdict(self).values()]

    def to_text(self) -> str:
        return "\n".join(f"{k} = {v}" for k, v in zip(self.columns(), self.row())) + "\n"


def reports_to_csv(reports, extra: dict | None = None) -> str:
    """One row per report; ``extra`` maps leading column names to per-row values."""
    extra = extra or {}
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([*extra, *MetricReport.columns()])
    for i, r in enumerate(reports):
        w.writerow([*(str(v[i]) for v in extra.values()), *r.row()])
    return buf.getvalue()


def evaluate(batch, target: GaussianMixture, expert_samples, bins: int = 50) -> MetricReport:
    X = batch.final_x
    exp = _as2d(expert_samples)
    return MetricReport(
        energy_distance=energy_distance(X, exp),
        histogram_kl=histogram_kl(exp, X, bins),
        class_tv=class_tv(class_histogram(target, X), target.weights),
        mean_nfe=mean_nfe(batch),
        n_samples=int(X.shape[0]),
    )
