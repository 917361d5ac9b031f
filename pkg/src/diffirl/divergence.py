"""f-divergence generators and the learning-signal transform h_f(x) = f(x) - x f'(x)."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

ArrayLike = float | np.ndarray


@dataclass(frozen=True)
class FGenerator:
    """Convex generator f with f(1) = 0.

    ``f_at_zero`` is the right limit f(0+), and ``slope_at_inf`` is
    lim_{x->inf} f(x)/x. Both are needed to give meaning to terms of
    sum_i p_i f(q_i / p_i) where q_i or p_i vanishes.
    """

    kind: str
    f: Callable[[np.ndarray], np.ndarray]
    fprime: Callable[[np.ndarray], np.ndarray]
    f_at_zero: float
    slope_at_inf: float

    def h(self, x: np.ndarray) -> np.ndarray:
        return self.f(x) - x * self.fprime(x)


KL = FGenerator(
    kind="kl",
    f=lambda x: x * np.log(x),
    fprime=lambda x: np.log(x) + 1.0,
    f_at_zero=0.0,
    slope_at_inf=math.inf,
)

RKL = FGenerator(
    kind="rkl",
    f=lambda x: -np.log(x),
    fprime=lambda x: -1.0 / x,
    f_at_zero=math.inf,
    slope_at_inf=0.0,
)

_REGISTRY: dict[str, FGenerator] = {"kl": KL, "rkl": RKL}


def register(gen: FGenerator) -> None:
    if gen.kind in _REGISTRY:
        raise ValueError(f"divergence kind {gen.kind!r} already registered")
    _REGISTRY[gen.kind] = gen


def get_generator(kind: str | FGenerator) -> FGenerator:
    if isinstance(kind, FGenerator):
        return kind
    try:
        return _REGISTRY[kind.lower()]
    except KeyError:
        raise ValueError(f"unknown divergence kind {kind!r}; expected one of {sorted(_REGISTRY)}") from None


def available_kinds() -> list[str]:
    return sorted(_REGISTRY)


def _positive(x: ArrayLike) -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if np.any(~(arr > 0)):
        raise ValueError("f-divergence generators are only defined for x > 0")
    return arr


def _scalar_or_array(arr: np.ndarray) -> ArrayLike:
    return float(arr) if arr.ndim == 0 else arr


def f_value(gen: str | FGenerator, x: ArrayLike) -> ArrayLike:
    gen = get_generator(gen)
    return _scalar_or_array(gen.f(_positive(x)))


def h_value(gen: str | FGenerator, x: ArrayLike) -> ArrayLike:
    gen = get_generator(gen)
    return _scalar_or_array(gen.h(_positive(x)))


def divergence_discrete(gen: str | FGenerator, q, p, atol: float = 1e-9) -> float:
    """D_f(q || p) = sum_i p_i f(q_i / p_i) for probability vectors.

    Zero entries use the limits of the generator: a q_i = 0 term contributes
    p_i f(0+), and a p_i = 0 term contributes q_i lim f(x)/x. The result is
    ``math.inf`` when either limit is infinite and carries mass.
    """
    gen = get_generator(gen)
    q = np.asarray(q, dtype=float)
    p = np.asarray(p, dtype=float)
    if q.shape != p.shape or q.ndim != 1:
        raise ValueError("q and p must be 1-D vectors of the same length")
    if np.any(q < 0) or np.any(p < 0):
        raise ValueError("probability vectors must be non-negative")
    if abs(q.sum() - 1.0) > atol or abs(p.sum() - 1.0) > atol:
        raise ValueError("probability vectors must sum to 1")

    both = (q > 0) & (p > 0)
    total = float(np.sum(p[both] * gen.f(q[both] / p[both])))

    q_only = (q > 0) & (p == 0)
    if np.any(q_only):
        mass = float(q[q_only].sum())
        total += math.inf if math.isinf(gen.slope_at_inf) else mass * gen.slope_at_inf
    p_only = (p > 0) & (q == 0)
    if np.any(p_only):
        mass = float(p[p_only].sum())
        total += math.inf if math.isinf(gen.f_at_zero) else mass * gen.f_at_zero
    return total
