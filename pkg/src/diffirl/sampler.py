"""Noise schedules and sampler update operators.

All operators accept a batch of points ``x`` with shape [n, d] (or a single
point [d]) and per-row noise levels, and return ``(x_new, nfe)`` where nfe
counts denoiser invocations. The PF-ODE slope is d = (x - D(x, sigma)) / sigma.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .target import GaussianMixture, denoise

Denoiser = Callable[[np.ndarray, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class NoiseSchedule:
    """Levels stored high to low: [Sigma_N, ..., Sigma_1, Sigma_0 = 0]."""

    levels: np.ndarray

    def __post_init__(self):
        lv = np.asarray(self.levels, dtype=float).reshape(-1)
        if lv.size < 2:
            raise ValueError("a schedule needs at least one nonzero level plus Sigma_0")
        if lv[-1] != 0.0:
            raise ValueError("the last level must be exactly 0")
        if np.any(np.diff(lv) >= 0):
            raise ValueError("levels must be strictly decreasing")
        lv.setflags(write=False)
        object.__setattr__(self, "levels", lv)

    @property
    def N(self) -> int:
        return self.levels.size - 1

    @property
    def sigmas(self) -> np.ndarray:
        """Levels indexed by their subscript: ``sigmas[i] == Sigma_i``."""
        return self.levels[::-1]

    def sigma(self, i):
        return self.sigmas[i]

    def check_prior(self, target: GaussianMixture, factor: float = 10.0) -> None:
        if self.levels[0] < factor * target.max_std:
            raise ValueError(
                f"Sigma_N = {self.levels[0]:g} is below {factor:g} x max component std ({target.max_std:g})"
            )

    def fingerprint(self) -> str:
        return ",".join(repr(float(s)) for s in self.levels)


def build_schedule(kind: str, N: int, sigma_min: float, sigma_max: float, rho: float = 7.0) -> NoiseSchedule:
    """Power (EDM-style, rho) or geometric schedule with Sigma_N = sigma_max, Sigma_1 = sigma_min."""
    if N < 1:
        raise ValueError("N must be at least 1")
    if not 0 < sigma_min < sigma_max:
        raise ValueError("need 0 < sigma_min < sigma_max")
    if rho <= 0:
        raise ValueError("rho must be positive")
    if N == 1:
        nonzero = np.array([sigma_max])
    elif kind == "power":
        frac = np.arange(N) / (N - 1)
        nonzero = (sigma_max ** (1 / rho) + frac * (sigma_min ** (1 / rho) - sigma_max ** (1 / rho))) ** rho
        nonzero[0], nonzero[-1] = sigma_max, sigma_min
    elif kind == "geometric":
        nonzero = np.geomspace(sigma_max, sigma_min, N)
    else:
        raise ValueError(f"unknown schedule kind {kind!r}")
    return NoiseSchedule(np.append(nonzero, 0.0))


def _rows(x):
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    return np.atleast_2d(x), single


def _per_row(v, n: int) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    return np.full(n, float(v)) if v.ndim == 0 else v.reshape(n)


def _finish(x2: np.ndarray, nfe: np.ndarray, single: bool, scalar_nfe: bool):
    if single:
        return x2[0], int(nfe[0])
    return x2, (int(nfe[0]) if scalar_nfe and np.all(nfe == nfe[0]) else nfe)


def _slope(denoiser: Denoiser, x: np.ndarray, sigma: np.ndarray) -> np.ndarray:
    return (x - denoiser(x, sigma)) / sigma[:, None]


def _check_order(s_from: np.ndarray, s_to: np.ndarray) -> None:
    if np.any(~(s_from > 0)):
        raise ValueError("sigma_from must be positive: the PF-ODE slope is undefined at sigma = 0")
    if np.any(s_to < 0) or np.any(s_to > s_from):
        raise ValueError("need sigma_from >= sigma_to >= 0")


def euler_step(denoiser: Denoiser, x, sigma_from, sigma_to):
    x2, single = _rows(x)
    n = x2.shape[0]
    s_from, s_to = _per_row(sigma_from, n), _per_row(sigma_to, n)
    _check_order(s_from, s_to)
    out = x2 + (s_to - s_from)[:, None] * _slope(denoiser, x2, s_from)
    return _finish(out, np.ones(n, dtype=int), single, np.ndim(sigma_to) == 0)


def heun_step(denoiser: Denoiser, x, sigma_from, sigma_to):
    """Second-order step; rows landing on sigma_to = 0 keep the Euler result."""
    x2, single = _rows(x)
    n = x2.shape[0]
    s_from, s_to = _per_row(sigma_from, n), _per_row(sigma_to, n)
    _check_order(s_from, s_to)
    h = (s_to - s_from)[:, None]
    d1 = _slope(denoiser, x2, s_from)
    out = x2 + h * d1
    nfe = np.ones(n, dtype=int)
    corr = s_to > 0
    if np.any(corr):
        d2 = _slope(denoiser, out[corr], s_to[corr])
        out[corr] = x2[corr] + h[corr] * 0.5 * (d1[corr] + d2)
        nfe[corr] = 2
    return _finish(out, nfe, single, np.ndim(sigma_to) == 0)


def edm_stoch_step(denoiser: Denoiser, x, sigma_from, sigma_to, gamma, rng=None, noise=None):
    """Raise the noise to sigma_hat = sigma_from (1 + gamma), then take a Heun step.

    Rows with gamma = 0 are left untouched before the Heun step, and when every
    row has gamma = 0 no randomness is consumed.
    """
    x2, single = _rows(x)
    n = x2.shape[0]
    s_from = _per_row(sigma_from, n)
    g = _per_row(gamma, n)
    if np.any(g < 0):
        raise ValueError("gamma must be non-negative")
    s_hat = s_from * (1.0 + g)
    if np.any(g > 0):
        if noise is None:
            if rng is None:
                raise ValueError("gamma > 0 requires an rng or pre-drawn noise")
            noise = rng.standard_normal(x2.shape)
        noise = np.asarray(noise, dtype=float).reshape(x2.shape)
        std = np.sqrt(s_hat**2 - s_from**2)
        x2 = x2 + std[:, None] * noise
    out, nfe = heun_step(denoiser, x2, s_hat, sigma_to)
    if single:
        return out[0], int(np.atleast_1d(nfe)[0])
    return out, nfe


def guided_denoise(target: GaussianMixture, x, sigma, cond, omega):
    """Classifier-free guidance: (1 + omega) D(x | c) - omega D(x)."""
    omega = np.asarray(omega, dtype=float)
    d_cond = denoise(target, x, sigma, cond)
    d_uncond = denoise(target, x, sigma, None)
    w = omega[..., None] if omega.ndim else omega
    return (1.0 + w) * d_cond - w * d_uncond


def renoise(x, sigma_i, sigma_j, rng=None, noise=None):
    """Send x from level sigma_i back up to sigma_j > sigma_i."""
    x2, single = _rows(x)
    n = x2.shape[0]
    si, sj = _per_row(sigma_i, n), _per_row(sigma_j, n)
    if np.any(si < 0) or np.any(~(sj > si)):
        raise ValueError("renoise needs sigma_j > sigma_i >= 0")
    if noise is None:
        if rng is None:
            raise ValueError("renoise requires an rng or pre-drawn noise")
        noise = rng.standard_normal(x2.shape)
    out = x2 + np.sqrt(sj**2 - si**2)[:, None] * np.asarray(noise, dtype=float).reshape(x2.shape)
    return out[0] if single else out


def make_denoiser(target: GaussianMixture, cond=None) -> Denoiser:
    return lambda x, sigma: denoise(target, x, sigma, cond)
