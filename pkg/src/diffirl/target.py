"""Analytic Gaussian-mixture targets.

The noisy marginal of a diagonal Gaussian mixture at noise level sigma is the
same mixture with every variance inflated by sigma**2, so densities, scores,
posterior means and class posteriors are all available in closed form. The
mixture plays two roles: the expert data distribution and the (frozen)
denoiser used by the sampler.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp, softmax

LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass(frozen=True)
class GaussianMixture:
    weights: np.ndarray  # [K]
    means: np.ndarray  # [K, d]
    variances: np.ndarray  # [K, d]

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float).reshape(-1)
        mu = np.atleast_2d(np.asarray(self.means, dtype=float))
        var = np.atleast_2d(np.asarray(self.variances, dtype=float))
        if mu.shape[0] != w.shape[0]:
            mu = mu.reshape(w.shape[0], -1)
        if var.shape != mu.shape:
            raise ValueError(f"variances shape {var.shape} does not match means shape {mu.shape}")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
            raise ValueError("mixture weights must be non-negative and sum to 1")
        if np.any(~(var > 0)):
            raise ValueError("mixture variances must be positive")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", mu)
        object.__setattr__(self, "variances", var)

    @property
    def n_components(self) -> int:
        return self.weights.shape[0]

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    @property
    def max_std(self) -> float:
        return float(np.sqrt(self.variances.max()))

    @classmethod
    def ring(cls, n_components: int, radius: float = 2.0, std: float = 0.1, weights=None) -> GaussianMixture:
        """Equal-variance components evenly spaced on a circle in 2-D."""
        angles = 2.0 * np.pi * np.arange(n_components) / n_components
        means = radius * np.stack([np.cos(angles), np.sin(angles)], axis=1)
        if weights is None:
            weights = np.full(n_components, 1.0 / n_components)
        return cls(np.asarray(weights, dtype=float), means, np.full_like(means, std**2))

    def with_weights(self, weights) -> GaussianMixture:
        return GaussianMixture(np.asarray(weights, dtype=float), self.means, self.variances)

    def to_dict(self) -> dict:
        return {
            "weights": self.weights.tolist(),
            "means": self.means.tolist(),
            "variances": self.variances.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> GaussianMixture:
        return cls(np.asarray(d["weights"], float), np.asarray(d["means"], float), np.asarray(d["variances"], float))


def _prepare(target: GaussianMixture, x, sigma):
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    x2 = np.atleast_2d(x)
    if x2.shape[1] != target.dim:
        raise ValueError(f"expected points of dimension {target.dim}, got {x2.shape[1]}")
    sig = np.asarray(sigma, dtype=float)
    if np.any(sig < 0):
        raise ValueError("sigma must be non-negative")
    sig = np.broadcast_to(sig.reshape(-1), (x2.shape[0],)) if sig.ndim else np.full(x2.shape[0], float(sig))
    # [n, K, d]
    s2 = target.variances[None, :, :] + (sig**2)[:, None, None]
    return x2, single, sig, s2


def _component_loglik(target: GaussianMixture, x2: np.ndarray, s2: np.ndarray) -> np.ndarray:
    diff = x2[:, None, :] - target.means[None, :, :]
    return -0.5 * np.sum(diff**2 / s2 + np.log(s2) + LOG_2PI, axis=-1)


def _check_cond(target: GaussianMixture, cond, n: int) -> np.ndarray:
    c = np.broadcast_to(np.asarray(cond, dtype=int).reshape(-1), (n,)) if np.ndim(cond) else np.full(n, int(cond))
    if np.any(c < 0) or np.any(c >= target.n_components):
        raise ValueError(f"component id out of range [0, {target.n_components})")
    return c


def _responsibilities(target: GaussianMixture, x2, s2, cond) -> np.ndarray:
    """Posterior over components, or a one-hot row when conditioning on a component."""
    n = x2.shape[0]
    if cond is None:
        with np.errstate(divide="ignore"):
            logw = np.log(target.weights)
        return softmax(logw[None, :] + _component_loglik(target, x2, s2), axis=1)
    c = _check_cond(target, cond, n)
    resp = np.zeros((n, target.n_components))
    resp[np.arange(n), c] = 1.0
    return resp


def _out(arr: np.ndarray, single: bool):
    return arr[0] if single else arr


def log_density(target: GaussianMixture, x, sigma=0.0, cond=None):
    x2, single, _, s2 = _prepare(target, x, sigma)
    ll = _component_loglik(target, x2, s2)
    if cond is None:
        with np.errstate(divide="ignore"):
            out = logsumexp(ll + np.log(target.weights)[None, :], axis=1)
    else:
        c = _check_cond(target, cond, x2.shape[0])
        out = ll[np.arange(x2.shape[0]), c]
    return float(out[0]) if single else out


def score(target: GaussianMixture, x, sigma=0.0, cond=None):
    x2, single, _, s2 = _prepare(target, x, sigma)
    resp = _responsibilities(target, x2, s2, cond)
    comp_scores = -(x2[:, None, :] - target.means[None, :, :]) / s2
    return _out(np.einsum("nk,nkd->nd", resp, comp_scores), single)


def denoise(target: GaussianMixture, x, sigma=0.0, cond=None):
    """Posterior mean E[x_0 | x_0 + sigma z = x], computed per component.

    Agrees with the Tweedie form x + sigma**2 * score(x, sigma).
    """
    x2, single, sig, s2 = _prepare(target, x, sigma)
    resp = _responsibilities(target, x2, s2, cond)
    gain = target.variances[None, :, :] / s2
    comp_means = target.means[None, :, :] + gain * (x2[:, None, :] - target.means[None, :, :])
    return _out(np.einsum("nk,nkd->nd", resp, comp_means), single)


def class_posterior(target: GaussianMixture, x, sigma=0.0):
    x2, single, _, s2 = _prepare(target, x, sigma)
    return _out(_responsibilities(target, x2, s2, None), single)


def sample_expert(target: GaussianMixture, sigma: float, n: int, rng: np.random.Generator, return_labels: bool = False):
    """Draw x = x_0 + sigma z with x_0 from the mixture."""
    if n < 1:
        raise ValueError("n must be at least 1")
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    labels = rng.choice(target.n_components, size=n, p=target.weights)
    x0 = target.means[labels] + np.sqrt(target.variances[labels]) * rng.standard_normal((n, target.dim))
    x = x0 + sigma * rng.standard_normal((n, target.dim)) if sigma > 0 else x0
    return (x, labels) if return_labels else x
