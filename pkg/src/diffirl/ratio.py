"""Noise-level-conditioned classifier for the ratio p_E(x | sigma) / p_theta(x | sigma).

At the BCE optimum the classifier's logit equals the log density ratio, so
the ratio estimate is exp(logit).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nn import MLP, Adam, n_state_features, state_features
from .target import GaussianMixture, log_density


@dataclass
class DiscriminatorOptions:
    iters: int = 300
    batch_size: int = 512
    lr: float = 1e-3
    label_smoothing: float = 0.05
    smoothing_threshold: float = 0.5  # fraction of Sigma_N above which labels are smoothed
    ratio_min: float = 1e-3
    ratio_max: float = 1e3
    weight_decay: float = 0.0


class Discriminator:
    def __init__(self, net: MLP, data_std: float, sigmas: np.ndarray, clamp=(1e-3, 1e3)):
        self.net = net
        self.data_std = float(data_std)
        self.sigmas = np.asarray(sigmas, dtype=float)
        self.clamp = tuple(clamp)
        self._adam: Adam | None = None

    @classmethod
    def create(cls, dim: int, hidden, data_std: float, sigmas, rng: np.random.Generator, clamp=(1e-3, 1e3)):
        net = MLP([n_state_features(dim), *hidden, 1], rng, zero_last=True)
        return cls(net, data_std, sigmas, clamp)

    def copy(self) -> Discriminator:
        return Discriminator(self.net.copy(), self.data_std, self.sigmas.copy(), self.clamp)

    @property
    def params(self) -> np.ndarray:
        return self.net.get_flat()

    def set_params(self, flat) -> None:
        self.net.set_flat(flat)

    def _features(self, x, sigma) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        sigma = np.broadcast_to(np.asarray(sigma, dtype=float).reshape(-1), (x.shape[0],)) if np.ndim(sigma) else np.full(x.shape[0], float(sigma))
        return state_features(x, sigma, self.data_std)

    def logit(self, x, sigma):
        out = self.net.forward(self._features(x, sigma))[:, 0]
        return float(out[0]) if np.ndim(x) == 1 else out

    def conditional_ratio(self, x, sigma):
        return np.clip(np.exp(np.clip(self.logit(x, sigma), -700, 700)), *self.clamp)

    def bce(self, x, sigma, labels) -> float:
        z = np.atleast_1d(self.logit(x, sigma))
        return float(np.mean(np.logaddexp(0.0, z) - labels * z))


class LevelSamples:
    """States grouped by noise level, stored flat with per-level offsets."""

    def __init__(self, x: np.ndarray, level: np.ndarray, n_levels: int):
        order = np.argsort(level, kind="stable")
        self.x = np.asarray(x, dtype=float)[order]
        self.level = np.asarray(level, dtype=int)[order]
        self.counts = np.bincount(self.level, minlength=n_levels)
        self.starts = np.concatenate([[0], np.cumsum(self.counts)[:-1]])

    def draw(self, levels: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        idx = self.starts[levels] + np.floor(rng.random(levels.size) * self.counts[levels]).astype(int)
        return self.x[idx]


def train_discriminator(
    disc: Discriminator,
    expert: LevelSamples,
    policy: LevelSamples,
    opts: DiscriminatorOptions,
    rng: np.random.Generator,
    levels=None,
    history: list | None = None,
) -> Discriminator:
    """Minibatch BCE with the level drawn uniformly, expert label 1, policy label 0.

    Labels are smoothed to [eps, 1 - eps] at levels with sigma >= threshold * Sigma_N.
    Updates ``disc`` in place and returns it.
    """
    if levels is None:
        levels = np.flatnonzero((expert.counts > 0) & (policy.counts > 0))
    levels = np.asarray(levels, dtype=int)
    if levels.size == 0:
        raise ValueError("no level has both expert and policy samples")
    empty = levels[(expert.counts[levels] == 0) | (policy.counts[levels] == 0)]
    if empty.size:
        raise ValueError(f"levels {empty.tolist()} have no expert or no policy samples")

    sig_max = disc.sigmas.max()
    smooth = disc.sigmas >= opts.smoothing_threshold * sig_max
    eps = np.where(smooth, opts.label_smoothing, 0.0)
    if disc._adam is None or disc._adam.m.size != disc.net.n_params or disc._adam.lr != opts.lr:
        disc._adam = Adam(disc.net.n_params, opts.lr)
    half = opts.batch_size // 2
    for _ in range(opts.iters):
        lv_e = levels[rng.integers(levels.size, size=half)]
        lv_p = levels[rng.integers(levels.size, size=half)]
        xb = np.concatenate([expert.draw(lv_e, rng), policy.draw(lv_p, rng)])
        lv = np.concatenate([lv_e, lv_p])
        y = np.concatenate([1.0 - eps[lv_e], eps[lv_p]])
        feats = disc._features(xb, disc.sigmas[lv])
        z, cache = disc.net.forward(feats, keep=True)
        p = 1.0 / (1.0 + np.exp(-z[:, 0]))
        dz = ((p - y) / y.size)[:, None]
        grad = disc.net.backward(cache, dz)
        if opts.weight_decay:
            grad = grad + opts.weight_decay * disc.net.get_flat()
        disc.net.set_flat(disc.net.get_flat() + disc._adam.step(grad))
        if history is not None:
            history.append(float(np.mean(np.logaddexp(0.0, z[:, 0]) - y * z[:, 0])))
    return disc


def exact_ratio_oracle(p: GaussianMixture, q: GaussianMixture, x, sigma=0.0):
    """p(x | sigma) / q(x | sigma) from the closed-form mixture densities."""
    return np.exp(log_density(p, x, sigma) - log_density(q, x, sigma))
