"""Verification suites run by the ``gradcheck`` and ``oracle-check`` commands.

Each check returns a list of ``Check`` records; a suite passes when every
record passes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tabular as tb
from .ratio import Discriminator, DiscriminatorOptions, LevelSamples, exact_ratio_oracle, train_discriminator
from .sampler import euler_step, heun_step, make_denoiser
from .target import GaussianMixture, denoise, log_density, sample_expert, score


@dataclass
class Check:
    name: str
    value: float
    threshold: str
    passed: bool

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'}  {self.name}: {self.value:.3g} ({self.threshold})"


def gradcheck(cases: int = 20, seed: int = 0, tol: float = 1e-6, max_S: int = 4, max_A: int = 3, max_T: int = 4) -> list[Check]:
    """Enumerated estimator gradient vs central finite differences of the exact objective."""
    rng = np.random.default_rng(seed)
    out = []
    for c in range(cases):
        S, A, T = int(rng.integers(2, max_S + 1)), int(rng.integers(2, max_A + 1)), int(rng.integers(1, max_T + 1))
        mdp, policy, mu_E = tb.random_instance(rng, S, A, T)
        for gen in ("kl", "rkl"):
            est = tb.estimator_gradient(mdp, policy, mu_E, gen)
            fd = tb.fd_gradient(mdp, policy, mu_E, gen)
            err = float(np.max(np.abs(est - fd)))
            out.append(Check(f"case {c} S={S} A={A} T={T} {gen}", err, f"max-norm <= {tol:g}", err <= tol))
    return out


def random_factored(rng: np.random.Generator, L: int, B: int) -> np.ndarray:
    """Random strictly positive joint over [levels, bins]."""
    return rng.dirichlet(np.ones(L))[:, None] * rng.dirichlet(np.ones(B), size=L)


def decomposition_check(cases: int = 100, seed: int = 0, tol: float = 1e-12) -> list[Check]:
    rng = np.random.default_rng(seed)
    worst = {"kl": 0.0, "rkl": 0.0}
    dpi_ok = True
    for _ in range(cases):
        L, B = int(rng.integers(2, 6)), int(rng.integers(2, 8))
        qE, qT = random_factored(rng, L, B), random_factored(rng, L, B)
        for gen in worst:
            total, level, cond = tb.factored_divergence_terms(gen, qE, qT)
            worst[gen] = max(worst[gen], abs(total - (level + cond)))
            dpi_ok &= bool(total >= level)
    out = [Check(f"{g} decomposition", v, f"<= {tol:g}", v <= tol) for g, v in worst.items()]
    out.append(Check("data-processing bound D(mu) >= D(w)", float(not dpi_ok), "exact", dpi_ok))
    return out


def single_gaussian_flow(x_max, s: float, sigma_max: float, sigma_min: float):
    """Closed-form PF-ODE endpoint for a centred Gaussian with std s."""
    return np.asarray(x_max) * np.sqrt((s**2 + sigma_min**2) / (s**2 + sigma_max**2))


def solver_errors(method: str, steps=(8, 16, 32, 64), s: float = 1.0, sigma_max: float = 10.0, sigma_min: float = 0.1, dim: int = 2, seed: int = 0):
    """Endpoint error of ``method`` on geometric sigma grids of increasing resolution."""
    target = GaussianMixture(np.ones(1), np.zeros((1, dim)), np.full((1, dim), s**2))
    D = make_denoiser(target)
    step = {"euler": euler_step, "heun": heun_step}[method]
    x0 = sigma_max * np.random.default_rng(seed).standard_normal((64, dim))
    exact = single_gaussian_flow(x0, s, sigma_max, sigma_min)
    errs = []
    for n in steps:
        grid = np.geomspace(sigma_max, sigma_min, n + 1)
        x = x0
        for a, b in zip(grid[:-1], grid[1:]):
            x, _ = step(D, x, a, b)
        errs.append(float(np.max(np.abs(x - exact))))
    return np.array(errs)


def sampler_check() -> list[Check]:
    out = []
    for method, lo, hi in (("heun", 2.5, 6.0), ("euler", 1.5, 3.0)):
        e = solver_errors(method)
        ratios = e[:-1] / e[1:]
        ok = bool(np.all((ratios >= lo) & (ratios <= hi)))
        out.append(Check(f"{method} error ratio per halving (min {ratios.min():.2f})", float(ratios.max()), f"in [{lo}, {hi}]", ok))
    # denoiser against the Tweedie identity
    g = GaussianMixture.ring(8, std=0.2)
    rng = np.random.default_rng(1)
    worst = 0.0
    for sig in (0.05, 0.5, 2.0, 10.0):
        x = sample_expert(g, sig, 256, rng)
        worst = max(worst, float(np.max(np.abs(denoise(g, x, sig) - (x + sig**2 * score(g, x, sig))))))
    out.append(Check("denoiser vs x + sigma^2 score", worst, "<= 1e-9", worst <= 1e-9))
    return out


def two_mixtures_1d():
    p = GaussianMixture(np.array([0.6, 0.4]), np.array([[-1.0], [1.5]]), np.array([[0.25], [0.36]]))
    q = GaussianMixture(np.array([0.3, 0.7]), np.array([[-0.5], [1.0]]), np.array([[0.49], [0.25]]))
    return p, q


def ratio_fidelity(n: int = 10_000, iters: int = 3000, seed: int = 0, hidden=(64, 64), lr: float = 3e-3, density_frac: float = 0.01):
    """Mean |logit - exact log ratio| for a discriminator trained at a single level.

    The evaluation region is where both densities exceed ``density_frac``
    times their own maximum over a fine grid.
    """
    p, q = two_mixtures_1d()
    rng = np.random.default_rng(seed)
    xp, xq = sample_expert(p, 0.0, n, rng), sample_expert(q, 0.0, n, rng)
    std = float(np.std(np.concatenate([xp, xq])))
    disc = Discriminator.create(1, hidden, std, np.array([0.0]), rng)
    opts = DiscriminatorOptions(iters=iters, batch_size=512, lr=lr, label_smoothing=0.0)
    train_discriminator(disc, LevelSamples(xp, np.zeros(n, int), 1), LevelSamples(xq, np.zeros(n, int), 1), opts, rng)
    grid = np.linspace(-4, 4, 2001)[:, None]
    dp, dq = np.exp(log_density(p, grid)), np.exp(log_density(q, grid))
    region = grid[(dp >= density_frac * dp.max()) & (dq >= density_frac * dq.max())]
    exact = np.log(exact_ratio_oracle(p, q, region))
    return float(np.mean(np.abs(disc.logit(region, 0.0) - exact)))


def oracle_check(with_ratio: bool = True) -> list[Check]:
    out = sampler_check() + decomposition_check()
    if with_ratio:
        err = ratio_fidelity()
        out.append(Check("discriminator mean |logit - log ratio|", err, "< 0.15", err < 0.15))
    return out

