"""Wiring from an ExperimentConfig to the objects a run needs.

Every random draw comes from a named sub-stream of the run seed, so the
pieces can be rebuilt independently (e.g. the expert pool at eval time).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import rng as rngmod
from .divergence import FGenerator, get_generator
from .mdp import SamplingEnv, TrajectoryBatch, rollout_batch
from .occupancy import LevelWeights, default_terminal_mass, expert_level_weights
from .policy import PolicySpec, SigmaOnlyPolicy, init_policy
from .ratio import Discriminator, DiscriminatorOptions, LevelSamples
from .sampler import NoiseSchedule, build_schedule
from .target import GaussianMixture, sample_expert

MONITOR_EXPERT = 2048


def mixture_std(g: GaussianMixture) -> float:
    mean = g.weights @ g.means
    second = g.weights @ (g.variances + g.means**2)
    return float(np.sqrt(np.mean(second - mean**2)))


@dataclass
class Experiment:
    cfg: object
    target: GaussianMixture  # expert distribution
    model: GaussianMixture  # what the sampler's denoiser knows
    schedule: NoiseSchedule
    env: SamplingEnv
    generator: FGenerator

    @classmethod
    def from_config(cls, cfg) -> Experiment:
        t = cfg.target
        target = GaussianMixture(np.asarray(t.weights, float), np.asarray(t.means, float), np.asarray(t.variances, float))
        model = target if cfg.model.weights is None else target.with_weights(cfg.model.weights)
        s = cfg.schedule
        schedule = build_schedule(s.kind, s.N, s.sigma_min, s.sigma_max, s.rho)
        if s.prior_check > 0:
            schedule.check_prior(model, s.prior_check)
        m = cfg.mdp
        env = SamplingEnv(
            strategy=m.strategy,
            schedule=schedule,
            model=model,
            horizon=cfg.horizon,
            gamma_grid=tuple(m.gamma_grid),
            omega_grid=tuple(m.omega_grid),
            M=m.M,
            nfe_budget=m.nfe_budget,
        )
        return cls(cfg, target, model, schedule, env, get_generator(cfg.objective.divergence))

    @property
    def seed(self) -> int:
        return self.cfg.run.seed

    @property
    def terminal_mass(self) -> float:
        a = self.cfg.objective.w_e_terminal_mass
        return default_terminal_mass(self.env.horizon, self.env.N) if a is None else a

    def expert_weights(self) -> LevelWeights:
        return expert_level_weights(self.env.N, self.terminal_mass)

    def policy_spec(self) -> PolicySpec:
        P = self.cfg.policy
        return PolicySpec(P.family, tuple(P.hidden), P.heuristic, P.stationary)

    def init_policy(self):
        return init_policy(self.policy_spec(), self.env, rngmod.stream(self.seed, "init", "policy"))

    def baseline_policy(self) -> SigmaOnlyPolicy:
        """Deterministic default action everywhere (gamma = 0, omega = 0 or continue)."""
        table = np.full((self.env.N + 1, self.env.n_actions), -np.inf)
        table[:, self.env.default_action] = 0.0
        return SigmaOnlyPolicy(table)

    def init_discriminator(self) -> Discriminator:
        D = self.cfg.discriminator
        return Discriminator.create(
            self.target.dim,
            D.hidden,
            mixture_std(self.target),
            self.schedule.sigmas,
            rngmod.stream(self.seed, "init", "discriminator"),
            clamp=(D.ratio_min, D.ratio_max),
        )

    def discriminator_options(self) -> DiscriminatorOptions:
        D = self.cfg.discriminator
        return DiscriminatorOptions(
            iters=D.iters,
            batch_size=D.batch_size,
            lr=D.lr,
            label_smoothing=D.label_smoothing,
            smoothing_threshold=D.smoothing_threshold,
            ratio_min=D.ratio_min,
            ratio_max=D.ratio_max,
            weight_decay=D.weight_decay,
        )

    def expert_pool(self) -> LevelSamples:
        """n_expert noisy expert samples at every level Sigma_0..Sigma_N."""
        n = self.cfg.discriminator.n_expert
        xs, lv = [], []
        for i, s in enumerate(self.schedule.sigmas):
            xs.append(sample_expert(self.target, float(s), n, rngmod.stream(self.seed, "expert", i)))
            lv.append(np.full(n, i))
        return LevelSamples(np.concatenate(xs), np.concatenate(lv), self.env.N + 1)

    def eval_expert_samples(self, n: int = MONITOR_EXPERT, key: str = "monitor") -> np.ndarray:
        return sample_expert(self.target, 0.0, n, rngmod.stream(self.seed, "expert", key))

    def generate(self, policy, n: int, beta: float = 1.0, key=("eval",), workers: int = 1) -> TrajectoryBatch:
        return rollout_batch(self.env, policy, beta, n, self.seed, key=tuple(key), workers=workers, chunk_size=self.cfg.learner.chunk_size)
