"""Policy optimization by state-occupancy f-divergence minimization.

Learning signals are suffix sums A_t = sum_{t' >= t} h_f(mu_E(s_t') / mu_theta(s_t'))
over the visited states s_1..s_T. The 1/T normalization is applied once, in
the recentered signal A_hat_t = (A_t - mean_t) / T, so that

    E[sum_t grad log pi(a_t | s_{t-1}) A_hat_t] = E[(1/T) sum_t grad log pi(a_t | s_{t-1}) (A_t - mean_t)]

which is the exact gradient of D_f(mu_E || mu_theta) (the batch mean is a
baseline and does not change the expectation).
"""

from __future__ import annotations

import csv
import io
import logging
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import rng as rngmod
from .divergence import FGenerator, get_generator
from .mdp import Observation, SamplingEnv, TrajectoryBatch, rollout_batch
from .nn import make_optimizer

log = logging.getLogger(__name__)

METRIC_COLUMNS = [
    "epoch",
    "divergence_estimate",
    "surrogate_loss",
    "mean_nfe",
    "w_theta_terminal",
    "policy_entropy",
    "energy_distance",
    "wall_time_s",
]


class TrainingDiverged(RuntimeError):
    pass


def learning_signals(traj, ratios, gen: str | FGenerator) -> np.ndarray:
    """Suffix sums of h_f over s_1..s_T.

    ``ratios`` is an array shaped like the visited states ([T] or [n, T]) or a
    callable ``(x, level) -> ratio`` evaluated on the trajectory's s_1..s_T.
    """
    gen = get_generator(gen)
    if callable(ratios):
        x = np.asarray(traj.x)[..., 1:, :]
        lv = np.asarray(traj.level)[..., 1:]
        r = np.asarray(ratios(x.reshape(-1, x.shape[-1]), lv.reshape(-1)), dtype=float).reshape(lv.shape)
    else:
        r = np.asarray(ratios, dtype=float)
    if not np.all(np.isfinite(r)) or np.any(r <= 0):
        raise ValueError("occupancy ratios must be finite and positive")
    h = gen.h(r)
    return np.flip(np.cumsum(np.flip(h, axis=-1), axis=-1), axis=-1)


def baseline_recenter(signals: np.ndarray) -> np.ndarray:
    """(A_t - per-timestep batch mean) / T."""
    signals = np.asarray(signals, dtype=float)
    if signals.ndim != 2 or signals.shape[0] < 2:
        raise ValueError("baseline recentering needs at least two trajectories")
    T = signals.shape[1]
    return (signals - signals.mean(axis=0, keepdims=True)) / T


def normalize_signals(adv: np.ndarray) -> np.ndarray:
    std = float(np.std(adv))
    return adv / std if std > 0 else adv


def pg_gradient(policy, batch: TrajectoryBatch, signals: np.ndarray, weights=None) -> np.ndarray:
    """sum_i w_i (1/T) sum_t grad log pi(a_t | s_{t-1}) A_t, with w_i = 1/n by default."""
    n, T = batch.actions.shape
    w = np.full(n, 1.0 / n) if weights is None else np.asarray(weights, dtype=float)
    coef = (w[:, None] * np.asarray(signals, dtype=float) / T).reshape(-1)
    return policy.weighted_logprob_grad(batch.decision_observations(), batch.actions.reshape(-1), coef)


def trajectory_log_ratio(policy, batch: TrajectoryBatch) -> np.ndarray:
    """log p_theta(s_{1:T}) - log p_theta0(s_{1:T}); the dynamics cancel."""
    n, T = batch.actions.shape
    lp = policy.log_prob(batch.decision_observations(), batch.actions.reshape(-1)).reshape(n, T)
    return (lp - batch.logprob).sum(axis=1)


def is_gradient(policy, batch: TrajectoryBatch, signals: np.ndarray, base_weights=None) -> np.ndarray:
    """Importance-weighted policy gradient at ``policy`` from trajectories drawn under theta_0."""
    n = len(batch)
    base = np.full(n, 1.0 / n) if base_weights is None else np.asarray(base_weights, dtype=float)
    return pg_gradient(policy, batch, signals, weights=base * np.exp(trajectory_log_ratio(policy, batch)))


@dataclass
class Buffer:
    obs: Observation
    actions: np.ndarray
    logprob_old: np.ndarray
    signals: np.ndarray  # raw A_t
    adv: np.ndarray  # recentered A_hat_t
    n_traj: int
    T: int

    def __len__(self) -> int:
        return self.actions.size

    @classmethod
    def from_batch(cls, batch: TrajectoryBatch, signals: np.ndarray, adv: np.ndarray) -> Buffer:
        n, T = batch.actions.shape
        return cls(
            batch.decision_observations(),
            batch.actions.reshape(-1),
            batch.logprob.reshape(-1),
            np.asarray(signals).reshape(-1),
            np.asarray(adv).reshape(-1),
            n,
            T,
        )


def ppo_objective(policy, obs: Observation, actions, logprob_old, adv, epsilon: float, T: int):
    """Clipped surrogate T * mean_i max(r_i A_i, clip(r_i, 1 - eps, 1 + eps) A_i) and its gradient.

    The loss is minimized, so max is the pessimistic choice. On ties the
    unclipped branch carries the gradient.
    Returns (value, gradient, fraction of entries on the clipped branch).
    """
    adv = np.asarray(adv, dtype=float)
    lp = policy.log_prob(obs, actions)
    r = np.exp(lp - np.asarray(logprob_old, dtype=float))
    unclipped = r * adv
    clipped = np.clip(r, 1.0 - epsilon, 1.0 + epsilon) * adv
    active = ~(clipped > unclipped)
    scale = T / adv.size
    value = scale * float(np.sum(np.where(active, unclipped, clipped)))
    coef = scale * np.where(active, r * adv, 0.0)
    grad = policy.weighted_logprob_grad(obs, actions, coef)
    return value, grad, float(np.mean(~active))


def ppo_gradient(policy, buffer: Buffer, epsilon: float) -> np.ndarray:
    return ppo_objective(policy, buffer.obs, buffer.actions, buffer.logprob_old, buffer.adv, epsilon, buffer.T)[1]


@dataclass
class TrainResult:
    policy: object
    ema: object
    discriminator: object
    env: SamplingEnv
    metrics: list = field(default_factory=list)

    @property
    def ema_policy(self):
        return self.ema.as_policy(self.policy)

    def metrics_csv(self) -> str:
        return metrics_to_csv(self.metrics)


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def metrics_to_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(METRIC_COLUMNS)
    for row in rows:
        writer.writerow([_fmt(row[c]) for c in METRIC_COLUMNS])
    return buf.getvalue()


def train(cfg, workers: int | None = None, record_wall_time: bool = False, progress: Callable | None = None) -> TrainResult:
    """Alternate rollouts, discriminator fitting and clipped policy updates.

    Every K epochs a fresh batch is rolled out with the current policy, the
    discriminator is refit, occupancy ratios are frozen at the sampling
    policy theta_0 and stored with the recentered signals in the buffer.
    Each epoch is one shuffled pass of minibatch updates over the buffer.
    """
    from .experiment import Experiment
    from .metrics import energy_distance
    from .occupancy import estimate_level_weights, occupancy_ratio
    from .policy import EmaParameters, ema_update
    from .ratio import LevelSamples, train_discriminator

    exp = Experiment.from_config(cfg)
    L, D = cfg.learner, cfg.discriminator
    seed = cfg.run.seed
    workers = L.workers if workers is None else workers
    env, gen = exp.env, exp.generator

    policy = exp.init_policy()
    ema = EmaParameters.track(policy, L.ema_decay)
    disc = exp.init_discriminator()
    expert = exp.expert_pool()
    w_E = exp.expert_weights()
    eval_expert = exp.eval_expert_samples()
    opt = make_optimizer(L.optimizer, policy.params.size, L.lr)
    disc_rng = rngmod.stream(seed, "discriminator")
    shuffle_rng = rngmod.stream(seed, "minibatch")
    d_opts = exp.discriminator_options()
    clamp = (D.ratio_min, D.ratio_max)
    N, T = env.N, env.horizon

    regen = 0

    def regenerate():
        nonlocal regen
        b = rollout_batch(env, policy, 1.0, L.n_traj, seed, key=("rollout", regen), workers=workers, chunk_size=L.chunk_size)
        regen += 1
        return b, LevelSamples(*b.visited(), N + 1)

    def refresh(b, samples, iters):
        d_opts.iters = iters
        train_discriminator(disc, expert, samples, d_opts, disc_rng)
        w_theta = estimate_level_weights(b, N)
        xv, lv = b.visited()
        ratios = occupancy_ratio(w_E, w_theta, disc, xv, lv, clamp=clamp).reshape(len(b), T)
        A = learning_signals(b, ratios, gen)
        adv = baseline_recenter(A)
        if L.normalize_signals:
            adv = normalize_signals(adv)
        stats = {
            "divergence_estimate": float(np.mean(gen.f(ratios))),
            "mean_nfe": float(np.mean(b.total_nfe)),
            "w_theta_terminal": w_theta.terminal,
            "energy_distance": energy_distance(b.final_x[b.terminal_reached], eval_expert),
        }
        return Buffer.from_batch(b, A, adv), stats

    start = time.perf_counter()
    batch, samples = regenerate()
    train_discriminator(disc, expert, samples, _with_iters(d_opts, D.dre_init_iters), disc_rng)

    metrics: list[dict] = []
    buffer = stats = None
    for epoch in range(L.n_epoch):
        if epoch % L.K == 0 or L.ratio_refresh == "every_update":
            if epoch > 0:
                batch, samples = regenerate()
            buffer, stats = refresh(batch, samples, D.iters)

        surrogate = []
        if L.estimator == "is":
            value = float(np.mean(buffer.adv))
            grad = is_gradient(policy, batch, (buffer.adv * buffer.T).reshape(buffer.n_traj, buffer.T))
            _apply(policy, opt, grad, epoch)
            ema = ema_update(ema, policy)
            surrogate.append(value)
        else:
            perm = shuffle_rng.permutation(len(buffer))
            for lo in range(0, len(buffer), L.minibatch):
                idx = perm[lo : lo + L.minibatch]
                value, grad, _ = ppo_objective(
                    policy, buffer.obs.take(idx), buffer.actions[idx], buffer.logprob_old[idx], buffer.adv[idx], L.ppo_epsilon, buffer.T
                )
                _apply(policy, opt, grad, epoch)
                ema = ema_update(ema, policy)
                surrogate.append(value)
                if L.ratio_refresh == "every_update":
                    break

        row = {
            "epoch": epoch,
            "divergence_estimate": stats["divergence_estimate"],
            "surrogate_loss": float(np.mean(surrogate)),
            "mean_nfe": stats["mean_nfe"],
            "w_theta_terminal": stats["w_theta_terminal"],
            "policy_entropy": float(np.mean(policy.entropy(buffer.obs))),
            "energy_distance": stats["energy_distance"],
            "wall_time_s": (time.perf_counter() - start) if record_wall_time else 0.0,
        }
        metrics.append(row)
        if progress is not None:
            progress(row)
        log.debug("epoch %d: %s", epoch, row)

    return TrainResult(policy, ema, disc, env, metrics)


def _with_iters(opts, iters):
    from dataclasses import replace

    return replace(opts, iters=iters)


def _apply(policy, opt, grad: np.ndarray, epoch: int) -> None:
    if not np.all(np.isfinite(grad)):
        raise TrainingDiverged(f"non-finite policy gradient at epoch {epoch}")
    new = policy.params + opt.step(grad)
    if not np.all(np.isfinite(new)):
        raise TrainingDiverged(f"non-finite policy parameters at epoch {epoch}")
    policy.set_params(new)
