"""Diffusion sampling as a finite-horizon MDP.

A state is (x, Sigma_i) plus the step counter and the number of denoiser calls
used so far. Levels are referred to by their subscript i, so level 0 is the
absorbing terminal level Sigma_0 = 0. Action a_t is drawn at s_{t-1} and
produces s_t; the occupancy measure is over s_1..s_T.
"""

from __future__ import annotations

import enum
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import rng as rngmod
from .sampler import NoiseSchedule, edm_stoch_step, guided_denoise, heun_step, make_denoiser
from .target import GaussianMixture


class Strategy(str, enum.Enum):
    GAMMA = "gamma"
    GUIDANCE = "guidance"
    RENOISE = "renoise"


@dataclass(frozen=True)
class State:
    x: np.ndarray
    level: int
    step: int = 0
    nfe_used: int = 0
    cond: int | None = None


@dataclass(frozen=True)
class Action:
    strategy: Strategy
    index: int


@dataclass
class Observation:
    """What a policy sees for a batch of states."""

    x: np.ndarray  # [n, d]
    level: np.ndarray  # [n] int
    sigma: np.ndarray  # [n]
    step: np.ndarray  # [n] int
    mask: np.ndarray  # [n, A] bool

    def __len__(self) -> int:
        return self.level.shape[0]

    def take(self, idx) -> Observation:
        return Observation(self.x[idx], self.level[idx], self.sigma[idx], self.step[idx], self.mask[idx])


def renoise_cost(level) -> np.ndarray:
    """Denoiser calls needed to descend from Sigma_j to Sigma_0 with Heun (Euler on the last step)."""
    level = np.asarray(level)
    return np.where(level > 0, 2 * level - 1, 0)


def action_space(strategy, state: State, schedule: NoiseSchedule, M: int = 4, grid_size: int | None = None) -> list[Action]:
    """Structural action set, before any budget or horizon restrictions."""
    strategy = Strategy(strategy)
    if strategy is Strategy.RENOISE:
        top = min(M, schedule.N - state.level)
        return [Action(strategy, k) for k in range(top + 1)]
    if grid_size is None:
        raise ValueError("grid_size is required for grid-valued strategies")
    return [Action(strategy, k) for k in range(grid_size)]


@dataclass
class SamplingEnv:
    strategy: Strategy
    schedule: NoiseSchedule
    model: GaussianMixture
    horizon: int
    gamma_grid: tuple = (0.0,)
    omega_grid: tuple = (0.0,)
    M: int = 4
    nfe_budget: int | None = None
    cond_weights: np.ndarray | None = None

    def __post_init__(self):
        self.strategy = Strategy(self.strategy)
        self.gamma_grid = np.asarray(self.gamma_grid, dtype=float)
        self.omega_grid = np.asarray(self.omega_grid, dtype=float)
        N = self.schedule.N
        if self.horizon < N:
            raise ValueError(f"horizon T = {self.horizon} cannot reach Sigma_0 from Sigma_N with N = {N}")
        if self.strategy is Strategy.GAMMA:
            if 0.0 not in self.gamma_grid or np.any(self.gamma_grid < 0):
                raise ValueError("gamma grid must be non-negative and contain 0")
        if self.strategy is Strategy.GUIDANCE and 0.0 not in self.omega_grid:
            raise ValueError("guidance grid must contain 0")
        if self.strategy is Strategy.RENOISE:
            if self.M < 1:
                raise ValueError("M must be at least 1")
            if self.nfe_budget is not None and self.nfe_budget < int(renoise_cost(N)):
                raise ValueError(f"nfe budget {self.nfe_budget} is below the straight-descent cost {int(renoise_cost(N))}")
        if self.cond_weights is None:
            self.cond_weights = self.model.weights
        self.cond_weights = np.asarray(self.cond_weights, dtype=float)
        self._denoiser = make_denoiser(self.model)

    @property
    def n_actions(self) -> int:
        if self.strategy is Strategy.GAMMA:
            return self.gamma_grid.size
        if self.strategy is Strategy.GUIDANCE:
            return self.omega_grid.size
        return self.M + 1

    @property
    def default_action(self) -> int:
        """The do-nothing action: gamma = 0, omega = 0, or continue."""
        if self.strategy is Strategy.GAMMA:
            return int(np.flatnonzero(self.gamma_grid == 0.0)[0])
        if self.strategy is Strategy.GUIDANCE:
            return int(np.flatnonzero(self.omega_grid == 0.0)[0])
        return 0

    @property
    def N(self) -> int:
        return self.schedule.N

    def action_mask(self, level, step, nfe_used) -> np.ndarray:
        level = np.atleast_1d(np.asarray(level, dtype=int))
        step = np.broadcast_to(np.asarray(step, dtype=int), level.shape)
        nfe_used = np.broadcast_to(np.asarray(nfe_used, dtype=int), level.shape)
        A = self.n_actions
        mask = np.zeros((level.size, A), dtype=bool)
        if self.strategy is not Strategy.RENOISE:
            mask[level > 0] = True
            mask[level == 0, self.default_action] = True
            return mask
        mask[:, 0] = True
        k = np.arange(1, A)[None, :]
        target = level[:, None] + k
        ok = target <= self.N
        # the jump lands at step + 1 and needs `target` more steps to reach Sigma_0
        ok &= (self.horizon - (step[:, None] + 1)) >= target
        if self.nfe_budget is not None:
            ok &= nfe_used[:, None] + renoise_cost(target) <= self.nfe_budget
        mask[:, 1:] = ok
        return mask

    def action_space(self, state: State) -> list[Action]:
        mask = self.action_mask(state.level, state.step, state.nfe_used)[0]
        return [Action(self.strategy, int(k)) for k in np.flatnonzero(mask)]

    def observe(self, x, level, step, nfe_used) -> Observation:
        level = np.asarray(level, dtype=int)
        return Observation(
            x=np.asarray(x, dtype=float),
            level=level,
            sigma=self.schedule.sigmas[level],
            step=np.broadcast_to(np.asarray(step, dtype=int), level.shape).copy(),
            mask=self.action_mask(level, step, nfe_used),
        )

    def needs_noise(self, level, actions) -> np.ndarray:
        """Rows whose transition consumes a Gaussian draw."""
        level = np.asarray(level)
        actions = np.asarray(actions)
        if self.strategy is Strategy.GAMMA:
            return (level > 0) & (self.gamma_grid[actions] > 0)
        if self.strategy is Strategy.RENOISE:
            return actions > 0
        return np.zeros(level.shape, dtype=bool)

    def advance(self, x, level, actions, noise, cond=None):
        """Apply actions to a batch. ``noise`` rows are only read where ``needs_noise``.

        Returns (x_next, level_next, nfe).
        """
        x = np.array(x, dtype=float, copy=True)
        level = np.asarray(level, dtype=int)
        actions = np.asarray(actions, dtype=int)
        sig = self.schedule.sigmas
        new_level = level.copy()
        nfe = np.zeros(level.shape, dtype=int)
        if np.any((actions < 0) | (actions >= self.n_actions)):
            raise ValueError("action index out of range")

        if self.strategy is Strategy.RENOISE:
            jump = actions > 0
            if np.any(level[jump] + actions[jump] > self.N):
                raise ValueError("renoise jump above Sigma_N")
            down = ~jump & (level > 0)
        else:
            down = level > 0
            jump = np.zeros_like(down)

        if np.any(down):
            rows = np.flatnonzero(down)
            s_from, s_to = sig[level[rows]], sig[level[rows] - 1]
            if self.strategy is Strategy.GAMMA:
                g = self.gamma_grid[actions[rows]]
                out, used = edm_stoch_step(self._denoiser, x[rows], s_from, s_to, g, noise=noise[rows])
            elif self.strategy is Strategy.GUIDANCE:
                c = np.asarray(cond)[rows]
                w = self.omega_grid[actions[rows]]
                den = lambda xx, ss: guided_denoise(self.model, xx, ss, c, w)
                out, used = heun_step(den, x[rows], s_from, s_to)
            else:
                out, used = heun_step(self._denoiser, x[rows], s_from, s_to)
            x[rows] = out
            nfe[rows] = used
            new_level[rows] = level[rows] - 1

        if np.any(jump):
            rows = np.flatnonzero(jump)
            dest = level[rows] + actions[rows]
            std = np.sqrt(sig[dest] ** 2 - sig[level[rows]] ** 2)
            x[rows] = x[rows] + std[:, None] * noise[rows]
            new_level[rows] = dest
        return x, new_level, nfe

    def transition(self, state: State, action: Action | int, rng: np.random.Generator):
        """Single-state transition; returns (next_state, nfe)."""
        idx = action.index if isinstance(action, Action) else int(action)
        mask = self.action_mask(state.level, state.step, state.nfe_used)[0]
        if not (0 <= idx < self.n_actions and mask[idx]):
            raise ValueError(f"action {idx} is not available at level {state.level}, step {state.step}")
        d = self.model.dim
        noise = np.zeros((1, d))
        if self.needs_noise([state.level], [idx])[0]:
            noise[0] = rng.standard_normal(d)
        cond = None if state.cond is None else np.array([state.cond])
        x, lv, nfe = self.advance(np.asarray(state.x, float)[None, :], np.array([state.level]), np.array([idx]), noise, cond)
        nxt = State(x[0], int(lv[0]), state.step + 1, state.nfe_used + int(nfe[0]), state.cond)
        return nxt, int(nfe[0])


@dataclass
class Trajectory:
    x: np.ndarray  # [T + 1, d], row 0 is s_0
    level: np.ndarray  # [T + 1]
    actions: np.ndarray  # [T]
    logprob: np.ndarray  # [T]
    nfe: np.ndarray  # [T]
    mask: np.ndarray  # [T, A]
    cond: int | None = None

    @property
    def T(self) -> int:
        return self.actions.shape[0]

    @property
    def total_nfe(self) -> int:
        return int(self.nfe.sum())

    @property
    def terminal_reached(self) -> bool:
        return bool(self.level[-1] == 0)

    @property
    def final_x(self) -> np.ndarray:
        return self.x[-1]

    def states(self) -> list[State]:
        """s_1..s_T."""
        used = np.cumsum(self.nfe)
        return [State(self.x[t], int(self.level[t]), t, int(used[t - 1]), self.cond) for t in range(1, self.T + 1)]


@dataclass
class TrajectoryBatch:
    """Stacked trajectories; axis 0 indexes trajectories, axis 1 time (s_0..s_T)."""

    x: np.ndarray  # [n, T + 1, d]
    level: np.ndarray  # [n, T + 1]
    actions: np.ndarray  # [n, T]
    logprob: np.ndarray  # [n, T]
    nfe: np.ndarray  # [n, T]
    mask: np.ndarray  # [n, T, A]
    sigmas: np.ndarray  # Sigma_i by subscript
    cond: np.ndarray | None = None
    beta: float = 1.0
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return self.x.shape[0]

    @property
    def T(self) -> int:
        return self.actions.shape[1]

    @property
    def total_nfe(self) -> np.ndarray:
        return self.nfe.sum(axis=1)

    @property
    def terminal_reached(self) -> np.ndarray:
        return self.level[:, -1] == 0

    @property
    def final_x(self) -> np.ndarray:
        return self.x[:, -1]

    def __getitem__(self, i: int) -> Trajectory:
        return Trajectory(
            self.x[i], self.level[i], self.actions[i], self.logprob[i], self.nfe[i], self.mask[i],
            None if self.cond is None else int(self.cond[i]),
        )

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    def nfe_used_before(self) -> np.ndarray:
        """[n, T]: denoiser calls spent before action t (at s_{t-1})."""
        used = np.cumsum(self.nfe, axis=1)
        return np.concatenate([np.zeros((len(self), 1), dtype=used.dtype), used[:, :-1]], axis=1)

    def decision_observations(self) -> Observation:
        """Flattened observations s_{t-1} paired with actions a_t, row-major over (traj, t)."""
        n, T = self.actions.shape
        d = self.x.shape[2]
        level = self.level[:, :-1].reshape(-1)
        return Observation(
            x=self.x[:, :-1].reshape(n * T, d),
            level=level,
            sigma=self.sigmas[level],
            step=np.tile(np.arange(T), n),
            mask=self.mask.reshape(n * T, -1),
        )

    def visited(self):
        """(x, level) of s_1..s_T flattened over (traj, t)."""
        n, T = self.actions.shape
        return self.x[:, 1:].reshape(n * T, -1), self.level[:, 1:].reshape(-1)

    @classmethod
    def concat(cls, parts: list[TrajectoryBatch]) -> TrajectoryBatch:
        first = parts[0]
        cond = None if first.cond is None else np.concatenate([p.cond for p in parts])
        return cls(
            x=np.concatenate([p.x for p in parts]),
            level=np.concatenate([p.level for p in parts]),
            actions=np.concatenate([p.actions for p in parts]),
            logprob=np.concatenate([p.logprob for p in parts]),
            nfe=np.concatenate([p.nfe for p in parts]),
            mask=np.concatenate([p.mask for p in parts]),
            sigmas=first.sigmas,
            cond=cond,
            beta=first.beta,
        )

    @classmethod
    def from_trajectories(cls, trajs: list[Trajectory], sigmas: np.ndarray, beta: float = 1.0) -> TrajectoryBatch:
        conds = [t.cond for t in trajs]
        return cls(
            x=np.stack([t.x for t in trajs]),
            level=np.stack([t.level for t in trajs]),
            actions=np.stack([t.actions for t in trajs]),
            logprob=np.stack([t.logprob for t in trajs]),
            nfe=np.stack([t.nfe for t in trajs]),
            mask=np.stack([t.mask for t in trajs]),
            sigmas=sigmas,
            cond=None if conds[0] is None else np.array(conds),
            beta=beta,
        )


def sample_categorical(logp: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Inverse-CDF draw per row from log-probabilities (masked entries are -inf)."""
    probs = np.exp(logp)
    cdf = np.cumsum(probs, axis=1)
    cdf /= cdf[:, -1:]
    idx = (u[:, None] >= cdf).sum(axis=1)
    # guard against round-off landing on a masked trailing action
    idx = np.minimum(idx, logp.shape[1] - 1)
    bad = ~np.isfinite(logp[np.arange(idx.size), idx])
    if np.any(bad):
        idx[bad] = np.argmax(logp[bad], axis=1)
    return idx


def _rollout_streams(env: SamplingEnv, policy, beta: float, rngs: list[np.random.Generator]) -> TrajectoryBatch:
    n = len(rngs)
    T, d, A = env.horizon, env.model.dim, env.n_actions
    sig_N = env.schedule.sigmas[env.N]
    xs = np.empty((n, T + 1, d))
    levels = np.empty((n, T + 1), dtype=int)
    actions = np.empty((n, T), dtype=int)
    logprob = np.empty((n, T))
    nfe = np.zeros((n, T), dtype=int)
    masks = np.empty((n, T, A), dtype=bool)

    cond = None
    if env.strategy is Strategy.GUIDANCE:
        cdf = np.cumsum(env.cond_weights)
        cond = np.array([min(int(np.searchsorted(cdf, r.random(), side="right")), cdf.size - 1) for r in rngs])
    xs[:, 0] = sig_N * np.stack([r.standard_normal(d) for r in rngs])
    levels[:, 0] = env.N
    used = np.zeros(n, dtype=int)

    for t in range(1, T + 1):
        obs = env.observe(xs[:, t - 1], levels[:, t - 1], t - 1, used)
        logp = policy.action_log_probs(obs, beta)
        u = np.array([r.random() for r in rngs])
        a = sample_categorical(logp, u)
        need = env.needs_noise(levels[:, t - 1], a)
        noise = np.zeros((n, d))
        for i in np.flatnonzero(need):
            noise[i] = rngs[i].standard_normal(d)
        xs[:, t], levels[:, t], nfe[:, t - 1] = env.advance(xs[:, t - 1], levels[:, t - 1], a, noise, cond)
        used += nfe[:, t - 1]
        actions[:, t - 1] = a
        logprob[:, t - 1] = logp[np.arange(n), a]
        masks[:, t - 1] = obs.mask
    return TrajectoryBatch(xs, levels, actions, logprob, nfe, masks, env.schedule.sigmas, cond, beta)


def rollout(env: SamplingEnv, policy, beta: float, rng: np.random.Generator) -> Trajectory:
    return _rollout_streams(env, policy, beta, [rng])[0]


def rollout_batch(
    env: SamplingEnv,
    policy,
    beta: float,
    n_traj: int,
    master_seed: int,
    key: tuple = (),
    workers: int = 1,
    chunk_size: int = 256,
) -> TrajectoryBatch:
    """n_traj trajectories; trajectory i draws from stream (master_seed, *key, i).

    Work is split into fixed chunks of ``chunk_size`` so the result does not
    depend on ``workers``.
    """
    if n_traj < 1:
        raise ValueError("n_traj must be at least 1")
    starts = list(range(0, n_traj, chunk_size))

    def run(start: int) -> TrajectoryBatch:
        stop = min(start + chunk_size, n_traj)
        return _rollout_streams(env, policy, beta, [rngmod.stream(master_seed, *key, i) for i in range(start, stop)])

    if workers > 1 and len(starts) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(run, starts))
    else:
        parts = [run(s) for s in starts]
    return parts[0] if len(parts) == 1 else TrajectoryBatch.concat(parts)
