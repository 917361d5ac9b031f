"""Discrete-action sampling policies.

Two families share one interface:

* ``SigmaOnlyPolicy`` - a logit table indexed by noise level (and by step
  for the non-stationary variant).
* ``StateDependentPolicy`` - a small MLP on the scaled sample, an embedding
  of ln sigma and optionally the step index.

Unavailable actions are masked to -inf before the softmax. All gradients are
of log pi under temperature 1, which is the training temperature.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .mdp import Observation, SamplingEnv, Strategy, sample_categorical
from .nn import MLP, n_state_features, state_features

HEURISTIC_PROB = 0.9


def masked_log_softmax(logits: np.ndarray, mask: np.ndarray, beta: float = 1.0) -> np.ndarray:
    if beta <= 0:
        raise ValueError("temperature must be positive")
    z = np.where(mask, logits / beta, -np.inf)
    zmax = z.max(axis=1, keepdims=True)
    with np.errstate(invalid="ignore"):
        shifted = z - zmax
        return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def heuristic_offset(n_available: int, prob: float = HEURISTIC_PROB) -> float:
    """Logit bonus giving the heuristic action probability ``prob`` among ``n_available`` actions."""
    if n_available < 2:
        return 0.0
    return math.log(prob * (n_available - 1) / (1.0 - prob))


class _PolicyBase:
    n_actions: int

    def logits(self, obs: Observation) -> np.ndarray:
        raise NotImplementedError

    def action_log_probs(self, obs: Observation, beta: float = 1.0) -> np.ndarray:
        return masked_log_softmax(self.logits(obs), obs.mask, beta)

    def action_logits(self, obs: Observation) -> np.ndarray:
        """Logits with unavailable actions set to -inf."""
        return np.where(obs.mask, self.logits(obs), -np.inf)

    def log_prob(self, obs: Observation, actions) -> np.ndarray:
        lp = self.action_log_probs(obs, 1.0)
        return lp[np.arange(len(obs)), np.asarray(actions)]

    def entropy(self, obs: Observation, beta: float = 1.0) -> np.ndarray:
        lp = self.action_log_probs(obs, beta)
        p = np.exp(lp)
        return -np.sum(p * np.where(p > 0, lp, 0.0), axis=1)

    def _dlogits(self, obs: Observation, actions, coef) -> np.ndarray:
        """Per-row d/dlogits of coef * log pi(a | s): coef * (onehot(a) - pi)."""
        p = np.exp(self.action_log_probs(obs, 1.0))
        d = -p
        d[np.arange(len(obs)), np.asarray(actions)] += 1.0
        return d * np.asarray(coef, dtype=float)[:, None]

    def sample_action(self, obs: Observation, beta: float, rng: np.random.Generator):
        """One action per row; returns (actions, log-probs under ``beta``)."""
        lp = self.action_log_probs(obs, beta)
        a = sample_categorical(lp, rng.random(len(obs)))
        return a, lp[np.arange(len(obs)), a]


class SigmaOnlyPolicy(_PolicyBase):
    family = "sigma_only"

    def __init__(self, table: np.ndarray, stationary: bool = True):
        self.table = np.array(table, dtype=float)
        self.stationary = stationary
        self.n_actions = self.table.shape[-1]
        expected = 2 if stationary else 3
        if self.table.ndim != expected:
            raise ValueError(f"logit table must have {expected} dims")

    def logits(self, obs: Observation) -> np.ndarray:
        if self.stationary:
            return self.table[obs.level]
        step = np.minimum(obs.step, self.table.shape[0] - 1)
        return self.table[step, obs.level]

    @property
    def params(self) -> np.ndarray:
        return self.table.ravel().copy()

    def set_params(self, flat: np.ndarray) -> None:
        flat = np.asarray(flat, dtype=float)
        if flat.size != self.table.size:
            raise ValueError("parameter size mismatch")
        self.table = flat.reshape(self.table.shape).copy()

    def weighted_logprob_grad(self, obs: Observation, actions, coef) -> np.ndarray:
        d = self._dlogits(obs, actions, coef)
        g = np.zeros_like(self.table)
        if self.stationary:
            np.add.at(g, obs.level, d)
        else:
            step = np.minimum(obs.step, self.table.shape[0] - 1)
            np.add.at(g, (step, obs.level), d)
        return g.ravel()

    def copy(self) -> SigmaOnlyPolicy:
        return SigmaOnlyPolicy(self.table.copy(), self.stationary)


class StateDependentPolicy(_PolicyBase):
    family = "state_dependent"

    def __init__(self, net: MLP, data_std: float, horizon: int, stationary: bool = True):
        self.net = net
        self.data_std = float(data_std)
        self.horizon = int(horizon)
        self.stationary = stationary
        self.n_actions = net.sizes[-1]

    def features(self, obs: Observation) -> np.ndarray:
        step = None if self.stationary else obs.step
        return state_features(obs.x, obs.sigma, self.data_std, step, self.horizon)

    def logits(self, obs: Observation) -> np.ndarray:
        return self.net.forward(self.features(obs))

    @property
    def params(self) -> np.ndarray:
        return self.net.get_flat()

    def set_params(self, flat: np.ndarray) -> None:
        self.net.set_flat(flat)

    def weighted_logprob_grad(self, obs: Observation, actions, coef) -> np.ndarray:
        _, cache = self.net.forward(self.features(obs), keep=True)
        return self.net.backward(cache, self._dlogits(obs, actions, coef))

    def copy(self) -> StateDependentPolicy:
        return StateDependentPolicy(self.net.copy(), self.data_std, self.horizon, self.stationary)


def logprob_grad(policy, obs: Observation, action) -> np.ndarray:
    """Gradient of log pi(action | state) for a single-row observation."""
    if len(obs) != 1:
        raise ValueError("logprob_grad expects a single state")
    return policy.weighted_logprob_grad(obs, np.array([int(action)]), np.ones(1))


@dataclass
class PolicySpec:
    family: str = "sigma_only"
    hidden: tuple = (64, 64)
    heuristic: str = "default"
    stationary: bool = True


def structural_action_counts(env: SamplingEnv) -> np.ndarray:
    """Number of structurally available actions at each level Sigma_0..Sigma_N."""
    levels = np.arange(env.N + 1)
    if env.strategy is Strategy.RENOISE:
        return 1 + np.minimum(env.M, env.N - levels)
    counts = np.full(env.N + 1, env.n_actions)
    counts[0] = 1
    return counts


def init_policy(spec: PolicySpec, env: SamplingEnv, rng: np.random.Generator | None = None):
    A = env.n_actions
    h = env.default_action
    if spec.heuristic not in ("default", "uniform"):
        raise ValueError(f"unknown heuristic {spec.heuristic!r}")
    if spec.family == "sigma_only":
        table = np.zeros((env.N + 1, A))
        if spec.heuristic == "default":
            for lv, count in enumerate(structural_action_counts(env)):
                table[lv, h] = heuristic_offset(count)
        if not spec.stationary:
            table = np.repeat(table[None], env.horizon, axis=0)
        return SigmaOnlyPolicy(table, spec.stationary)
    if spec.family == "state_dependent":
        if rng is None:
            raise ValueError("state-dependent policies need an rng for hidden-layer init")
        sizes = [n_state_features(env.model.dim, not spec.stationary), *spec.hidden, A]
        net = MLP(sizes, rng, zero_last=True)
        if spec.heuristic == "default":
            net.biases[-1][h] = heuristic_offset(A)
        return StateDependentPolicy(net, data_std=_data_std(env), horizon=env.horizon, stationary=spec.stationary)
    raise ValueError(f"unknown policy family {spec.family!r}")


def _data_std(env: SamplingEnv) -> float:
    m = env.model
    mean = m.weights @ m.means
    second = m.weights @ (m.variances + m.means**2)
    return float(np.sqrt(np.mean(second - mean**2)))


@dataclass
class EmaParameters:
    shadow: np.ndarray
    decay: float

    def __post_init__(self):
        if not 0.0 <= self.decay <= 1.0:
            raise ValueError("EMA decay must lie in [0, 1]")
        self.shadow = np.array(self.shadow, dtype=float)

    @classmethod
    def track(cls, policy, decay: float) -> EmaParameters:
        return cls(policy.params, decay)

    def as_policy(self, template):
        out = template.copy()
        out.set_params(self.shadow)
        return out


def ema_update(ema: EmaParameters, policy) -> EmaParameters:
    p = np.asarray(policy.params if hasattr(policy, "params") else policy, dtype=float)
    if p.shape != ema.shadow.shape:
        raise ValueError(f"EMA shape {ema.shadow.shape} does not match parameters {p.shape}")
    return EmaParameters(ema.decay * ema.shadow + (1.0 - ema.decay) * p, ema.decay)
