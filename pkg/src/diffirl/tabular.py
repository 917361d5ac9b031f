"""Small discrete finite-horizon MDPs with exact occupancy measures.

Everything here is exact: occupancies by dynamic programming, the objective
D_f(mu_E || mu_theta) in closed form, and the expected policy-gradient
estimator by enumerating every trajectory. This is the oracle used to check
the learner's gradient code.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from . import learner
from .divergence import FGenerator, divergence_discrete, get_generator
from .mdp import Observation, TrajectoryBatch
from .policy import SigmaOnlyPolicy

ENUMERATION_CAP = 2_000_000


@dataclass(frozen=True)
class TabularMDP:
    initial: np.ndarray  # [S]
    kernel: np.ndarray  # [S, A, S]
    T: int

    def __post_init__(self):
        init = np.asarray(self.initial, dtype=float)
        ker = np.asarray(self.kernel, dtype=float)
        if ker.ndim != 3 or ker.shape[0] != ker.shape[2] or init.shape != (ker.shape[0],):
            raise ValueError("kernel must be [S, A, S] and initial [S]")
        if abs(init.sum() - 1.0) > 1e-12 or np.any(np.abs(ker.sum(axis=2) - 1.0) > 1e-12):
            raise ValueError("initial distribution and kernel rows must sum to 1")
        if self.T < 1:
            raise ValueError("horizon must be at least 1")
        object.__setattr__(self, "initial", init)
        object.__setattr__(self, "kernel", ker)

    @property
    def S(self) -> int:
        return self.kernel.shape[0]

    @property
    def A(self) -> int:
        return self.kernel.shape[1]


class TabularPolicy(SigmaOnlyPolicy):
    """Stationary softmax policy with one logit row per state."""

    def __init__(self, logits):
        super().__init__(np.asarray(logits, dtype=float), stationary=True)

    def copy(self) -> TabularPolicy:
        return TabularPolicy(self.table.copy())

    def probs(self) -> np.ndarray:
        z = self.table - self.table.max(axis=1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=1, keepdims=True)


def observe(states, n_actions: int, step=None) -> Observation:
    states = np.asarray(states, dtype=int).reshape(-1)
    n = states.size
    return Observation(
        x=np.zeros((n, 1)),
        level=states,
        sigma=np.zeros(n),
        step=np.zeros(n, dtype=int) if step is None else np.asarray(step, dtype=int).reshape(-1),
        mask=np.ones((n, n_actions), dtype=bool),
    )


def random_instance(rng: np.random.Generator, S: int, A: int, T: int, concentration: float = 1.0):
    """Random dense MDP, random policy logits and a random strictly positive expert occupancy."""
    mdp = TabularMDP(rng.dirichlet(np.full(S, concentration)), rng.dirichlet(np.full(S, concentration), size=(S, A)), T)
    policy = TabularPolicy(rng.normal(size=(S, A)))
    mu_E = rng.dirichlet(np.full(S, 2.0))
    return mdp, policy, mu_E


def state_marginals(mdp: TabularMDP, policy: TabularPolicy) -> np.ndarray:
    """[T + 1, S]: distribution of s_t for t = 0..T."""
    P = np.einsum("sa,sax->sx", policy.probs(), mdp.kernel)
    m = [mdp.initial]
    for _ in range(mdp.T):
        m.append(m[-1] @ P)
    return np.stack(m)


def exact_occupancy(mdp: TabularMDP, policy: TabularPolicy) -> np.ndarray:
    """mu(s) = (1/T) sum_{t=1..T} P(s_t = s); s_0 is not counted."""
    return state_marginals(mdp, policy)[1:].mean(axis=0)


def exact_objective(mdp: TabularMDP, policy: TabularPolicy, mu_E, gen: str | FGenerator) -> float:
    return divergence_discrete(gen, mu_E, exact_occupancy(mdp, policy))


def fd_gradient(mdp: TabularMDP, policy: TabularPolicy, mu_E, gen, eps: float = 1e-5) -> np.ndarray:
    theta = policy.params
    grad = np.zeros_like(theta)
    probe = policy.copy()
    for k in range(theta.size):
        e = np.zeros_like(theta)
        e[k] = eps
        probe.set_params(theta + e)
        up = exact_objective(mdp, probe, mu_E, gen)
        probe.set_params(theta - e)
        down = exact_objective(mdp, probe, mu_E, gen)
        grad[k] = (up - down) / (2 * eps)
    return grad


def enumerate_trajectories(mdp: TabularMDP, policy: TabularPolicy, cap: int = ENUMERATION_CAP):
    """Every trajectory with positive probability, as a TrajectoryBatch plus probabilities."""
    S, A, T = mdp.S, mdp.A, mdp.T
    size = S * (A * S) ** T
    if size > cap:
        raise ValueError(f"enumeration of {size} trajectories exceeds the cap {cap}; use a smaller instance")
    pi = policy.probs()
    rows = np.array(list(itertools.product(range(S), *([range(A), range(S)] * T))), dtype=int)
    s = rows[:, 0::2]  # [n, T + 1]
    a = rows[:, 1::2]  # [n, T]
    logp_pi = np.log(pi[s[:, :-1], a])
    prob = mdp.initial[s[:, 0]] * np.prod(pi[s[:, :-1], a] * mdp.kernel[s[:, :-1], a, s[:, 1:]], axis=1)
    keep = prob > 0
    s, a, logp_pi, prob = s[keep], a[keep], logp_pi[keep], prob[keep]
    n = s.shape[0]
    batch = TrajectoryBatch(
        x=np.zeros((n, T + 1, 1)),
        level=s,
        actions=a,
        logprob=logp_pi,
        nfe=np.zeros((n, T), dtype=int),
        mask=np.ones((n, T, A), dtype=bool),
        sigmas=np.zeros(S),
    )
    return batch, prob


def exact_ratio_table(mdp: TabularMDP, policy: TabularPolicy, mu_E) -> np.ndarray:
    mu = exact_occupancy(mdp, policy)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(mu > 0, np.asarray(mu_E, float) / mu, np.nan)


def estimator_gradient(mdp: TabularMDP, policy: TabularPolicy, mu_E, gen, cap: int = ENUMERATION_CAP) -> np.ndarray:
    """Exact expectation of the trajectory estimator (1/T) sum_t grad log pi(a_t | s_{t-1}) A_t.

    Runs the learner's own signal and gradient code on the enumerated
    trajectories, weighted by their exact probabilities.
    """
    gen = get_generator(gen)
    batch, prob = enumerate_trajectories(mdp, policy, cap)
    ratio = exact_ratio_table(mdp, policy, mu_E)
    signals = learner.learning_signals(batch, ratio[batch.level[:, 1:]], gen)
    return learner.pg_gradient(policy, batch, signals, weights=prob)


def factored_divergence_terms(gen, mu_E_joint, mu_theta_joint):
    """Split D_f over a [levels, bins] joint into (total, level term, conditional term).

    For KL the conditional term weights per-level divergences by w_E, for
    reverse KL by w_theta. Other generators only get (total, level term, nan).
    """
    gen = get_generator(gen)
    qE = np.asarray(mu_E_joint, dtype=float)
    qT = np.asarray(mu_theta_joint, dtype=float)
    wE, wT = qE.sum(axis=1), qT.sum(axis=1)
    total = divergence_discrete(gen, qE.ravel(), qT.ravel())
    level_term = divergence_discrete(gen, wE, wT)
    if gen.kind not in ("kl", "rkl"):
        return total, level_term, float("nan")
    weights = wE if gen.kind == "kl" else wT
    cond = 0.0
    for lv in range(qE.shape[0]):
        if weights[lv] > 0:
            cond += weights[lv] * divergence_discrete(gen, qE[lv] / wE[lv], qT[lv] / wT[lv])
    return total, level_term, cond
