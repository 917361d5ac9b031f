import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from diffirl.mdp import (
    Action,
    SamplingEnv,
    State,
    Strategy,
    TrajectoryBatch,
    action_space,
    renoise_cost,
    rollout,
    rollout_batch,
    sample_categorical,
)
from diffirl.policy import SigmaOnlyPolicy
from diffirl.rng import stream
from diffirl.sampler import build_schedule, heun_step, make_denoiser
from diffirl.target import GaussianMixture

GAMMAS = (0.0, 0.1, 0.2, 0.3, 0.5, 0.75, 1.0, 1.5, 2.0, 3.0)
STD1 = GaussianMixture(np.ones(1), np.zeros((1, 1)), np.ones((1, 1)))
RING = GaussianMixture.ring(4, std=0.2)


def fixed_policy(env, action=None):
    """Deterministic policy that always picks ``action`` (default: the do-nothing action)."""
    a = env.default_action if action is None else action
    table = np.full((env.N + 1, env.n_actions), -80.0)
    table[:, a] = 0.0
    return SigmaOnlyPolicy(table)


def renoise_env(N=4, T=6, budget=None, M=4):
    return SamplingEnv("renoise", build_schedule("power", N, 0.02, 10.0), RING, T, M=M, nfe_budget=budget)


def test_action_space_counts():
    sched = build_schedule("power", 9, 0.02, 10.0)
    assert len(action_space(Strategy.RENOISE, State(np.zeros(2), 3), sched, M=4)) == 5
    assert len(action_space(Strategy.RENOISE, State(np.zeros(2), 9), sched, M=4)) == 1
    assert len(action_space(Strategy.GAMMA, State(np.zeros(2), 4), sched, grid_size=10)) == 10


def test_env_masks():
    env = SamplingEnv("gamma", build_schedule("power", 8, 0.02, 10.0), RING, 8, gamma_grid=GAMMAS)
    assert env.n_actions == 10
    m = env.action_mask(np.array([0, 3]), 0, 0)
    assert m[0].sum() == 1 and m[0, env.default_action] and m[1].all()
    r = renoise_env(N=4, T=20)
    assert r.action_mask(4, 0, 0)[0].tolist() == [True, False, False, False, False]
    assert r.action_mask(1, 0, 0)[0].tolist() == [True, True, True, True, False]


def test_horizon_masks_jumps():
    env = renoise_env(N=4, T=6)
    # at step 3 on level 1 there are 2 steps left after landing: only a 1-level jump fits
    assert env.action_mask(1, 3, 0)[0].tolist() == [True, True, False, False, False]


def test_budget_masks_jumps():
    env = renoise_env(N=4, T=30, budget=10)
    # 7 NFE already spent; a jump to level 2 costs 3 more
    assert env.action_mask(0, 4, 7)[0].tolist() == [True, True, True, False, False]


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(strategy="gamma", horizon=3),
        dict(strategy="gamma", horizon=4, gamma_grid=(0.5, 1.0)),
        dict(strategy="renoise", horizon=8, nfe_budget=5),
        dict(strategy="guidance", horizon=4, omega_grid=(1.0,)),
    ],
)
def test_misconfiguration_rejected(kwargs):
    with pytest.raises(ValueError):
        SamplingEnv(schedule=build_schedule("power", 4, 0.02, 10.0), model=RING, **kwargs)


def test_renoise_cost():
    assert renoise_cost(0) == 0
    np.testing.assert_array_equal(renoise_cost(np.array([1, 2, 4])), [1, 3, 7])


def test_transition_absorbing(rng):
    env = renoise_env()
    s = State(np.array([0.3, -0.1]), 0, 5, 7)
    nxt, nfe = env.transition(s, 0, rng)
    assert nfe == 0 and nxt.level == 0
    np.testing.assert_array_equal(nxt.x, s.x)


def test_transition_jump(rng):
    env = renoise_env(T=20)
    s = State(np.array([0.3, -0.1]), 1, 2, 3)
    nxt, nfe = env.transition(s, Action(Strategy.RENOISE, 2), rng)
    assert nxt.level == 3 and nfe == 0 and not np.array_equal(nxt.x, s.x)
    with pytest.raises(ValueError):
        env.transition(State(np.zeros(2), 4), 1, rng)


def test_gamma_zero_transition_is_heun(rng):
    env = SamplingEnv("gamma", build_schedule("power", 4, 0.02, 10.0), STD1, 4, gamma_grid=GAMMAS)
    s = State(np.array([1.7]), 3)
    nxt, nfe = env.transition(s, env.default_action, rng)
    sig = env.schedule.sigmas
    ref, ref_nfe = heun_step(make_denoiser(STD1), s.x, sig[3], sig[2])
    np.testing.assert_array_equal(nxt.x, ref)
    assert nfe == ref_nfe == 2


def test_always_continue_descent():
    env = renoise_env(N=4, T=6)
    tr = rollout(env, fixed_policy(env), 1.0, np.random.default_rng(0))
    assert tr.level.tolist() == [4, 3, 2, 1, 0, 0, 0]
    assert tr.total_nfe == 2 * (4 - 1) + 1 and tr.terminal_reached


def test_gamma_zero_rollout_matches_heun_chain():
    sched = build_schedule("power", 5, 0.02, 10.0)
    env = SamplingEnv("gamma", sched, STD1, 5, gamma_grid=GAMMAS)
    rng = np.random.default_rng(3)
    tr = rollout(env, fixed_policy(env), 1.0, rng)
    x = tr.x[0]
    D = make_denoiser(STD1)
    for i in range(5, 0, -1):
        x, _ = heun_step(D, x, sched.sigmas[i], sched.sigmas[i - 1])
    np.testing.assert_array_equal(tr.final_x, x)


def test_rollout_determinism_and_parallelism():
    env = renoise_env(N=4, T=10)
    pol = SigmaOnlyPolicy(np.zeros((5, 5)))
    a = rollout(env, pol, 1.0, stream(7, "x"))
    b = rollout(env, pol, 1.0, stream(7, "x"))
    np.testing.assert_array_equal(a.x, b.x)
    serial = rollout_batch(env, pol, 1.0, 600, 11, key=("k",), workers=1, chunk_size=64)
    parallel = rollout_batch(env, pol, 1.0, 600, 11, key=("k",), workers=4, chunk_size=64)
    for f in ("x", "level", "actions", "logprob", "nfe"):
        np.testing.assert_array_equal(getattr(serial, f), getattr(parallel, f))


def test_rollout_batch_size_and_constant_nfe():
    env = SamplingEnv("gamma", build_schedule("power", 8, 0.02, 10.0), RING, 8, gamma_grid=GAMMAS)
    b = rollout_batch(env, fixed_policy(env), 1.0, 1024, 0)
    assert len(b) == 1024
    assert np.all(b.total_nfe == b.total_nfe[0])


def test_guidance_rollout():
    env = SamplingEnv("guidance", build_schedule("power", 4, 0.02, 10.0), RING, 4, omega_grid=(0.0, 1.0, 2.0))
    b = rollout_batch(env, SigmaOnlyPolicy(np.zeros((5, 3))), 1.0, 50, 0)
    assert b.cond.shape == (50,) and b.terminal_reached.all()
    assert np.all(b.total_nfe == 7)


def test_batch_views():
    env = renoise_env(N=4, T=8)
    b = rollout_batch(env, SigmaOnlyPolicy(np.zeros((5, 5))), 1.0, 5, 1)
    obs = b.decision_observations()
    assert len(obs) == 5 * 8
    np.testing.assert_array_equal(obs.level.reshape(5, 8), b.level[:, :-1])
    x, lv = b.visited()
    np.testing.assert_array_equal(lv.reshape(5, 8), b.level[:, 1:])
    tr = b[2]
    assert len(tr.states()) == 8 and tr.states()[-1].nfe_used == tr.total_nfe
    rebuilt = TrajectoryBatch.from_trajectories(list(b), b.sigmas)
    np.testing.assert_array_equal(rebuilt.x, b.x)


@given(st.integers(0, 4), st.integers(0, 12), st.integers(0, 40))
def test_masked_rollouts_always_terminate(level, step, used):
    """Any allowed jump still leaves enough horizon to descend back to Sigma_0."""
    env = renoise_env(N=4, T=14, budget=30)
    m = env.action_mask(level, step, used)[0]
    for k in np.flatnonzero(m[1:]) + 1:
        assert level + k <= env.N
        assert env.horizon - (step + 1) >= level + k



@given(st.integers(0, 2**31 - 1))
def test_renoise_rollouts_reach_terminal(seed):
    env = renoise_env(N=4, T=9, budget=12)
    b = rollout_batch(env, SigmaOnlyPolicy(np.zeros((5, 5))), 2.0, 8, seed)
    assert b.terminal_reached.all() and np.all(b.total_nfe <= 12)


def test_sample_categorical_masked():
    logp = np.array([[np.log(0.5), np.log(0.5), -np.inf], [-np.inf, -np.inf, 0.0]])
    out = sample_categorical(logp, np.array([0.9999999, 0.3]))
    assert out.tolist() == [1, 2]
