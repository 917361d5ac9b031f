import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from diffirl.mdp import SamplingEnv
from diffirl.nn import MLP
from diffirl.policy import (
    EmaParameters,
    PolicySpec,
    SigmaOnlyPolicy,
    StateDependentPolicy,
    ema_update,
    heuristic_offset,
    init_policy,
    logprob_grad,
    masked_log_softmax,
    structural_action_counts,
)
from diffirl.sampler import build_schedule
from diffirl.target import GaussianMixture

RING = GaussianMixture.ring(4, std=0.2)


def renoise_env(N=6, T=12):
    return SamplingEnv("renoise", build_schedule("power", N, 0.02, 10.0), RING, T)


def gamma_env(N=6):
    return SamplingEnv("gamma", build_schedule("power", N, 0.02, 10.0), RING, N, gamma_grid=(0.0, 0.5, 1.0, 2.0))


def obs_at(env, x, level, step=0):
    x = np.atleast_2d(x)
    return env.observe(x, np.full(x.shape[0], level), step, 0)


def test_heuristic_init_renoise():
    env = renoise_env()
    pol = init_policy(PolicySpec(), env)
    counts = structural_action_counts(env)
    for lv in range(env.N + 1):
        p = np.exp(pol.action_log_probs(obs_at(env, np.zeros(2), lv)))[0]
        if counts[lv] > 1:
            assert 0.88 <= p[0] <= 0.92
        else:
            assert p[0] == 1.0


def test_heuristic_offset():
    assert heuristic_offset(1) == 0.0
    z = np.array([heuristic_offset(5), 0, 0, 0, 0])
    p = np.exp(z) / np.exp(z).sum()
    assert p[0] == pytest.approx(0.9)


def test_uniform_init():
    env = gamma_env()
    pol = init_policy(PolicySpec(heuristic="uniform"), env)
    np.testing.assert_allclose(np.exp(pol.action_log_probs(obs_at(env, np.zeros(2), 3))), 0.25)


def test_state_dependent_init_ignores_x(rng):
    env = gamma_env()
    pol = init_policy(PolicySpec(family="state_dependent", hidden=(16, 16)), env, rng)
    o = obs_at(env, rng.normal(size=(5, 2)), 3)
    logits = pol.logits(o)
    np.testing.assert_array_equal(logits, np.broadcast_to(logits[0], logits.shape))
    np.testing.assert_array_equal(logits[0], pol.net.biases[-1])
    assert logits[0, env.default_action] == pytest.approx(heuristic_offset(env.n_actions))


def test_sigma_only_same_level_same_logits(rng):
    env = gamma_env()
    pol = SigmaOnlyPolicy(rng.normal(size=(env.N + 1, env.n_actions)))
    logits = pol.action_logits(obs_at(env, rng.normal(size=(2, 2)), 4))
    np.testing.assert_array_equal(logits[0], logits[1])


def test_top_level_renoise_only_continue():
    env = renoise_env()
    pol = init_policy(PolicySpec(), env)
    lg = pol.action_logits(obs_at(env, np.zeros(2), env.N))[0]
    assert np.isfinite(lg[0]) and np.all(np.isneginf(lg[1:]))


@pytest.mark.parametrize("beta, logits, expected", [(1.0, [0.0, 0.0], [0.5, 0.5]), (2.0, [np.log(4), 0.0], [2 / 3, 1 / 3])])
def test_temperature(beta, logits, expected):
    lp = masked_log_softmax(np.array([logits]), np.ones((1, 2), bool), beta)
    np.testing.assert_allclose(np.exp(lp[0]), expected)


def test_low_temperature_is_argmax():
    lp = masked_log_softmax(np.array([[0.3, 0.2, -1.0]]), np.ones((1, 3), bool), 1e-3)
    assert np.exp(lp[0, 0]) > 1 - 1e-12
    with pytest.raises(ValueError):
        masked_log_softmax(np.zeros((1, 2)), np.ones((1, 2), bool), 0.0)


def test_sample_action_frequencies(rng):
    env = gamma_env()
    table = np.zeros((env.N + 1, env.n_actions))
    table[:, 0] = np.log(4)
    pol = SigmaOnlyPolicy(table)
    o = obs_at(env, np.zeros((20000, 2)), 2)
    a, lp = pol.sample_action(o, 2.0, rng)
    # softmax([ln 2, 0, 0, 0]) = [0.4, 0.2, 0.2, 0.2]
    assert np.mean(a == 0) == pytest.approx(0.4, abs=0.015)
    np.testing.assert_allclose(lp[a == 0], np.log(0.4))


def test_sigma_only_grad_is_onehot_minus_softmax(rng):
    env = gamma_env()
    pol = SigmaOnlyPolicy(rng.normal(size=(env.N + 1, env.n_actions)))
    o = obs_at(env, np.zeros(2), 3)
    g = logprob_grad(pol, o, 2).reshape(pol.table.shape)
    p = np.exp(pol.action_log_probs(o))[0]
    expected = -p
    expected[2] += 1
    np.testing.assert_allclose(g[3], expected)
    assert np.all(np.delete(g, 3, axis=0) == 0)


def _fd_logprob(pol, o, a, eps=1e-6):
    th = pol.params
    out = np.zeros_like(th)
    probe = pol.copy()
    for k in range(th.size):
        e = np.zeros_like(th)
        e[k] = eps
        probe.set_params(th + e)
        up = probe.log_prob(o, [a])[0]
        probe.set_params(th - e)
        out[k] = (up - probe.log_prob(o, [a])[0]) / (2 * eps)
    return out


def _random_state_policy(rng, env, stationary=True):
    sizes = [2 + 18 + (0 if stationary else 9), 6, 5, env.n_actions]
    net = MLP(sizes, rng, zero_last=False)
    return StateDependentPolicy(net, 1.0, env.horizon, stationary)


@pytest.mark.parametrize("family", ["sigma_only", "state_dependent", "non_stationary"])
def test_logprob_grad_matches_finite_differences(family):
    rng = np.random.default_rng(5)
    env = renoise_env()
    for _ in range(100 if family == "sigma_only" else 20):
        if family == "sigma_only":
            pol = SigmaOnlyPolicy(rng.normal(size=(env.N + 1, env.n_actions)))
        else:
            pol = _random_state_policy(rng, env, stationary=family == "state_dependent")
        lv = int(rng.integers(0, env.N))
        o = env.observe(rng.normal(size=(1, 2)) * 2, np.array([lv]), int(rng.integers(0, 5)), 0)
        a = int(rng.choice(np.flatnonzero(o.mask[0])))
        g = logprob_grad(pol, o, a)
        fd = _fd_logprob(pol, o, a)
        assert np.max(np.abs(g - fd)) <= 1e-5 * max(1.0, np.max(np.abs(fd)))


@given(st.integers(0, 10_000))
def test_score_identity(seed):
    rng = np.random.default_rng(seed)
    env = renoise_env()
    pol = _random_state_policy(rng, env)
    o = env.observe(rng.normal(size=(1, 2)), np.array([int(rng.integers(0, env.N))]), 0, 0)
    p = np.exp(pol.action_log_probs(o))[0]
    total = sum(p[a] * logprob_grad(pol, o, a) for a in np.flatnonzero(o.mask[0]))
    assert np.max(np.abs(total)) < 1e-8


def test_entropy_with_masked_actions():
    env = renoise_env()
    pol = init_policy(PolicySpec(), env)
    h = pol.entropy(obs_at(env, np.zeros(2), env.N))
    assert h[0] == 0.0


def test_non_stationary_table():
    env = gamma_env()
    pol = init_policy(PolicySpec(stationary=False), env)
    assert pol.table.shape == (env.horizon, env.N + 1, env.n_actions)
    with pytest.raises(ValueError):
        SigmaOnlyPolicy(np.zeros((3, 4)), stationary=False)


def test_unknown_family():
    with pytest.raises(ValueError):
        init_policy(PolicySpec(family="transformer"), gamma_env())


def test_ema_examples():
    e = EmaParameters(np.zeros(1), 0.9)
    assert ema_update(e, np.ones(1)).shadow[0] == pytest.approx(0.1)
    assert ema_update(EmaParameters(np.zeros(3), 0.0), np.full(3, 2.0)).shadow.tolist() == [2.0] * 3
    assert ema_update(EmaParameters(np.full(3, 5.0), 1.0), np.ones(3)).shadow.tolist() == [5.0] * 3
    with pytest.raises(ValueError):
        ema_update(e, np.ones(2))
    with pytest.raises(ValueError):
        EmaParameters(np.zeros(1), 1.5)


@given(st.floats(0, 1), st.lists(st.floats(-10, 10), min_size=3, max_size=3), st.lists(st.floats(-10, 10), min_size=3, max_size=3))
def test_ema_stays_between(decay, a, b):
    out = ema_update(EmaParameters(np.array(a), decay), np.array(b)).shadow
    lo, hi = np.minimum(a, b), np.maximum(a, b)
    assert np.all(out >= lo - 1e-9) and np.all(out <= hi + 1e-9)
