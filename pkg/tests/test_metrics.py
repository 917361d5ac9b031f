import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp
from scipy.stats import norm

from diffirl import metrics as M
from diffirl.mdp import SamplingEnv, rollout_batch
from diffirl.policy import SigmaOnlyPolicy
from diffirl.sampler import build_schedule
from diffirl.target import GaussianMixture, sample_expert

pts = hnp.arrays(float, st.tuples(st.integers(2, 12), st.just(2)), elements=st.floats(-10, 10))


def test_energy_distance_identical():
    X = np.random.default_rng(0).normal(size=(200, 2))
    assert M.energy_distance(X, X, unbiased=False) == pytest.approx(0.0, abs=1e-12)
    assert abs(M.energy_distance(X, X)) < 0.05


def test_energy_distance_separation():
    rng = np.random.default_rng(1)
    a, b, c = rng.normal(size=10_000), rng.normal(size=10_000), rng.normal(5, 1, size=10_000)
    assert M.energy_distance(a, c) > 5 * abs(M.energy_distance(a, b))


@given(pts, pts)
def test_energy_distance_symmetric(X, Y):
    assert M.energy_distance(X, Y) == M.energy_distance(Y, X)


@given(pts, st.randoms(use_true_random=False))
def test_energy_distance_permutation(X, r):
    Y = np.random.default_rng(3).normal(size=(7, 2))
    perm = list(range(len(X)))
    r.shuffle(perm)
    assert M.energy_distance(X[perm], Y) == pytest.approx(M.energy_distance(X, Y), abs=1e-9)


def test_energy_distance_needs_two_points():
    with pytest.raises(ValueError):
        M.energy_distance(np.zeros((1, 2)), np.zeros((3, 2)))


def test_histogram_kl_identical_and_disjoint():
    X = np.random.default_rng(2).normal(size=1000)
    assert M.histogram_kl(X, X) == pytest.approx(0.0, abs=1e-12)
    kl = M.histogram_kl(np.zeros(100), np.ones(100), bins=10)
    assert np.isfinite(kl) and 0 < kl <= np.log(1 / M.HIST_SMOOTHING)
    with pytest.raises(ValueError):
        M.histogram_kl(X, X, smoothing=0.0)


def test_histogram_kl_binned_oracle():
    rng = np.random.default_rng(3)
    X, Y = rng.normal(size=100_000), rng.normal(0, np.sqrt(2), size=100_000)
    edges = np.linspace(-5, 5, 51)
    p = np.diff(norm.cdf(edges))
    q = np.diff(norm.cdf(edges, scale=np.sqrt(2)))
    p, q = p / p.sum(), q / q.sum()
    oracle = float(np.sum(p * np.log(p / q)))
    analytic = 0.5 * (np.log(2) - 1 + 0.5)
    assert abs(oracle - analytic) < 0.05 * analytic
    assert M.histogram_kl(X, Y, 50, (-5, 5)) == pytest.approx(oracle, rel=0.2)


def test_class_histogram_examples():
    g = GaussianMixture(np.array([0.7, 0.3]), np.array([[-1.0, 0.0], [1.0, 0.0]]), np.full((2, 2), 0.25))
    X = sample_expert(g, 0.0, 100_000, np.random.default_rng(4))
    h = M.class_histogram(g, X)
    assert np.max(np.abs(h - g.weights)) < 0.01
    assert M.class_tv(g.weights, h) <= 0.02
    single = GaussianMixture(np.ones(1), np.zeros((1, 2)), np.ones((1, 2)))
    np.testing.assert_allclose(M.class_histogram(single, X[:10]), [1.0])
    sym = g.with_weights([0.5, 0.5])
    np.testing.assert_allclose(M.class_histogram(sym, np.zeros((5, 2))), [0.5, 0.5])


def test_class_tv():
    assert M.class_tv([0.5, 0.5], [0.8, 0.2]) == pytest.approx(0.3)
    assert M.class_tv([1, 0], [0, 1]) == 1.0


@pytest.mark.parametrize("N", [2, 5, 8])
def test_mean_nfe_always_continue(N):
    env = SamplingEnv("gamma", build_schedule("power", N, 0.02, 10.0), GaussianMixture.ring(4, std=0.2), N)
    b = rollout_batch(env, SigmaOnlyPolicy(np.zeros((N + 1, env.n_actions))), 1.0, 32, 0)
    assert M.mean_nfe(b) == 2 * (N - 1) + 1
    assert M.mean_nfe(list(b)) == 2 * (N - 1) + 1
    with pytest.raises(ValueError):
        M.mean_nfe([])


def test_report_serialization():
    r = M.MetricReport(0.1, 0.2, 0.3, 15.0, 100)
    assert r.to_text().splitlines()[0] == "energy_distance = 0.1"
    csv = M.reports_to_csv([r, r], {"beta": ["0.5", "1"]})
    assert csv.splitlines()[0] == "beta,energy_distance,histogram_kl,class_tv,mean_nfe,n_samples"
    assert csv.splitlines()[2] == "1,0.1,0.2,0.3,15.0,100"
    with pytest.raises(ValueError):
        M.MetricReport(np.nan, 0, 0, 0, 1)
