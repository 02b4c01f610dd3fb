import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from dtmm.dirichlet_tree import (
    DtParams,
    LogisticNormalParams,
    dirichlet_log_density,
    dt_covariance,
    dt_log_density,
    dt_mean,
    dt_sample,
    dt_to_dirichlet,
    ln_projection,
    ln_sample,
    log_leaf_moments,
)
from dtmm.tree import parse_newick

from test_tree import random_tree

BALANCED = parse_newick("((A,B),(C,D));")
SIX = parse_newick("((o1,o2),((o3,o4),(o5,o6)));")


def random_params(rng, tree, lo=0.5, hi=20, th=(0.1, 0.9)):
    return DtParams(rng.uniform(*th, tree.n_internal), rng.uniform(lo, hi, tree.n_internal))


def test_params_validation():
    with pytest.raises(ValueError):
        DtParams([0.0], [1.0])
    with pytest.raises(ValueError):
        DtParams([0.5], [-1.0])
    p = DtParams.from_pseudocounts([1, 2], [3, 2])
    np.testing.assert_allclose(p.theta, [0.25, 0.5])
    np.testing.assert_allclose(p.tau, [4, 4])
    assert DtParams.from_json(p.to_json()).tau.tolist() == p.tau.tolist()


def test_two_leaf_density_is_beta():
    t = parse_newick("(A,B);")
    assert dt_log_density(t, DtParams([0.5], [2.0]), [0.5, 0.5]) == pytest.approx(0.0, abs=1e-14)
    rng = np.random.default_rng(0)
    for _ in range(20):
        th, tau = rng.uniform(0.1, 0.9), rng.uniform(0.5, 30)
        x = rng.uniform(0.01, 0.99)
        ref = stats.beta.logpdf(x, th * tau, (1 - th) * tau)
        assert dt_log_density(t, DtParams([th], [tau]), [x, 1 - x]) == pytest.approx(ref, rel=1e-12)


def test_boundary_point_rejected():
    with pytest.raises(ValueError):
        dt_log_density(BALANCED, DtParams([0.5] * 3, [2.0] * 3), [0.5, 0.5, 0, 0])


def test_density_normalizes():
    # importance sampling from the uniform Dirichlet; pseudo-counts >= 1 keep
    # the weights bounded
    rng = np.random.default_rng(3)
    params = DtParams(rng.uniform(0.3, 0.7, 3), rng.uniform(4, 10, 3))
    x = rng.dirichlet(np.ones(4), size=10**6)
    w = np.exp(dt_log_density(BALANCED, params, x) - dirichlet_log_density(np.ones(4), x))
    assert abs(w.mean() - 1) < 0.02


def test_dirichlet_reduction_examples():
    two = parse_newick("(A,B);")
    np.testing.assert_allclose(dt_to_dirichlet(two, DtParams([0.25], [4.0])), [1, 3])
    params = DtParams([0.5] * 3, [4.0, 2.0, 2.0])
    alpha = dt_to_dirichlet(BALANCED, params)
    np.testing.assert_allclose(alpha, [1, 1, 1, 1])
    x = np.random.default_rng(0).dirichlet(np.ones(4), size=10)
    np.testing.assert_allclose(dt_log_density(BALANCED, params, x), stats.dirichlet.logpdf(x.T, alpha))
    assert dt_to_dirichlet(BALANCED, DtParams([0.5] * 3, [1.0, 2.0, 2.0])) is None


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 9), st.integers(0, 2**32 - 1))
def test_degenerate_density_matches_dirichlet(m, seed):
    rng = np.random.default_rng(seed)
    t = random_tree(rng, m)
    # build leaf pseudo-counts and push them up the tree
    alpha_leaf = rng.uniform(0.3, 5, m)
    mass = np.zeros(t.node_count)
    mass[t.n_internal:] = alpha_leaf
    for a in reversed(range(t.n_internal)):
        mass[a] = mass[t.left[a]] + mass[t.right[a]]
    params = DtParams.from_pseudocounts(mass[t.left], mass[t.right])
    alpha = dt_to_dirichlet(t, params)
    np.testing.assert_allclose(alpha, alpha_leaf, rtol=1e-12)
    x = rng.dirichlet(np.ones(m), size=100)
    ref = stats.dirichlet.logpdf(x.T, alpha)
    np.testing.assert_allclose(dt_log_density(t, params, x), ref, rtol=0, atol=1e-8)


def test_sample_on_simplex_and_concentrated():
    rng = np.random.default_rng(1)
    x = dt_sample(SIX, random_params(rng, SIX), rng, size=1000)
    np.testing.assert_allclose(x.sum(axis=1), 1, atol=1e-12)
    two = parse_newick("(A,B);")
    x = dt_sample(two, DtParams([0.3], [1e6]), rng, size=10**4)
    assert x[:, 0].std() < 0.002
    assert abs(x[:, 0].mean() - 0.3) < 1e-3


def test_sample_mean():
    rng = np.random.default_rng(2)
    params = random_params(rng, SIX)
    x = dt_sample(SIX, params, rng, size=10**5)
    se = x.std(axis=0) / np.sqrt(len(x))
    assert np.all(np.abs(x.mean(axis=0) - dt_mean(SIX, params)) < 3 * se)


def test_covariance_root_only_case():
    params = DtParams([0.3, 0.6, 0.2], [5.0, 2.0, 7.0])
    mean = dt_mean(BALANCED, params)
    # leaves 0 and 2 only share the root
    assert dt_covariance(BALANCED, params, 0, 2) == pytest.approx(-mean[0] * mean[2] / 6.0, rel=1e-12)
    assert dt_covariance(BALANCED, params, 0, 2) == dt_covariance(BALANCED, params, 2, 0)
    with pytest.raises(NotImplementedError):
        dt_covariance(BALANCED, params, 1, 1)


def test_covariance_can_be_positive():
    # a tight root and a loose split below it make siblings move together
    params = DtParams([0.5, 0.5, 0.5], [0.2, 1000.0, 1000.0])
    assert dt_covariance(BALANCED, params, 0, 1) > 0


def test_covariance_against_sampling():
    rng = np.random.default_rng(5)
    params = random_params(rng, SIX, 1, 10)
    x = dt_sample(SIX, params, rng, size=4 * 10**5)
    xc = x - x.mean(axis=0)
    for j1, j2 in [(0, 1), (0, 3), (2, 3), (3, 5), (4, 5)]:
        prod = xc[:, j1] * xc[:, j2]
        se = prod.std() / np.sqrt(len(prod))
        assert abs(prod.mean() - dt_covariance(SIX, params, j1, j2)) < 4 * se


def test_log_moments_two_leaf_identities():
    two = parse_newick("(A,B);")
    ln = ln_projection(two, DtParams([0.5], [2.0]))
    assert abs(ln.mu[0]) < 1e-10
    assert abs(ln.sigma[0, 0] - np.pi**2 / 3) < 1e-10


def test_projection_against_sampling():
    # pseudo-counts >= 1 so no branch draw underflows to zero
    rng = np.random.default_rng(6)
    params = random_params(rng, SIX, 4, 10, (0.3, 0.7))
    ln = ln_projection(SIX, params)
    x = dt_sample(SIX, params, rng, size=4 * 10**5)
    z = np.log(x[:, :-1]) - np.log(x[:, -1:])
    se_mu = z.std(axis=0) / np.sqrt(len(z))
    assert np.all(np.abs(z.mean(axis=0) - ln.mu) < 4 * se_mu)
    zc = z - z.mean(axis=0)
    for i in range(5):
        for j in range(i, 5):
            prod = zc[:, i] * zc[:, j]
            assert abs(prod.mean() - ln.sigma[i, j]) < 4 * prod.std() / np.sqrt(len(prod))


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 10), st.integers(0, 2**32 - 1))
def test_projection_symmetric_psd(m, seed):
    rng = np.random.default_rng(seed)
    t = random_tree(rng, m)
    ln = ln_projection(t, random_params(rng, t, 0.05, 100))
    np.testing.assert_array_equal(ln.sigma, ln.sigma.T)
    assert np.linalg.eigvalsh(ln.sigma).min() > -1e-10
    mean, cov = log_leaf_moments(t, random_params(rng, t))
    assert mean.shape == (m,) and cov.shape == (m, m)


def test_ln_sample():
    rng = np.random.default_rng(7)
    x = ln_sample(LogisticNormalParams(np.zeros(2), np.zeros((2, 2))), rng, size=5)
    np.testing.assert_allclose(x, 1 / 3)
    params = LogisticNormalParams(np.array([1.0, -0.5]), np.array([[0.5, 0.1], [0.1, 0.3]]))
    x = ln_sample(params, rng, size=10**5)
    np.testing.assert_allclose(x.sum(axis=1), 1, atol=1e-12)
    z = np.log(x[:, 0] / x[:, 2])
    assert abs(z.mean() - 1.0) < 3 * z.std() / np.sqrt(len(z))
    with pytest.raises(ValueError):
        ln_sample(LogisticNormalParams(np.zeros(2), np.array([[1.0, 0], [0, -1.0]])), rng)
    with pytest.raises(ValueError):
        LogisticNormalParams(np.zeros(2), np.array([[1.0, 0.5], [0.0, 1.0]]))
