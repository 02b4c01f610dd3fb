import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dtmm.marginal import QuadGrid
from dtmm.sampler import PosteriorChain
from dtmm.summaries import (
    activation_means,
    association,
    centroids,
    coclustering,
    least_squares_clustering,
    least_squares_loss,
    otu_importance,
    otu_importance_one_vs_rest,
)
from dtmm.tree import parse_newick

SIX = parse_newick("((o1,o2),((o3,o4),(o5,o6)));")


def chain_of(labels, gammas=None, start=1):
    labels = np.asarray(labels)
    t = np.arange(start, start + len(labels))
    if gammas is None:
        # one active node keeps every nominal cluster distinct
        gammas = np.ones((len(labels), 1), dtype=int)
    return PosteriorChain(t, labels, gammas, np.ones(len(t)), np.full(len(t), 0.5))


# -- co-clustering and C_LS ------------------------------------------------------

def test_two_draw_example():
    ch = chain_of([[1, 1, 2], [1, 2, 2]])
    pi = coclustering(ch)
    assert pi[0, 1] == 0.5 and pi[1, 2] == 0.5 and pi[0, 2] == 0.0
    np.testing.assert_array_equal(np.diag(pi), 1.0)
    assert least_squares_loss([1, 1, 2], pi) == 1.0
    assert least_squares_loss([1, 2, 2], pi) == 1.0
    labels, t = least_squares_clustering(ch)
    assert labels.tolist() == [1, 1, 2] and t == 1


def test_identical_draws():
    ch = chain_of([[1, 2, 1, 3]] * 4, start=1001)
    pi = coclustering(ch)
    np.testing.assert_array_equal(pi, association([1, 2, 1, 3]))
    labels, t = least_squares_clustering(ch)
    assert labels.tolist() == [1, 2, 1, 3] and t == 1001


def test_inactive_draw_collapses_to_one_cluster():
    ch = chain_of([[1, 2, 3]], gammas=[[0]])
    np.testing.assert_array_equal(coclustering(ch), np.ones((3, 3)))


def test_empty_chain_rejected():
    ch = chain_of(np.zeros((0, 3), dtype=int), gammas=np.zeros((0, 1), dtype=int))
    for f in (coclustering, activation_means, least_squares_clustering):
        with pytest.raises(ValueError):
            f(ch)


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 6), st.integers(1, 8), st.integers(0, 2**32 - 1))
def test_pi_invariants_and_ls_minimality(n, draws, seed):
    rng = np.random.default_rng(seed)
    labels = rng.integers(1, 4, size=(draws, n))
    gammas = rng.integers(0, 2, size=(draws, 2))
    ch = chain_of(labels, gammas)
    pi = coclustering(ch)
    np.testing.assert_array_equal(pi, pi.T)
    np.testing.assert_array_equal(np.diag(pi), 1.0)
    assert np.all((pi >= 0) & (pi <= 1))
    best, t = least_squares_clustering(ch)
    row = int(np.flatnonzero(ch.t == t)[0])
    np.testing.assert_array_equal(best, ch.g[row])
    losses = [least_squares_loss(g, pi) for g in ch.g]
    assert losses[row] <= min(losses)
    assert losses[row] < min(losses[:row], default=np.inf)


def test_activation_means():
    ch = chain_of([[1, 2]] * 4, gammas=[[0, 1], [1, 1], [0, 1], [1, 1]])
    np.testing.assert_array_equal(activation_means(ch), [0.5, 1.0])
    ch = chain_of([[1, 1]] * 3, gammas=[[1, 1]] * 3)
    # a single cluster makes every node inactive in the actual model
    np.testing.assert_array_equal(activation_means(ch), [0.0, 0.0])


# -- centroids -----------------------------------------------------------------

def test_centroid_single_observation_conjugacy():
    grid = QuadGrid.from_support([1.0])
    est = centroids([[1, 0]], parse_newick("(A,B);"), [1], [1], grid)
    assert est.branch_means[0, 0] == pytest.approx(0.75, abs=1e-12)
    np.testing.assert_allclose(est.centroids[0], [0.75, 0.25], atol=1e-12)


def test_centroid_zero_node_keeps_prior_mean():
    y = np.array([[4, 2, 0, 0], [1, 5, 0, 0], [3, 3, 0, 0]])
    est = centroids(y, parse_newick("((a,b),(c,d));"), [1, 2, 2], [1, 1, 1], QuadGrid.build())
    np.testing.assert_allclose(est.branch_means[:, 2], 0.5, atol=1e-12)


def test_centroids_shared_when_all_inactive_and_on_simplex():
    rng = np.random.default_rng(0)
    y = rng.integers(0, 50, size=(12, 6))
    labels = np.repeat([1, 2, 3], 4)
    grid = QuadGrid.build(n_theta=32)
    est = centroids(y, SIX, labels, np.zeros(5), grid)
    assert np.max(np.abs(est.centroids - est.centroids[0])) == 0
    est = centroids(y, SIX, labels, [1, 0, 1, 1, 0], grid)
    np.testing.assert_allclose(est.centroids.sum(axis=1), 1, atol=1e-10)
    np.testing.assert_allclose(est.tau_posterior.sum(axis=2), 1, atol=1e-10)
    # inactive nodes are shared across clusters
    assert np.ptp(est.branch_means[:, 1]) == 0 and np.ptp(est.branch_means[:, 4]) == 0
    d = est.to_dict(SIX)
    assert len(d["clusters"]) == 3 and d["active"] == [1, 0, 1, 1, 0]


def test_centroid_tracks_cluster_composition():
    y = np.array([[90, 10]] * 5 + [[20, 80]] * 5)
    est = centroids(y, parse_newick("(A,B);"), [1] * 5 + [2] * 5, [1], QuadGrid.build())
    assert abs(est.centroids[0, 0] - 0.9) < 0.01 and abs(est.centroids[1, 0] - 0.2) < 0.01


def test_centroid_validation():
    with pytest.raises(ValueError):
        centroids([[1, 2]], parse_newick("(A,B);"), [1], [1, 0], QuadGrid.build(n_theta=8))
    with pytest.raises(ValueError):
        centroids([[1, 2]], parse_newick("(A,B);"), [1, 2], [1], QuadGrid.build(n_theta=8))


# -- importance ----------------------------------------------------------------

def merged_oracle(y, labels, cluster):
    return otu_importance(y, np.where(np.asarray(labels) == cluster, 0, 1))


def test_importance_hand_example():
    y = np.array([[2.0], [4.0], [6.0], [8.0]])
    assert otu_importance(y, [1, 1, 2, 2])[0] == 4.0


def test_importance_edge_cases():
    y = np.array([[1.0, 3.0, 5.0], [3.0, 3.0, 5.0], [3.0, 7.0, 5.0], [1.0, 7.0, 5.0]])
    out = otu_importance(y, [1, 1, 2, 2])
    assert out[0] == 0.0
    assert np.isnan(out[1]) and np.isnan(out[2])
    with pytest.raises(ValueError):
        otu_importance(y, [1, 1, 1, 1])
    with pytest.raises(ValueError):
        otu_importance_one_vs_rest(y, [1, 1, 2, 2], 3)


def test_one_vs_rest_three_cluster_instance():
    y = np.array([[1.0, 0.2], [2.0, 0.4], [7.0, 0.1], [9.0, 0.3], [4.0, 0.9], [3.0, 0.6]])
    labels = [1, 1, 2, 2, 3, 3]
    for c in (1, 2, 3):
        np.testing.assert_array_equal(otu_importance_one_vs_rest(y, labels, c), merged_oracle(y, labels, c))


@settings(max_examples=50, deadline=None)
@given(st.integers(3, 12), st.integers(2, 5), st.integers(0, 2**32 - 1))
def test_one_vs_rest_equals_merged(n, k, seed):
    rng = np.random.default_rng(seed)
    y = rng.integers(0, 20, size=(n, 4)).astype(float)
    labels = np.arange(n) % k
    rng.shuffle(labels)
    for c in np.unique(labels):
        np.testing.assert_array_equal(otu_importance_one_vs_rest(y, labels, c), merged_oracle(y, labels, c))
    out = otu_importance(y, labels)
    assert np.all(out[~np.isnan(out)] >= 0)
    if k == 2:
        np.testing.assert_array_equal(otu_importance_one_vs_rest(y, labels, labels[0]), out)
