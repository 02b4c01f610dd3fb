"""Posterior summaries of a chain: co-clustering, a representative
clustering, activation frequencies, centroids and OTU importance."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .marginal import QuadGrid, sample_tables
from .sampler import PosteriorChain
from .tree import PhyloTree, inverse_tree_ratio_transform, node_stats


def _require(chain: PosteriorChain):
    if len(chain) == 0:
        raise ValueError("the chain has no retained draws")


def association(labels) -> np.ndarray:
    labels = np.asarray(labels)
    return (labels[:, None] == labels[None, :]).astype(float)


def coclustering(chain: PosteriorChain) -> np.ndarray:
    """Fraction of retained draws in which each pair shares an actual label."""
    _require(chain)
    g = chain.g
    n = g.shape[1]
    pi = np.zeros((n, n))
    for labels in g:
        pi += labels[:, None] == labels[None, :]
    pi /= len(g)
    np.fill_diagonal(pi, 1.0)
    return pi


def least_squares_loss(labels, pi_hat) -> float:
    return float(np.sum((association(labels) - pi_hat) ** 2))


def least_squares_clustering(chain: PosteriorChain, pi_hat=None):
    """The retained draw whose association matrix is closest to ``pi_hat``.

    Returns ``(labels, t)``; ties go to the earliest draw.
    """
    _require(chain)
    if pi_hat is None:
        pi_hat = coclustering(chain)
    losses = np.array([least_squares_loss(g, pi_hat) for g in chain.g])
    best = int(np.argmin(losses))
    return chain.g[best].copy(), int(chain.t[best])


def activation_means(chain: PosteriorChain) -> np.ndarray:
    _require(chain)
    return chain.s.mean(axis=0)


@dataclass
class CentroidEstimate:
    centroids: np.ndarray          # (K, M), rows on the simplex
    branch_means: np.ndarray       # (K, M-1) posterior mean of theta per node
    tau_posterior: np.ndarray      # (K, M-1, n_tau)
    tau_support: np.ndarray
    active: np.ndarray             # the activation bits used

    def to_dict(self, tree: PhyloTree) -> dict:
        return {
            "leaves": list(tree.leaves),
            "tau_support": self.tau_support.tolist(),
            "active": self.active.astype(int).tolist(),
            "clusters": [
                {
                    "label": k + 1,
                    "centroid": self.centroids[k].tolist(),
                    "branch_means": self.branch_means[k].tolist(),
                    "tau_posterior": self.tau_posterior[k].tolist(),
                }
                for k in range(len(self.centroids))
            ],
        }


def _grid_posterior(summed, grid: QuadGrid):
    """Posterior mean of theta and tau marginal from a summed log table."""
    logp = summed + grid.log_weights
    logp = logp - logsumexp(logp)
    p = np.exp(logp)
    mean = float(p @ grid.cell_theta)
    tau = p.reshape(grid.tau_support.size, grid.theta_nodes.size).sum(axis=1)
    return mean, tau


def centroids(counts, tree: PhyloTree, labels, gamma, grid: QuadGrid) -> CentroidEstimate:
    """Posterior-mean branching probabilities per cluster and node.

    Active nodes use the cluster's own members; inactive nodes use all
    samples and are therefore shared. Leaf centroids are path products.
    """
    labels = np.asarray(labels)
    gamma = np.asarray(gamma).astype(bool)
    if gamma.shape != (tree.n_internal,):
        raise ValueError("gamma does not match the tree")
    ids, inv = np.unique(labels, return_inverse=True)
    y_left, y_total = node_stats(tree, counts)
    if y_left.shape[0] != labels.size:
        raise ValueError("labels do not match the sample count")
    tables = sample_tables(y_left, y_total, grid)
    total = tables.sum(axis=0)
    k = ids.size
    n_tau = grid.tau_support.size
    means = np.empty((k, tree.n_internal))
    taus = np.empty((k, tree.n_internal, n_tau))
    shared = [_grid_posterior(total[a], grid) for a in range(tree.n_internal)]
    for c in range(k):
        own = tables[inv == c].sum(axis=0)
        for a in range(tree.n_internal):
            means[c, a], taus[c, a] = _grid_posterior(own[a], grid) if gamma[a] else shared[a]
    cents = inverse_tree_ratio_transform(tree, means)
    return CentroidEstimate(cents, means, taus, grid.tau_support.copy(), gamma.astype(np.int8))


def _ss(y, labels):
    y = np.asarray(y, dtype=float)
    labels = np.asarray(labels)
    overall = y.mean(axis=0)
    ssb = np.zeros(y.shape[1])
    ssw = np.zeros(y.shape[1])
    for c in np.unique(labels):
        block = y[labels == c]
        m = block.mean(axis=0)
        ssb += len(block) * (m - overall) ** 2
        ssw += ((block - m) ** 2).sum(axis=0)
    return ssb, ssw


def otu_importance(y, labels) -> np.ndarray:
    """``SSB_j / SSW_j`` per OTU; NaN marks an undefined ratio (SSW = 0)."""
    labels = np.asarray(labels)
    if np.unique(labels).size < 2:
        raise ValueError("importance needs at least two clusters")
    ssb, ssw = _ss(y, labels)
    out = np.full(ssb.shape, np.nan)
    ok = ssw > 0
    out[ok] = ssb[ok] / ssw[ok]
    return out


def otu_importance_one_vs_rest(y, labels, cluster) -> np.ndarray:
    """Importance of each OTU for separating ``cluster`` from all others."""
    labels = np.asarray(labels)
    inside = labels == cluster
    if not inside.any():
        raise ValueError(f"no sample has label {cluster}")
    if inside.all():
        raise ValueError("every sample is in the cluster")
    y = np.asarray(y, dtype=float)
    overall = y.mean(axis=0)
    a, b = y[inside], y[~inside]
    ma, mb = a.mean(axis=0), b.mean(axis=0)
    ssb = len(a) * (ma - overall) ** 2 + len(b) * (mb - overall) ** 2
    ssw = ((a - ma) ** 2).sum(axis=0) + ((b - mb) ** 2).sum(axis=0)
    out = np.full(ssb.shape, np.nan)
    ok = ssw > 0
    out[ok] = ssb[ok] / ssw[ok]
    return out
