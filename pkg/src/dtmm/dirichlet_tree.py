"""The Dirichlet-tree distribution on the simplex and its logistic-normal projection."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy.special import digamma, gammaln, polygamma

from .tree import PhyloTree, inverse_tree_ratio_transform, tree_ratio_transform


@dataclass(frozen=True)
class DtParams:
    """Mean branching probability and dispersion at each internal node.

    Both arrays are in the tree's internal pre-order.
    """

    theta: np.ndarray
    tau: np.ndarray

    def __post_init__(self):
        theta = np.asarray(self.theta, dtype=float)
        tau = np.asarray(self.tau, dtype=float)
        if theta.shape != tau.shape or theta.ndim != 1:
            raise ValueError("theta and tau must be 1-d arrays of equal length")
        if np.any((theta <= 0) | (theta >= 1)):
            raise ValueError("theta must lie strictly inside (0, 1)")
        if np.any(tau <= 0):
            raise ValueError("tau must be strictly positive")
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "tau", tau)

    @property
    def alpha(self) -> np.ndarray:
        """Left pseudo-count at each node."""
        return self.theta * self.tau

    @property
    def beta(self) -> np.ndarray:
        """Right pseudo-count at each node."""
        return (1.0 - self.theta) * self.tau

    @classmethod
    def from_pseudocounts(cls, left, right) -> "DtParams":
        left = np.asarray(left, dtype=float)
        right = np.asarray(right, dtype=float)
        return cls(theta=left / (left + right), tau=left + right)

    def check(self, tree: PhyloTree) -> None:
        if len(self.theta) != tree.n_internal:
            raise ValueError(
                f"params cover {len(self.theta)} nodes, tree has {tree.n_internal}"
            )

    def to_json(self) -> str:
        return json.dumps({"theta": self.theta.tolist(), "tau": self.tau.tolist()})

    @classmethod
    def from_json(cls, text: str) -> "DtParams":
        obj = json.loads(text)
        return cls(theta=np.array(obj["theta"]), tau=np.array(obj["tau"]))


@dataclass(frozen=True)
class LogisticNormalParams:
    """Gaussian law of ``log(x_j / x_M)``, j < M, with the last leaf as reference."""

    mu: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        mu = np.asarray(self.mu, dtype=float)
        sigma = np.asarray(self.sigma, dtype=float)
        if sigma.shape != (mu.size, mu.size):
            raise ValueError("sigma must be square and match mu")
        if not np.allclose(sigma, sigma.T, atol=1e-10, rtol=0):
            raise ValueError("sigma is not symmetric")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "sigma", sigma)


def _log_beta_fn(a, b):
    return gammaln(a) + gammaln(b) - gammaln(a + b)


def dt_log_density(tree: PhyloTree, params: DtParams, p) -> float | np.ndarray:
    """Log density of DT(theta, tau) at simplex point(s) ``p``.

    The density is the product of the node-wise beta densities of the
    branching probabilities divided by the Jacobian of the ratio transform,
    which is the product of the subtree masses at the non-root internal nodes.
    """
    params.check(tree)
    p = np.asarray(p, dtype=float)
    if np.any(p <= 0):
        raise ValueError("p lies on the simplex boundary (a subtree has zero mass)")
    mass = p @ tree.members.T
    theta_i = tree_ratio_transform(tree, p)
    a, b = params.alpha, params.beta
    log_beta_pdf = (
        (a - 1.0) * np.log(theta_i)
        + (b - 1.0) * np.log1p(-theta_i)
        - _log_beta_fn(a, b)
    )
    return np.sum(log_beta_pdf, axis=-1) - np.sum(np.log(mass[..., 1:]), axis=-1)


def dirichlet_log_density(alpha, p) -> float | np.ndarray:
    alpha = np.asarray(alpha, dtype=float)
    p = np.asarray(p, dtype=float)
    return (
        np.sum((alpha - 1.0) * np.log(p), axis=-1)
        + gammaln(alpha.sum())
        - gammaln(alpha).sum()
    )


def dt_sample(tree: PhyloTree, params: DtParams, rng: np.random.Generator, size=None):
    """Draw simplex vector(s) from DT(theta, tau)."""
    params.check(tree)
    shape = (tree.n_internal,) if size is None else tuple(np.atleast_1d(size)) + (tree.n_internal,)
    theta_i = rng.beta(
        np.broadcast_to(params.alpha, shape), np.broadcast_to(params.beta, shape)
    )
    p = inverse_tree_ratio_transform(tree, theta_i)
    return p / p.sum(axis=-1, keepdims=True)


def dt_mean(tree: PhyloTree, params: DtParams) -> np.ndarray:
    return inverse_tree_ratio_transform(tree, params.theta)


def dt_covariance(tree: PhyloTree, params: DtParams, j1: int, j2: int) -> float:
    """Covariance of two distinct leaf probabilities under DT(theta, tau).

    The bracketed multiplicative factor is accumulated as a log-sum so the
    final ``factor - 1`` is taken with ``expm1`` and keeps full precision.
    """
    params.check(tree)
    if j1 == j2:
        raise NotImplementedError("variances (j1 == j2) are not supported")
    p1, p2 = tree.leaf_path(j1), tree.leaf_path(j2)
    shared = []
    for u, v in zip(p1, p2):
        if u != v:
            break
        shared.append(u)
    tau = params.tau
    last = shared[-1]
    log_factor = np.log(tau[last]) - np.log1p(tau[last])
    for prev, node in zip(shared[:-1], shared[1:]):
        a = params.alpha[prev] if tree.left[prev] == node else params.beta[prev]
        log_factor += np.log1p(a) - np.log(a) + np.log(tau[prev]) - np.log1p(tau[prev])
    mean = dt_mean(tree, params)
    return float(np.expm1(log_factor) * mean[j1] * mean[j2])


def dt_to_dirichlet(tree: PhyloTree, params: DtParams, rtol: float = 1e-9):
    """Leaf pseudo-counts if DT(theta, tau) is a Dirichlet law, else ``None``.

    The reduction holds when the pseudo-count sent from every internal node
    to each internal child equals that child's dispersion; this implies
    ``tau(A) = tau(A_l) + tau(A_r)`` wherever both children are internal.
    """
    params.check(tree)
    sent = {}
    for a in range(tree.n_internal):
        sent[int(tree.left[a])] = params.alpha[a]
        sent[int(tree.right[a])] = params.beta[a]
    for node, pseudo in sent.items():
        if not tree.is_leaf(node):
            if not np.isclose(pseudo, params.tau[node], rtol=rtol, atol=0.0):
                return None
    return np.array([sent[tree.leaf_node(j)] for j in range(tree.n_leaves)])


def _log_branch_moments(params: DtParams):
    a, b, t = params.alpha, params.beta, params.tau
    mean_left = digamma(a) - digamma(t)
    mean_right = digamma(b) - digamma(t)
    tri_t = polygamma(1, t)
    var_left = polygamma(1, a) - tri_t
    var_right = polygamma(1, b) - tri_t
    return mean_left, mean_right, var_left, var_right, -tri_t


def log_leaf_moments(tree: PhyloTree, params: DtParams):
    """Mean vector and covariance matrix of ``log p`` under DT(theta, tau).

    ``log p_j`` is a sum of independent log-beta terms along the leaf path,
    so the moments follow from digamma and trigamma values at each node.
    """
    params.check(tree)
    ml, mr, vl, vr, c = _log_branch_moments(params)
    signs = tree.path_signs
    L = (signs == 1).astype(float)
    R = (signs == -1).astype(float)
    mean = L @ ml + R @ mr
    cov = (L * vl) @ L.T + (R * vr) @ R.T + (L * c) @ R.T + (R * c) @ L.T
    return mean, cov


def ln_projection(tree: PhyloTree, params: DtParams) -> LogisticNormalParams:
    """KL-closest logistic-normal law to DT(theta, tau): moment matching of
    the additive log-ratios against the last leaf."""
    mean, cov = log_leaf_moments(tree, params)
    m = tree.n_leaves
    diff = np.hstack([np.eye(m - 1), -np.ones((m - 1, 1))])
    sigma = diff @ cov @ diff.T
    return LogisticNormalParams(mu=diff @ mean, sigma=0.5 * (sigma + sigma.T))


def _sqrt_psd(sigma, tol=1e-10):
    w, v = np.linalg.eigh(sigma)
    if w.size and w.min() < -tol:
        raise ValueError(f"sigma is not positive semi-definite (eigenvalue {w.min():.3g})")
    return v * np.sqrt(np.clip(w, 0.0, None))


def ln_sample(params: LogisticNormalParams, rng: np.random.Generator, size=None):
    """Draw from Logit-Norm(mu, sigma) with the last coordinate as reference."""
    root = _sqrt_psd(params.sigma)
    k = params.mu.size
    shape = (k,) if size is None else tuple(np.atleast_1d(size)) + (k,)
    z = rng.standard_normal(shape)
    x = params.mu + z @ root.T
    x = np.concatenate([x, np.zeros(x.shape[:-1] + (1,))], axis=-1)
    x -= x.max(axis=-1, keepdims=True)
    e = np.exp(x)
    return e / e.sum(axis=-1, keepdims=True)
