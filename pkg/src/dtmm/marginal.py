"""Node-wise marginal likelihoods of binomial splits under beta mixing.

A node's sufficient statistics for one sample are ``(y(A_l), y(A))``. Given
a cluster-level branching mean ``theta`` and dispersion ``tau`` the split is
beta-binomial; integrating ``theta`` against its beta prior and ``tau``
against a discrete log-uniform support gives the marginals used by the
sampler. All integrals are finite sums over a :class:`QuadGrid`, so a
cluster's integrand on the grid is just the sum of its members' log
beta-binomial tables.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import betaln, gammaln, logsumexp, roots_jacobi


@dataclass(frozen=True)
class QuadGrid:
    """Product grid over the cluster mean ``theta`` and dispersion ``tau``.

    ``theta_nodes`` are Gauss-Jacobi abscissae for the Beta(theta0*nu0,
    (1-theta0)*nu0) weight, with ``theta_weights`` summing to one, so the
    prior density is folded into the weights. ``tau_support`` carries equal
    prior mass per point. Flattened cells are ordered tau-major.
    """

    theta_nodes: np.ndarray
    theta_weights: np.ndarray
    tau_support: np.ndarray
    theta0: float
    nu0: float

    @classmethod
    def build(
        cls,
        n_theta: int = 128,
        theta0: float = 0.5,
        nu0: float = 1.0,
        log10_tau_min: float = -1.0,
        log10_tau_max: float = 4.0,
        log10_tau_step: float = 0.5,
    ) -> "QuadGrid":
        if not 0 < theta0 < 1 or nu0 <= 0:
            raise ValueError("need 0 < theta0 < 1 and nu0 > 0")
        a, b = theta0 * nu0, (1 - theta0) * nu0
        x, w = roots_jacobi(n_theta, b - 1.0, a - 1.0)
        n_tau = int(round((log10_tau_max - log10_tau_min) / log10_tau_step)) + 1
        if n_tau < 1:
            raise ValueError("empty tau support")
        tau = 10.0 ** (log10_tau_min + log10_tau_step * np.arange(n_tau))
        return cls(
            theta_nodes=(1.0 + x) / 2.0,
            theta_weights=w / w.sum(),
            tau_support=tau,
            theta0=float(theta0),
            nu0=float(nu0),
        )

    @classmethod
    def from_support(cls, tau_support, n_theta=128, theta0=0.5, nu0=1.0) -> "QuadGrid":
        base = cls.build(n_theta=n_theta, theta0=theta0, nu0=nu0)
        tau = np.asarray(tau_support, dtype=float)
        if np.any(tau <= 0) or np.any(np.diff(tau) <= 0):
            raise ValueError("tau support must be positive and strictly increasing")
        return cls(base.theta_nodes, base.theta_weights, tau, base.theta0, base.nu0)

    @property
    def size(self) -> int:
        return self.theta_nodes.size * self.tau_support.size

    @property
    def cell_theta(self) -> np.ndarray:
        return np.tile(self.theta_nodes, self.tau_support.size)

    @property
    def cell_tau(self) -> np.ndarray:
        return np.repeat(self.tau_support, self.theta_nodes.size)

    @property
    def log_weights(self) -> np.ndarray:
        lw = np.log(self.theta_weights) - np.log(self.tau_support.size)
        return np.tile(lw, self.tau_support.size)

    def describe(self) -> dict:
        return {
            "n_theta": int(self.theta_nodes.size),
            "theta0": self.theta0,
            "nu0": self.nu0,
            "tau_support": self.tau_support.tolist(),
        }


def log_beta_binomial(y_l, y_total, theta, tau):
    """``log[C(y, y_l) B(a + y_l, b + y - y_l) / B(a, b)]`` with
    ``a = theta*tau``, ``b = (1-theta)*tau``. Broadcasts over all inputs."""
    y_l = np.asarray(y_l)
    y_total = np.asarray(y_total)
    theta = np.asarray(theta, dtype=float)
    tau = np.asarray(tau, dtype=float)
    if np.any(y_l < 0) or np.any(y_l > y_total):
        raise ValueError("need 0 <= y_l <= y_total")
    if np.any((theta <= 0) | (theta >= 1)) or np.any(tau <= 0):
        raise ValueError("need 0 < theta < 1 and tau > 0")
    a = theta * tau
    b = tau - a
    y_r = y_total - y_l
    log_choose = gammaln(y_total + 1.0) - gammaln(y_l + 1.0) - gammaln(y_r + 1.0)
    return log_choose + betaln(a + y_l, b + y_r) - betaln(a, b)


def log_choose(y_l, y_total):
    y_l = np.asarray(y_l, dtype=float)
    y_total = np.asarray(y_total, dtype=float)
    return gammaln(y_total + 1.0) - gammaln(y_l + 1.0) - gammaln(y_total - y_l + 1.0)


def sample_tables(y_left, y_total, grid: QuadGrid) -> np.ndarray:
    """Log beta-binomial value of every (sample, node) at every grid cell.

    Inputs are ``(n, K)`` integer arrays; output is ``(n, K, grid.size)``.
    Splits with ``y(A) = 0`` contribute exactly zero.
    """
    y_left = np.atleast_2d(np.asarray(y_left, dtype=np.int64))
    y_total = np.atleast_2d(np.asarray(y_total, dtype=np.int64))
    if np.any(y_left < 0) or np.any(y_left > y_total):
        raise ValueError("need 0 <= y(A_l) <= y(A)")
    a = grid.cell_theta * grid.cell_tau
    b = grid.cell_tau - a
    base = betaln(a, b)
    pairs, inverse = np.unique(
        np.stack([y_left.ravel(), y_total.ravel()], axis=1), axis=0, return_inverse=True
    )
    rows = np.zeros((len(pairs), grid.size))
    for start in range(0, len(pairs), 256):
        yl = pairs[start : start + 256, 0:1].astype(float)
        y = pairs[start : start + 256, 1:2].astype(float)
        block = log_choose(yl, y) + betaln(a + yl, b + (y - yl)) - base
        rows[start : start + 256] = np.where(y == 0, 0.0, block)
    return rows[np.ravel(inverse)].reshape(y_left.shape + (grid.size,))


def _lse(values, log_weights):
    # an integrand identically one integrates to exactly one
    if not np.any(values):
        return 0.0
    return float(logsumexp(values + log_weights))


def log_marginal_active(y_left, y_total, grid: QuadGrid) -> float:
    """``log L1``: a set of samples at one node sharing a cluster mean and
    dispersion, both integrated out (beta prior on theta, discrete tau)."""
    y_left = np.asarray(y_left, dtype=np.int64).reshape(-1)
    y_total = np.asarray(y_total, dtype=np.int64).reshape(-1)
    if y_left.size == 0:
        return 0.0
    tables = sample_tables(y_left[:, None], y_total[:, None], grid)[:, 0, :]
    return _lse(tables.sum(axis=0), grid.log_weights)


def log_marginal_inactive(y_left, y_total, theta_tilde: float, tau_tilde: float) -> float:
    """``log L0`` at fixed shared parameters: a plain product of beta-binomials."""
    y_left = np.asarray(y_left, dtype=np.int64).reshape(-1)
    y_total = np.asarray(y_total, dtype=np.int64).reshape(-1)
    if y_left.size == 0:
        return 0.0
    return float(np.sum(log_beta_binomial(y_left, y_total, theta_tilde, tau_tilde)))


def log_marginal_inactive_integrated(y_left, y_total, grid: QuadGrid) -> float:
    """``log`` of L0 integrated over the shared parameters' base prior.

    The shared parameters have the same prior as a cluster's, so this is the
    active marginal of the whole sample set."""
    return log_marginal_active(y_left, y_total, grid)


class GridAccumulator:
    """Per-cluster, per-node sums of member log beta-binomial tables.

    ``tables`` is the ``(n, K, G)`` output of :func:`sample_tables`. Clusters
    are integer slots; the accumulator grows as needed.
    """

    def __init__(self, tables: np.ndarray, grid: QuadGrid, capacity: int = 8):
        self.tables = tables
        self.grid = grid
        self.log_weights = grid.log_weights
        n, k, g = tables.shape
        self.sums = np.zeros((capacity, k, g))
        self.sizes = np.zeros(capacity, dtype=np.int64)
        self.members: list[set[int]] = [set() for _ in range(capacity)]

    def _ensure(self, cluster):
        cap = self.sums.shape[0]
        if cluster >= cap:
            extra = max(cluster + 1, 2 * cap) - cap
            self.sums = np.concatenate([self.sums, np.zeros((extra,) + self.sums.shape[1:])])
            self.sizes = np.concatenate([self.sizes, np.zeros(extra, dtype=np.int64)])
            self.members.extend(set() for _ in range(extra))

    def add(self, cluster: int, sample: int) -> None:
        self._ensure(cluster)
        if sample in self.members[cluster]:
            raise ValueError(f"sample {sample} already in cluster {cluster}")
        self.members[cluster].add(sample)
        self.sums[cluster] += self.tables[sample]
        self.sizes[cluster] += 1

    def remove(self, cluster: int, sample: int) -> None:
        if cluster >= len(self.members) or sample not in self.members[cluster]:
            raise ValueError(f"sample {sample} is not in cluster {cluster}")
        self.members[cluster].remove(sample)
        self.sizes[cluster] -= 1
        if self.sizes[cluster] == 0:
            self.sums[cluster] = 0.0
        else:
            self.sums[cluster] -= self.tables[sample]

    def log_marginal(self, cluster: int, node: int) -> float:
        """``log L1`` of the cluster's members at one node (0 when empty)."""
        if cluster >= len(self.members) or self.sizes[cluster] == 0:
            return 0.0
        return _lse(self.sums[cluster, node], self.log_weights)

    def log_marginals(self, cluster: int) -> np.ndarray:
        if cluster >= len(self.members) or self.sizes[cluster] == 0:
            return np.zeros(self.sums.shape[1])
        return np.array([_lse(row, self.log_weights) for row in self.sums[cluster]])

    def log_predictive(self, cluster: int, sample: int, node: int) -> float:
        """``log L1(y_i, Y_c) - log L1(Y_c)`` for a sample not in the cluster."""
        joint = _lse(self.sums[cluster, node] + self.tables[sample, node], self.log_weights)
        return joint - self.log_marginal(cluster, node)

    def rebuild(self, cluster: int) -> np.ndarray:
        """Batch recomputation of a cluster's sums (the reference for drift checks)."""
        idx = sorted(self.members[cluster])
        if not idx:
            return np.zeros(self.sums.shape[1:])
        return self.tables[idx].sum(axis=0)
