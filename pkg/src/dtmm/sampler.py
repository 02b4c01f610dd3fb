"""Collapsed Gibbs sampler for the Dirichlet-tree multinomial mixture.

Cluster-level branching parameters and the shared parameters of inactive
nodes are integrated out on the quadrature grid, so the chain state is just
the labels ``c``, the activation bits ``gamma``, the DP precision ``beta`` and
the prior activation probability ``lambda``. One iteration updates them in
that order.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import expit, gammaln, logsumexp

from . import _kernels
from .marginal import QuadGrid, sample_tables
from .metrics import pairwise_bray_curtis, relative_abundance
from .tree import PhyloTree, node_stats

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class PriorConfig:
    theta0: float = 0.5
    nu0: float = 1.0
    a0: float = 1.0
    b0: float = 1.0
    beta_init: float = 1.0
    lambda_init: float = 0.5
    n_theta: int = 128
    log10_tau_min: float = -1.0
    log10_tau_max: float = 4.0
    log10_tau_step: float = 0.5
    iterations: int = 2000
    burn_in: int = 1000
    init_clusters: int = 5
    seed: int = 0
    per_node_lambda: bool = False
    b_grid_size: int = 512

    def __post_init__(self):
        if not 0 < self.theta0 < 1:
            raise ValueError("theta0 must lie in (0, 1)")
        for name in ("nu0", "a0", "b0", "beta_init"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not 0 < self.lambda_init < 1:
            raise ValueError("lambda_init must lie in (0, 1)")
        if self.n_theta < 1 or self.init_clusters < 1 or self.b_grid_size < 2:
            raise ValueError("grid sizes and init_clusters must be positive")
        if self.log10_tau_step <= 0 or self.log10_tau_max < self.log10_tau_min:
            raise ValueError("bad tau grid settings")
        if not 0 <= self.burn_in < self.iterations:
            raise ValueError("need 0 <= burn_in < iterations")

    def grid(self) -> QuadGrid:
        return QuadGrid.build(
            n_theta=self.n_theta,
            theta0=self.theta0,
            nu0=self.nu0,
            log10_tau_min=self.log10_tau_min,
            log10_tau_max=self.log10_tau_max,
            log10_tau_step=self.log10_tau_step,
        )

    def b_grid(self) -> np.ndarray:
        return np.linspace(1e-4, 1 - 1e-4, self.b_grid_size)

    def to_dict(self) -> dict:
        return asdict(self)


def gamma_prior_log_prob(gamma, n_leaves: int) -> float:
    """``log[(1/M) / C(M-1, sum(gamma))]``: uniform on the number of active
    nodes, then uniform over which nodes."""
    gamma = np.asarray(gamma)
    if gamma.shape != (n_leaves - 1,):
        raise ValueError(f"gamma must have length {n_leaves - 1}")
    k = int(gamma.sum())
    m = n_leaves - 1
    log_choose = gammaln(m + 1) - gammaln(k + 1) - gammaln(m - k + 1)
    return float(-math.log(n_leaves) - log_choose)


def activation_probability(log_bf, lam):
    """``lam*M / ((1-lam) + lam*M)`` with ``M = exp(log_bf)``, computed stably."""
    lam = np.asarray(lam, dtype=float)
    with np.errstate(divide="ignore"):
        logit = np.log(lam) - np.log1p(-lam)
    return expit(logit + np.asarray(log_bf, dtype=float))


def compact_labels(labels) -> np.ndarray:
    """Relabel ``0..k-1`` by order of first appearance."""
    labels = np.asarray(labels)
    _, first = np.unique(labels, return_index=True)
    order = labels[np.sort(first)]
    lookup = {int(v): i for i, v in enumerate(order)}
    return np.array([lookup[int(v)] for v in labels], dtype=np.int64)


def init_labels(counts, k_init: int, rng: np.random.Generator | None = None,
                max_swaps: int = 100) -> np.ndarray:
    """k-medoids (BUILD then SWAP) on Bray-Curtis distances of relative
    abundances. Returns compacted labels ``0..k-1``.

    The search is deterministic; ``rng`` is accepted for interface symmetry
    and is not consumed, so initialization never shifts the chain's stream.
    """
    del rng
    counts = np.asarray(counts)
    n = counts.shape[0]
    k = min(int(k_init), n)
    if k < 1:
        raise ValueError("k_init must be at least 1")
    if k == n:
        return np.arange(n, dtype=np.int64)
    if k == 1:
        return np.zeros(n, dtype=np.int64)
    d = pairwise_bray_curtis(relative_abundance(counts))

    medoids = [int(np.argmin(d.sum(axis=1)))]
    nearest = d[:, medoids[0]].copy()
    for _ in range(1, k):
        gain = np.maximum(nearest[:, None] - d, 0.0).sum(axis=0)
        gain[medoids] = -np.inf
        best = int(np.argmax(gain))
        medoids.append(best)
        nearest = np.minimum(nearest, d[:, best])

    for _ in range(max_swaps):
        dm = d[:, medoids]
        cost = dm.min(axis=1).sum()
        best_delta, best_swap = -1e-12, None
        for slot in range(k):
            others = np.delete(dm, slot, axis=1).min(axis=1)
            new = np.minimum(others[:, None], d).sum(axis=0)
            new[medoids] = np.inf
            h = int(np.argmin(new))
            if new[h] - cost < best_delta:
                best_delta, best_swap = new[h] - cost, (slot, h)
        if best_swap is None:
            break
        medoids[best_swap[0]] = best_swap[1]

    return compact_labels(np.argmin(d[:, medoids], axis=1))


@dataclass
class SamplerState:
    labels: np.ndarray      # 0-based, contiguous by first appearance
    gamma: np.ndarray       # int8 activation bits, internal pre-order
    beta: float
    lam: float | np.ndarray

    @property
    def n_clusters(self) -> int:
        return int(self.labels.max()) + 1

    def copy(self) -> "SamplerState":
        lam = self.lam.copy() if isinstance(self.lam, np.ndarray) else self.lam
        return SamplerState(self.labels.copy(), self.gamma.copy(), self.beta, lam)


def actual_labels(labels, gamma) -> np.ndarray:
    """1-based labels with no clustering unless some node is active."""
    labels = np.asarray(labels)
    if not np.any(gamma) or np.all(labels == labels[0]):
        return np.ones(labels.shape, dtype=np.int64)
    return compact_labels(labels) + 1


def actual_activation(labels, gamma) -> np.ndarray:
    labels = np.asarray(labels)
    gamma = np.asarray(gamma, dtype=np.int8)
    if not np.any(gamma) or np.all(labels == labels[0]):
        return np.zeros_like(gamma)
    return gamma.copy()


def _rows(x, n, dtype):
    x = np.asarray(x, dtype=dtype)
    return x if x.ndim == 2 else x.reshape(n, -1)


@dataclass
class PosteriorChain:
    """Retained draws. ``c`` and ``g`` hold 1-based labels."""

    t: np.ndarray
    c: np.ndarray
    gamma: np.ndarray
    beta: np.ndarray
    lam: np.ndarray
    g: np.ndarray = field(init=False)
    s: np.ndarray = field(init=False)

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=np.int64)
        self.c = _rows(self.c, len(self.t), np.int64)
        self.gamma = _rows(self.gamma, len(self.t), np.int8)
        self.beta = np.asarray(self.beta, dtype=float)
        self.lam = np.asarray(self.lam, dtype=float)
        self.g = np.array([actual_labels(c, g) for c, g in zip(self.c, self.gamma)],
                          dtype=np.int64).reshape(self.c.shape)
        self.s = np.array([actual_activation(c, g) for c, g in zip(self.c, self.gamma)],
                          dtype=np.int8).reshape(self.gamma.shape)

    def __len__(self):
        return len(self.t)

    @property
    def n_clusters(self) -> np.ndarray:
        return self.c.max(axis=1) if len(self) else np.zeros(0, dtype=np.int64)

    @classmethod
    def concat(cls, chains) -> "PosteriorChain":
        chains = list(chains)
        return cls(
            t=np.concatenate([ch.t for ch in chains]),
            c=np.concatenate([ch.c for ch in chains]),
            gamma=np.concatenate([ch.gamma for ch in chains]),
            beta=np.concatenate([ch.beta for ch in chains]),
            lam=np.concatenate([ch.lam for ch in chains]),
        )


@dataclass
class Trace:
    """Per-iteration summaries over the whole run, burn-in included."""

    n_clusters: list = field(default_factory=list)
    n_active: list = field(default_factory=list)
    beta: list = field(default_factory=list)
    lam: list = field(default_factory=list)

    def append(self, state: SamplerState):
        self.n_clusters.append(state.n_clusters)
        self.n_active.append(int(state.gamma.sum()))
        self.beta.append(float(state.beta))
        self.lam.append(float(np.mean(state.lam)))

    def as_array(self) -> np.ndarray:
        return np.column_stack([self.n_clusters, self.n_active, self.beta, self.lam])


class GibbsSampler:
    """Owns the data tables, the per-cluster grid sums and the chain state."""

    def __init__(self, counts, tree: PhyloTree, config: PriorConfig | None = None,
                 rng: np.random.Generator | None = None, labels=None):
        self.tree = tree
        self.config = config or PriorConfig()
        self.rng = rng if rng is not None else np.random.default_rng(self.config.seed)
        self.grid = self.config.grid()
        self.log_w = self.grid.log_weights
        self.b_grid = self.config.b_grid()
        self._log_b_terms = np.log(self.b_grid) - np.log1p(-self.b_grid)
        self.set_data(counts)
        m = tree.n_internal
        lam = (np.full(m, self.config.lambda_init) if self.config.per_node_lambda
               else float(self.config.lambda_init))
        if labels is None:
            labels = init_labels(self.counts, self.config.init_clusters)
        self.state = SamplerState(
            labels=compact_labels(labels),
            gamma=np.ones(m, dtype=np.int8),
            beta=float(self.config.beta_init),
            lam=lam,
        )
        if self.state.labels.shape != (self.n,):
            raise ValueError("initial labels do not match the sample count")
        self.iteration = 0
        self._rebuild()

    # -- data ------------------------------------------------------------

    def set_data(self, counts) -> None:
        """Install (or replace) the count table; the chain state is kept."""
        counts = np.asarray(counts)
        if counts.ndim != 2 or counts.shape[1] != self.tree.n_leaves:
            raise ValueError(
                f"count table has shape {counts.shape}; expected (n, {self.tree.n_leaves})"
            )
        if counts.shape[0] < 1:
            raise ValueError("no samples")
        if np.any(counts < 0) or not np.all(np.equal(np.mod(counts, 1), 0)):
            raise ValueError("counts must be nonnegative integers")
        self.counts = counts.astype(np.int64)
        self.n = counts.shape[0]
        y_left, y_total = node_stats(self.tree, self.counts)
        self.tables = np.ascontiguousarray(sample_tables(y_left, y_total, self.grid))
        self.allzero = np.ascontiguousarray((y_total == 0).all(axis=0))
        self.prior_pred = np.array(
            [[_kernels.lse_row(self.tables[i, a], self.log_w, self.allzero[a])
              for a in range(self.tree.n_internal)] for i in range(self.n)]
        ).reshape(self.n, self.tree.n_internal)
        # the shared-parameter marginal is the one-cluster marginal of all samples
        sums = np.zeros((1,) + self.tables.shape[1:])
        lm = np.zeros((1, self.tree.n_internal))
        _kernels.rebuild(np.zeros(self.n, dtype=np.int64), 1, self.tables, self.log_w,
                         self.allzero, sums, lm, np.zeros(1, dtype=np.int64))
        self.inactive = lm[0].copy()
        self.sums = np.zeros((self.n,) + self.tables.shape[1:])
        self.lmarg = np.zeros((self.n, self.tree.n_internal))
        self.sizes = np.zeros(self.n, dtype=np.int64)
        if hasattr(self, "state"):
            self._rebuild()

    def _rebuild(self) -> None:
        k = self.state.n_clusters
        self.sums[k:] = 0.0
        self.lmarg[k:] = 0.0
        _kernels.rebuild(self.state.labels, k, self.tables, self.log_w, self.allzero,
                         self.sums, self.lmarg, self.sizes)

    # -- full conditionals -------------------------------------------------

    def log_bayes_factors(self) -> np.ndarray:
        """Per-node ``log M10``: product of cluster marginals over the
        shared-parameter marginal of all samples."""
        k = self.state.n_clusters
        out = self.lmarg[:k].sum(axis=0) - self.inactive
        out[self.allzero] = 0.0
        if k == 1:
            out[:] = 0.0
        return out

    def update_gamma(self) -> None:
        p = activation_probability(self.log_bayes_factors(), self.state.lam)
        u = self.rng.random(self.tree.n_internal)
        self.state.gamma = (u < p).astype(np.int8)

    def update_labels(self) -> None:
        st = self.state
        active = np.flatnonzero(st.gamma).astype(np.int64)
        u = self.rng.random(self.n)
        labels = st.labels.copy()
        _kernels.label_sweep(labels, self.sizes, self.sums, self.lmarg, self.tables,
                             self.log_w, self.prior_pred, active, self.allzero,
                             math.log(st.beta), np.arange(self.n), u)
        st.labels = compact_labels(labels)
        self._rebuild()

    def update_label(self, i: int) -> None:
        """Redraw a single sample's label with the sweep kernel."""
        st = self.state
        labels = st.labels.copy()
        _kernels.label_sweep(labels, self.sizes, self.sums, self.lmarg, self.tables,
                             self.log_w, self.prior_pred, np.flatnonzero(st.gamma).astype(np.int64),
                             self.allzero, math.log(st.beta), np.array([i], dtype=np.int64),
                             self.rng.random(1))
        st.labels = compact_labels(labels)
        self._rebuild()

    def label_probabilities(self, i: int) -> np.ndarray:
        """Conditional law of sample ``i``'s label given the others.

        Slow reference evaluation straight from member sets. Entry ``k`` is
        existing cluster ``k`` (after removing ``i``, compacted); the last
        entry is a new cluster.
        """
        st = self.state
        active = np.flatnonzero(st.gamma)
        others = np.delete(np.arange(self.n), i)
        rest = compact_labels(st.labels[others])
        logw = self.log_w

        def lml(members, a):
            if self.allzero[a] or len(members) == 0:
                return 0.0
            return float(logsumexp(self.tables[members, a].sum(axis=0) + logw))

        k = int(rest.max()) + 1 if len(rest) else 0
        out = np.empty(k + 1)
        for c in range(k):
            members = others[rest == c]
            s = math.log(len(members))
            for a in active:
                s += lml(np.append(members, i), a) - lml(members, a)
            out[c] = s
        out[k] = math.log(st.beta) + sum(lml(np.array([i]), a) for a in active)
        return np.exp(out - logsumexp(out))

    def beta_log_density(self, n_clusters: int) -> np.ndarray:
        """Log density of ``b = beta/(1+beta)`` on the grid, up to a constant."""
        x = self.b_grid / (1.0 - self.b_grid)
        return n_clusters * self._log_b_terms + gammaln(x) - gammaln(x + self.n)

    def update_beta(self) -> None:
        logp = self.beta_log_density(self.state.n_clusters)
        p = np.exp(logp - logp.max())
        idx = int(np.searchsorted(np.cumsum(p), self.rng.random() * p.sum(), side="right"))
        b = self.b_grid[min(idx, len(p) - 1)]
        self.state.beta = float(b / (1.0 - b))

    def update_lambda(self) -> None:
        cfg, g = self.config, self.state.gamma
        if cfg.per_node_lambda:
            self.state.lam = self.rng.beta(cfg.a0 + g, cfg.b0 + 1 - g)
        else:
            on = int(g.sum())
            self.state.lam = float(self.rng.beta(cfg.a0 + on, cfg.b0 + len(g) - on))

    def sweep(self) -> None:
        self.update_gamma()
        self.update_labels()
        self.update_beta()
        self.update_lambda()
        self.iteration += 1

    # -- running -----------------------------------------------------------

    def run(self, iterations: int | None = None, burn_in: int | None = None,
            trace: Trace | None = None, callback=None) -> PosteriorChain:
        """Advance to iteration ``iterations`` and keep draws after ``burn_in``.

        A restored sampler picks up at its saved iteration index.
        """
        total = self.config.iterations if iterations is None else iterations
        burn = self.config.burn_in if burn_in is None else burn_in
        if total <= burn:
            raise ValueError("need iterations > burn_in")
        kept = {"t": [], "c": [], "gamma": [], "beta": [], "lam": []}
        while self.iteration < total:
            self.sweep()
            if trace is not None:
                trace.append(self.state)
            if self.iteration > burn:
                st = self.state
                kept["t"].append(self.iteration)
                kept["c"].append(st.labels + 1)
                kept["gamma"].append(st.gamma.copy())
                kept["beta"].append(st.beta)
                kept["lam"].append(np.copy(st.lam))
            if callback is not None:
                callback(self)
        m = self.tree.n_internal
        lam = np.array(kept["lam"], dtype=float)
        return PosteriorChain(
            t=np.array(kept["t"], dtype=np.int64),
            c=np.array(kept["c"], dtype=np.int64).reshape(-1, self.n),
            gamma=np.array(kept["gamma"], dtype=np.int8).reshape(-1, m),
            beta=np.array(kept["beta"], dtype=float),
            lam=lam,
        )

    # -- checkpoints -------------------------------------------------------

    def snapshot(self) -> dict:
        st = self.state
        return {
            "format": "dtmm-checkpoint",
            "version": CHECKPOINT_VERSION,
            "iteration": self.iteration,
            "labels": (st.labels + 1).tolist(),
            "gamma": st.gamma.tolist(),
            "beta": st.beta,
            "lambda": np.asarray(st.lam).tolist(),
            "rng": self.rng.bit_generator.state,
            "tree": self.tree.digest(),
        }

    def restore(self, snap: dict) -> None:
        if snap.get("format") != "dtmm-checkpoint" or snap.get("version") != CHECKPOINT_VERSION:
            raise ValueError("not a supported checkpoint")
        if snap["tree"] != self.tree.digest():
            raise ValueError("checkpoint was written for a different tree")
        labels = np.asarray(snap["labels"], dtype=np.int64) - 1
        if labels.shape != (self.n,):
            raise ValueError("checkpoint sample count does not match the data")
        lam = snap["lambda"]
        self.state = SamplerState(
            labels=compact_labels(labels),
            gamma=np.asarray(snap["gamma"], dtype=np.int8),
            beta=float(snap["beta"]),
            lam=np.asarray(lam, dtype=float) if isinstance(lam, list) else float(lam),
        )
        state = snap["rng"]
        if state["bit_generator"] != type(self.rng.bit_generator).__name__:
            raise ValueError(f"checkpoint uses {state['bit_generator']}")
        self.rng.bit_generator.state = state
        self.iteration = int(snap["iteration"])
        self._rebuild()

    def save_checkpoint(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.snapshot(), fh)

    def load_checkpoint(self, path) -> None:
        with open(path, encoding="utf-8") as fh:
            self.restore(json.load(fh))


def gibbs_run(counts, tree: PhyloTree, config: PriorConfig | None = None,
              rng: np.random.Generator | None = None, trace: Trace | None = None
              ) -> PosteriorChain:
    """Run one chain for ``config.iterations`` sweeps and keep the last
    ``iterations - burn_in`` draws."""
    sampler = GibbsSampler(counts, tree, config, rng)
    return sampler.run(trace=trace)


def sample_prior_state(n: int, n_internal: int, config: PriorConfig,
                       rng: np.random.Generator) -> SamplerState:
    """Draw ``(lambda, gamma, beta, c)`` from the prior the sampler targets:
    lambda from its beta prior, gamma iid given lambda, b uniform on the
    sampler's grid, and labels from the Chinese restaurant process."""
    lam = rng.beta(config.a0, config.b0, size=n_internal if config.per_node_lambda else None)
    gamma = (rng.random(n_internal) < lam).astype(np.int8)
    b = config.b_grid()[rng.integers(config.b_grid_size)]
    beta = b / (1.0 - b)
    labels = np.zeros(n, dtype=np.int64)
    sizes = [1]
    for i in range(1, n):
        w = np.array(sizes + [beta], dtype=float)
        k = int(np.searchsorted(np.cumsum(w), rng.random() * w.sum(), side="right"))
        k = min(k, len(sizes))
        if k == len(sizes):
            sizes.append(1)
        else:
            sizes[k] += 1
        labels[i] = k
    lam = lam if config.per_node_lambda else float(lam)
    return SamplerState(labels, gamma, float(beta), lam)


def simulate_counts(tree: PhyloTree, state: SamplerState, totals, grid: QuadGrid,
                    rng: np.random.Generator) -> np.ndarray:
    """Counts from the generative model given labels and activation bits.

    Each active node gets fresh per-cluster ``(theta, tau)``, each inactive
    node one shared pair; ``theta`` follows the beta prior and ``tau`` is
    uniform on the grid's support. Compositions are integrated out by
    drawing beta-binomial splits down the tree.
    """
    totals = np.asarray(totals, dtype=np.int64)
    labels = state.labels
    n, k = len(labels), int(labels.max()) + 1
    m = tree.n_internal
    a0, b0 = grid.theta0 * grid.nu0, (1 - grid.theta0) * grid.nu0
    theta = np.empty((n, m))
    tau = np.empty((n, m))
    for a in range(m):
        groups = k if state.gamma[a] else 1
        th = rng.beta(a0, b0, size=groups)
        ta = grid.tau_support[rng.integers(grid.tau_support.size, size=groups)]
        idx = labels if state.gamma[a] else np.zeros(n, dtype=np.int64)
        theta[:, a] = th[idx]
        tau[:, a] = ta[idx]
    mass = np.zeros((n, tree.node_count), dtype=np.int64)
    mass[:, 0] = totals
    for a in range(m):
        br = rng.beta(theta[:, a] * tau[:, a], (1 - theta[:, a]) * tau[:, a])
        left = rng.binomial(mass[:, a], br)
        mass[:, tree.left[a]] = left
        mass[:, tree.right[a]] = mass[:, a] - left
    return mass[:, m:]
