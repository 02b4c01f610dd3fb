"""Simulated six-OTU mixtures (scenarios I to V) and evaluation metrics."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dirichlet_tree import DtParams, LogisticNormalParams, dt_sample, ln_projection, ln_sample
from .metrics import bray_curtis, jaccard_index, pairwise_bray_curtis, r_squared, rmse_jaccard
from .tree import PhyloTree, parse_newick

__all__ = [
    "T6_NEWICK", "t6", "ScenarioConfig", "SimulatedDataset", "sample_totals", "generate",
    "cluster_kernels", "bray_curtis", "pairwise_bray_curtis", "r_squared", "jaccard_index",
    "rmse_jaccard",
]

T6_NEWICK = "((o1,o2),((o3,o4),(o5,o6)));"

SCENARIOS = ("I", "II", "III", "IV", "V")
LEVELS = ("W", "M", "S")

# signal parameter per scenario and level
SIGNAL = {
    "I": {"W": 1.0, "M": 3.0, "S": 6.0},
    "II": {"W": 1.0, "M": 3.0, "S": 6.0},
    "III": {"W": 3.0, "M": 6.0, "S": 9.0},
    "IV": {"W": (5.0, 3.0), "M": (2.0, 2.0), "S": (1.0, 1.0)},
    "V": {"W": (6.0, 6.0), "M": (3.0, 3.0), "S": (1.0, 1.0)},
}

DIRICHLET_BASE = np.array([
    [2, 2, 5, 2, 3, 1],
    [2, 4, 3, 2, 1, 3],
    [2, 6, 1, 2, 2, 2],
], dtype=float)


def t6() -> PhyloTree:
    return parse_newick(T6_NEWICK)


@dataclass(frozen=True)
class ScenarioConfig:
    scenario: str = "II"
    level: str = "S"
    n: int = 90
    null: bool = False
    weights: tuple = (4 / 9, 3 / 9, 2 / 9)
    m: float = 15000.0
    s: float = 20.0
    seed: int = 0

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ValueError(f"scenario must be one of {SCENARIOS}")
        if self.level not in LEVELS:
            raise ValueError(f"level must be one of {LEVELS}")
        if self.n < 1 or self.m <= 0 or self.s <= 0:
            raise ValueError("n, m and s must be positive")
        w = np.asarray(self.weights, dtype=float)
        if np.any(w <= 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("mixture weights must be positive and sum to one")

    @property
    def signal(self):
        return SIGNAL[self.scenario][self.level]

    @property
    def n_clusters(self) -> int:
        return 1 if self.null else len(self.weights)


@dataclass
class SimulatedDataset:
    counts: np.ndarray
    labels: np.ndarray          # 1-based true labels
    totals: np.ndarray
    compositions: np.ndarray
    tree: PhyloTree = field(default_factory=t6)

    @property
    def sample_ids(self):
        return [f"s{i + 1}" for i in range(len(self.labels))]


def sample_totals(m: float, s: float, n: int, rng: np.random.Generator) -> np.ndarray:
    """Negative-binomial totals with mean ``m`` and variance ``m + m^2/s``."""
    if m <= 0 or s <= 0:
        raise ValueError("m and s must be positive")
    return rng.negative_binomial(s, s / (s + m), size=n).astype(np.int64)


def dt_kernel(alpha: float, tau_scale: float, k: int) -> DtParams:
    """Node-wise beta pseudo-counts for the six-leaf tree (pre-order B..F)."""
    nu = [(10 * alpha, 2 * alpha), (6 * alpha, 6 * alpha), (2 * alpha, 10 * alpha)][k]
    g = tau_scale
    left = [12 * alpha, nu[0], 8 * g, 4 * g, 2 * g]
    right = [12 * alpha, nu[1], 4 * g, 4 * g, 2 * g]
    return DtParams.from_pseudocounts(left, right)


def cluster_kernels(config: ScenarioConfig, tree: PhyloTree | None = None) -> list:
    """Per-cluster kernel parameters: DtParams, Dirichlet alphas, or
    LogisticNormalParams depending on the scenario."""
    tree = tree or t6()
    sig = config.signal
    k = config.n_clusters
    if config.scenario == "I":
        return [dt_kernel(sig, 0.1, j) for j in range(k)]
    if config.scenario == "II":
        return [DIRICHLET_BASE[j] * sig for j in range(k)]
    if config.scenario == "III":
        return [ln_projection(tree, dt_kernel(sig, 0.5, j)) for j in range(k)]
    if config.scenario == "IV":
        a, b = sig
        mus = [(3.0, 1.0, a, b, 0.0), (2.43, 2.43, a, b, 0.0), (1.0, 3.0, a, b, 0.0)]
        cov = np.diag([0.05, 0.05, 1.0, 1.0, 1.0])
    else:
        c, d = sig
        mus = [(c, d, 3.5, 3.0, 2.5), (c, d, 2.5, 3.5, 3.0), (c, d, 3.0, 2.5, 3.5)]
        cov = np.diag([1.0, 1.0, 0.05, 0.05, 0.05])
    return [LogisticNormalParams(np.array(mus[j]), cov) for j in range(k)]


def draw_compositions(kernel, size: int, rng: np.random.Generator, tree: PhyloTree) -> np.ndarray:
    if isinstance(kernel, DtParams):
        return dt_sample(tree, kernel, rng, size=size)
    if isinstance(kernel, LogisticNormalParams):
        return ln_sample(kernel, rng, size=size)
    return rng.dirichlet(kernel, size=size)


def generate(config: ScenarioConfig, rng: np.random.Generator | None = None) -> SimulatedDataset:
    """Labels from the mixture weights, compositions from the labeled
    kernel, counts multinomial given negative-binomial totals."""
    rng = rng if rng is not None else np.random.default_rng(config.seed)
    tree = t6()
    kernels = cluster_kernels(config, tree)
    n = config.n
    if config.null:
        labels = np.zeros(n, dtype=np.int64)
    else:
        labels = rng.choice(len(kernels), size=n, p=np.asarray(config.weights))
    totals = sample_totals(config.m, config.s, n, rng)
    comps = np.empty((n, tree.n_leaves))
    for k, kern in enumerate(kernels):
        idx = np.flatnonzero(labels == k)
        if idx.size:
            comps[idx] = draw_compositions(kern, idx.size, rng, tree)
    comps /= comps.sum(axis=1, keepdims=True)
    counts = rng.multinomial(totals, comps)
    return SimulatedDataset(counts.astype(np.int64), labels + 1, totals, comps, tree)
