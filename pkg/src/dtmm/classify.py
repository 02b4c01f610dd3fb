"""Supervised classification with class-specific Dirichlet-tree kernels.

Each class has its own branching parameters at active nodes; inactive
nodes share one set across classes. Activation bits are given independent
Bernoulli(lambda0) priors, so both the activation posterior and the
gamma-averaged predictive factorize over nodes.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass

import numpy as np
from scipy.special import expit, logsumexp

from .marginal import QuadGrid, sample_tables
from .tree import PhyloTree, node_stats

MODEL_VERSION = 1


def _lse_rows(summed, log_w):
    out = logsumexp(summed + log_w, axis=-1)
    return np.where(np.any(summed != 0, axis=-1), out, 0.0)


@dataclass
class ClassifierModel:
    tree: PhyloTree
    grid: QuadGrid
    classes: np.ndarray        # original class labels, sorted
    priors: np.ndarray         # pi_k
    class_sums: np.ndarray     # (K, M-1, G) summed log tables per class
    all_sums: np.ndarray       # (M-1, G) summed over every training sample
    lambda0: float

    @property
    def log_l1(self) -> np.ndarray:
        """``log L1(Y_k)`` per class and node."""
        return _lse_rows(self.class_sums, self.grid.log_weights)

    @property
    def log_l0(self) -> np.ndarray:
        """``log`` of the shared-parameter marginal of all training data per node."""
        return _lse_rows(self.all_sums, self.grid.log_weights)

    def activation_log_odds(self) -> np.ndarray:
        lam = self.lambda0
        with np.errstate(divide="ignore"):
            prior = np.log(lam) - np.log1p(-lam)
        return prior + self.log_l1.sum(axis=0) - self.log_l0

    def activation_posterior(self) -> np.ndarray:
        return expit(self.activation_log_odds())

    def _query_tables(self, y_new):
        y_new = np.asarray(y_new)
        if y_new.shape != (self.tree.n_leaves,):
            raise ValueError(f"query has {y_new.size} counts; the tree has {self.tree.n_leaves} leaves")
        yl, yt = node_stats(self.tree, y_new[None, :])
        return sample_tables(yl, yt, self.grid)[0]

    def predict_log_terms(self, y_new):
        """Per-node log predictive ratios: active (K, M-1) and shared (M-1)."""
        t = self._query_tables(y_new)
        lw = self.grid.log_weights
        active = _lse_rows(self.class_sums + t, lw) - self.log_l1
        shared = _lse_rows(self.all_sums + t, lw) - self.log_l0
        return active, shared

    def predict(self, y_new) -> np.ndarray:
        active, shared = self.predict_log_terms(y_new)
        odds = self.activation_log_odds()
        log_w1 = -np.logaddexp(0.0, -odds)
        log_w0 = -np.logaddexp(0.0, odds)
        per_node = np.logaddexp(log_w1 + active, log_w0 + shared)
        score = np.log(self.priors) + per_node.sum(axis=1)
        return np.exp(score - logsumexp(score))

    def to_json(self) -> str:
        return json.dumps({
            "format": "dtmm-classifier",
            "version": MODEL_VERSION,
            "tree": self.tree.to_newick(),
            "grid": self.grid.describe(),
            "classes": self.classes.tolist(),
            "priors": self.priors.tolist(),
            "lambda0": self.lambda0,
            "class_sums": self.class_sums.tolist(),
            "all_sums": self.all_sums.tolist(),
        })

    @classmethod
    def from_json(cls, text: str) -> "ClassifierModel":
        from .tree import parse_newick

        obj = json.loads(text)
        if obj.get("format") != "dtmm-classifier" or obj.get("version") != MODEL_VERSION:
            raise ValueError("not a supported classifier model")
        g = obj["grid"]
        grid = QuadGrid.from_support(g["tau_support"], g["n_theta"], g["theta0"], g["nu0"])
        return cls(
            tree=parse_newick(obj["tree"]),
            grid=grid,
            classes=np.array(obj["classes"]),
            priors=np.array(obj["priors"]),
            class_sums=np.array(obj["class_sums"]),
            all_sums=np.array(obj["all_sums"]),
            lambda0=float(obj["lambda0"]),
        )


def train(counts, labels, tree: PhyloTree, grid: QuadGrid | None = None,
          lambda0: float = 0.5, priors=None) -> ClassifierModel:
    grid = grid or QuadGrid.build()
    counts = np.asarray(counts)
    labels = np.asarray(labels)
    if counts.ndim != 2 or counts.shape[1] != tree.n_leaves:
        raise ValueError("count table does not match the tree")
    if labels.shape != (counts.shape[0],):
        raise ValueError("one class label per sample is required")
    if not 0 < lambda0 < 1:
        raise ValueError("lambda0 must lie in (0, 1)")
    classes, inv, sizes = np.unique(labels, return_inverse=True, return_counts=True)
    if priors is None:
        priors = sizes / sizes.sum()
    else:
        priors = np.asarray(priors, dtype=float)
        if priors.shape != classes.shape or np.any(priors <= 0):
            raise ValueError("need one positive prior per class")
        priors = priors / priors.sum()
    yl, yt = node_stats(tree, counts)
    tables = sample_tables(yl, yt, grid)
    class_sums = np.stack([tables[inv == k].sum(axis=0) for k in range(classes.size)])
    return ClassifierModel(tree, grid, classes, priors, class_sums, tables.sum(axis=0), lambda0)


def predict_enumerate(model: ClassifierModel, y_new, max_nodes: int = 16) -> np.ndarray:
    """Class posterior by summing over every activation configuration.

    Reference implementation for validating :meth:`ClassifierModel.predict`.
    """
    m = model.tree.n_internal
    if m > max_nodes:
        raise ValueError(f"enumeration over 2^{m} configurations is disabled")
    active, shared = model.predict_log_terms(y_new)
    l1, l0 = model.log_l1.sum(axis=0), model.log_l0
    lam = model.lambda0
    configs = np.array(list(itertools.product((0, 1), repeat=m)), dtype=bool)
    log_prior = np.where(configs, np.log(lam), np.log1p(-lam)).sum(axis=1)
    log_post = log_prior + np.where(configs, l1, l0).sum(axis=1)
    log_post -= logsumexp(log_post)
    score = np.empty(len(model.classes))
    for k in range(len(model.classes)):
        pred = np.where(configs, active[k], shared).sum(axis=1)
        score[k] = np.log(model.priors[k]) + logsumexp(log_post + pred)
    return np.exp(score - logsumexp(score))
