"""Dissimilarities and clustering-agreement metrics."""

from __future__ import annotations

import numpy as np


def relative_abundance(counts) -> np.ndarray:
    """Row-normalize counts; all-zero rows stay zero."""
    x = np.asarray(counts, dtype=float)
    tot = x.sum(axis=-1, keepdims=True)
    return np.divide(x, tot, out=np.zeros_like(x), where=tot > 0)


def bray_curtis(x, y) -> float:
    """``1 - sum(min(x, y))`` for relative-abundance vectors."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape:
        raise ValueError("vectors differ in length")
    return float(1.0 - np.minimum(x, y).sum())


def pairwise_bray_curtis(rel) -> np.ndarray:
    rel = np.asarray(rel, dtype=float)
    n = rel.shape[0]
    d = np.empty((n, n))
    for i in range(n):
        d[i] = 1.0 - np.minimum(rel[i], rel).sum(axis=1)
    np.fill_diagonal(d, 0.0)
    return np.clip(d, 0.0, 1.0)


def r_squared(counts, labels) -> float:
    """Ratio of within-cluster to total pairwise squared Bray-Curtis sums.

    Within-cluster sums are scaled by ``1/n_k`` and the total by ``1/n``.
    """
    labels = np.asarray(labels)
    d2 = pairwise_bray_curtis(relative_abundance(counts)) ** 2
    n = len(labels)
    total = d2[np.triu_indices(n, 1)].sum() / n
    within = 0.0
    for k in np.unique(labels):
        idx = np.flatnonzero(labels == k)
        sub = d2[np.ix_(idx, idx)]
        within += sub[np.triu_indices(len(idx), 1)].sum() / len(idx)
    if total == 0:
        raise ValueError("all samples are identical; R^2 is undefined")
    return float(within / total)


def _pair_counts(labels):
    _, inv, sizes = np.unique(np.asarray(labels), return_inverse=True, return_counts=True)
    return inv, sizes


def jaccard_index(c, c0) -> float:
    """Pairs co-clustered in both partitions over pairs co-clustered in either."""
    c = np.asarray(c).ravel()
    c0 = np.asarray(c0).ravel()
    if c.shape != c0.shape:
        raise ValueError("label vectors differ in length")
    a, sa = _pair_counts(c)
    b, sb = _pair_counts(c0)
    table = np.zeros((sa.size, sb.size), dtype=np.int64)
    np.add.at(table, (a, b), 1)
    both = int((table * (table - 1) // 2).sum())
    in_c = int((sa * (sa - 1) // 2).sum())
    in_c0 = int((sb * (sb - 1) // 2).sum())
    union = in_c + in_c0 - both
    if union == 0:
        return 1.0
    return both / union


def rmse_jaccard(jaccards) -> float:
    j = np.asarray(jaccards, dtype=float)
    if j.size == 0:
        raise ValueError("no Jaccard values")
    return float(np.sqrt(np.mean((j - 1.0) ** 2)))
