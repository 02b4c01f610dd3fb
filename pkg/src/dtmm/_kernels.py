"""Compiled inner loops for the label sweep and cluster-sum rebuilds."""

import numpy as np
from numba import njit

# cells more than this many nats below the running max are dropped from
# log-sum-exp reductions; the neglected relative mass is below 1e-14
_CUTOFF = 40.0


@njit(cache=True)
def lse_row(row, log_w, allzero):
    if allzero:
        return 0.0
    m = -np.inf
    for g in range(row.shape[0]):
        v = row[g] + log_w[g]
        if v > m:
            m = v
    if m == -np.inf:
        return m
    s = 0.0
    for g in range(row.shape[0]):
        v = row[g] + log_w[g] - m
        if v > -_CUTOFF:
            s += np.exp(v)
    return m + np.log(s)


@njit(cache=True)
def lse_pair(row, extra, log_w, scratch):
    m = -np.inf
    for g in range(row.shape[0]):
        v = row[g] + extra[g] + log_w[g]
        scratch[g] = v
        if v > m:
            m = v
    s = 0.0
    for g in range(row.shape[0]):
        v = scratch[g] - m
        if v > -_CUTOFF:
            s += np.exp(v)
    return m + np.log(s)


@njit(cache=True)
def rebuild(labels, n_clusters, tables, log_w, allzero, sums, lmarg, sizes):
    """Recompute cluster sums and log marginals from the labels."""
    n, n_nodes, n_cells = tables.shape
    sums[:n_clusters] = 0.0
    sizes[:] = 0
    for i in range(n):
        k = labels[i]
        sizes[k] += 1
        for a in range(n_nodes):
            if allzero[a]:
                continue
            for g in range(n_cells):
                sums[k, a, g] += tables[i, a, g]
    for k in range(n_clusters):
        for a in range(n_nodes):
            lmarg[k, a] = lse_row(sums[k, a], log_w, allzero[a])


@njit(cache=True)
def label_sweep(labels, sizes, sums, lmarg, tables, log_w, prior_pred,
                active, allzero, log_beta, order, uniforms):
    """Sequential collapsed label updates for the samples in ``order``.

    Cluster slots with ``sizes == 0`` are free. ``lmarg`` is kept exact for
    active nodes only; callers rebuild everything after the pass.
    """
    cap = sizes.shape[0]
    n_active = active.shape[0]
    n_cells = tables.shape[2]
    scratch = np.empty(n_cells)
    cand = np.empty((cap, n_active))
    old = np.empty(n_active)
    logp = np.empty(cap + 1)
    for step in range(order.shape[0]):
        i = order[step]
        c = labels[i]
        for j in range(n_active):
            old[j] = lmarg[c, active[j]]
        sizes[c] -= 1
        if sizes[c] == 0:
            sums[c] = 0.0
            for j in range(n_active):
                lmarg[c, active[j]] = 0.0
        else:
            for j in range(n_active):
                a = active[j]
                if allzero[a]:
                    continue
                for g in range(n_cells):
                    sums[c, a, g] -= tables[i, a, g]
                lmarg[c, a] = lse_row(sums[c, a], log_w, False)

        top = -np.inf
        for k in range(cap):
            if sizes[k] == 0:
                logp[k] = -np.inf
                continue
            s = np.log(sizes[k])
            for j in range(n_active):
                a = active[j]
                if allzero[a]:
                    cand[k, j] = 0.0
                    continue
                if k == c:
                    v = old[j]
                else:
                    v = lse_pair(sums[k, a], tables[i, a], log_w, scratch)
                cand[k, j] = v
                s += v - lmarg[k, a]
            logp[k] = s
            if s > top:
                top = s
        s = log_beta
        for j in range(n_active):
            s += prior_pred[i, active[j]]
        logp[cap] = s
        if s > top:
            top = s

        total = 0.0
        for k in range(cap + 1):
            if logp[k] > -np.inf:
                logp[k] = np.exp(logp[k] - top)
                total += logp[k]
            else:
                logp[k] = 0.0
        target = uniforms[step] * total
        acc = 0.0
        choice = cap
        for k in range(cap + 1):
            if logp[k] == 0.0:
                continue
            acc += logp[k]
            choice = k
            if acc > target:
                break

        if choice == cap:
            slot = 0
            while sizes[slot] != 0:
                slot += 1
            sums[slot] = 0.0
            for a in range(tables.shape[1]):
                if allzero[a]:
                    continue
                for g in range(n_cells):
                    sums[slot, a, g] = tables[i, a, g]
            for j in range(n_active):
                lmarg[slot, active[j]] = prior_pred[i, active[j]]
            choice = slot
        else:
            for a in range(tables.shape[1]):
                if allzero[a]:
                    continue
                for g in range(n_cells):
                    sums[choice, a, g] += tables[i, a, g]
            for j in range(n_active):
                lmarg[choice, active[j]] = cand[choice, j]
        sizes[choice] += 1
        labels[i] = choice
