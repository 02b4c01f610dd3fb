"""Independent reference computations used by the tests.

Nothing here shares a code path with the package's quadrature or
enumeration routines.
"""

import itertools
import math

import numpy as np


def lbb_lgamma(y_l, y, theta, tau):
    """Log beta-binomial by scalar math.lgamma."""
    a = theta * tau
    b = (1 - theta) * tau
    lc = math.lgamma(y + 1) - math.lgamma(y_l + 1) - math.lgamma(y - y_l + 1)
    lb = lambda u, v: math.lgamma(u) + math.lgamma(v) - math.lgamma(u + v)
    return lc + lb(a + y_l, b + y - y_l) - lb(a, b)


def arcsine_marginal(pairs, tau_support, n_phi=4096):
    """Marginal of a set of (y_l, y) splits sharing (theta, tau), with theta
    from Beta(1/2, 1/2) and tau uniform on ``tau_support``.

    Substituting theta = sin(phi)^2 turns the arcsine prior into the uniform
    law on a circle, and the integrand becomes a trigonometric polynomial,
    which the equispaced rule integrates exactly once ``n_phi`` exceeds
    twice the total count.
    """
    phi = 2 * np.pi * (np.arange(n_phi) + 0.5) / n_phi
    theta = np.clip(np.sin(phi) ** 2, 1e-300, 1 - 1e-16)
    vals = []
    for tau in tau_support:
        s = np.zeros(n_phi)
        for yl, y in pairs:
            if y == 0:
                continue
            # rising factorials: (a)_{yl} (b)_{yr} / (tau)_{y}
            a, b = theta * tau, (1 - theta) * tau
            term = np.zeros(n_phi)
            for r in range(yl):
                term += np.log(a + r)
            for r in range(y - yl):
                term += np.log(b + r)
            term -= sum(math.log(tau + r) for r in range(y))
            term += math.lgamma(y + 1) - math.lgamma(yl + 1) - math.lgamma(y - yl + 1)
            s += term
        m = s.max()
        vals.append(m + math.log(np.mean(np.exp(s - m))))
    vals = np.array(vals)
    m = vals.max()
    return m + math.log(np.mean(np.exp(vals - m)))


def jaccard_pairs(c, c0):
    both = either = 0
    for i, j in itertools.combinations(range(len(c)), 2):
        a = c[i] == c[j]
        b = c0[i] == c0[j]
        both += a and b
        either += a or b
    return both / either if either else 1.0


def bc(x, y):
    x = np.asarray(x, float) / np.sum(x)
    y = np.asarray(y, float) / np.sum(y)
    return 1 - sum(min(u, v) for u, v in zip(x, y))


def r_squared_pairs(counts, labels):
    n = len(labels)
    num = den = 0.0
    sizes = {k: list(labels).count(k) for k in set(labels)}
    for i in range(n):
        for j in range(i + 1, n):
            d2 = bc(counts[i], counts[j]) ** 2
            den += d2 / n
            if labels[i] == labels[j]:
                num += d2 / sizes[labels[i]]
    return num / den


def best_medoids(d, k):
    """Exhaustive k-medoids: the medoid set with the smallest total distance."""
    n = d.shape[0]
    best, best_set = np.inf, None
    for meds in itertools.combinations(range(n), k):
        cost = d[:, meds].min(axis=1).sum()
        if cost < best - 1e-12:
            best, best_set = cost, meds
    return best, best_set
