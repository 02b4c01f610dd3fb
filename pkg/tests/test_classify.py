import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.special import logsumexp

from dtmm.classify import ClassifierModel, predict_enumerate, train
from dtmm.marginal import QuadGrid
from dtmm.tree import parse_newick

from oracles import arcsine_marginal

FOUR = parse_newick("((a,b),(c,d));")
GRID = QuadGrid.build()


def splits(y):
    """(y_l, y) per internal node of FOUR, written out by hand."""
    a, b, c, d = (int(v) for v in y)
    return [(a + b, a + b + c + d), (a, a + b), (c, c + d)]


def oracle_posterior(ys, labels, y_new, lam):
    """Class posterior by enumerating every activation vector, with every
    integral done by the arcsine rule."""
    classes = sorted(set(labels))
    priors = np.array([labels.count(k) for k in classes]) / len(labels)
    per = {k: [splits(y) for y, l in zip(ys, labels) if l == k] for k in classes}
    everyone = [splits(y) for y in ys]
    new = splits(y_new)
    tau = GRID.tau_support

    def marg(rows, node, extra=None):
        pairs = [r[node] for r in rows] + ([extra[node]] if extra else [])
        return arcsine_marginal(pairs, tau)

    l1 = [[marg(per[k], a) for a in range(3)] for k in classes]
    l0 = [marg(everyone, a) for a in range(3)]
    r1 = [[marg(per[k], a, new) - l1[i][a] for a in range(3)] for i, k in enumerate(classes)]
    r0 = [marg(everyone, a, new) - l0[a] for a in range(3)]
    configs = list(itertools.product((0, 1), repeat=3))
    log_post = np.array([
        sum(math.log(lam) + sum(l1[i][a] for i in range(len(classes))) if g else math.log1p(-lam) + l0[a]
            for a, g in enumerate(gam))
        for gam in configs
    ])
    log_post -= logsumexp(log_post)
    score = []
    for i in range(len(classes)):
        pred = [sum(r1[i][a] if g else r0[a] for a, g in enumerate(gam)) for gam in configs]
        score.append(math.log(priors[i]) + logsumexp(log_post + np.array(pred)))
    score = np.array(score)
    act = np.array([np.exp(logsumexp(log_post[[j for j, g in enumerate(configs) if g[a]]])) for a in range(3)])
    return np.exp(score - logsumexp(score)), act


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from([0.2, 0.5, 0.9]))
def test_predict_matches_enumeration_oracle(seed, lam):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 7))
    ys = rng.integers(0, 5, size=(n, 4))
    labels = [int(v) for v in rng.integers(0, 2, n)]
    labels[0], labels[1] = 0, 1
    y_new = rng.integers(0, 5, size=4)
    model = train(ys, np.array(labels), FOUR, GRID, lambda0=lam)
    ref, act = oracle_posterior(list(ys), labels, y_new, lam)
    np.testing.assert_allclose(model.predict(y_new), ref, rtol=0, atol=1e-8)
    np.testing.assert_allclose(predict_enumerate(model, y_new), ref, rtol=0, atol=1e-8)
    np.testing.assert_allclose(model.activation_posterior(), act, rtol=0, atol=1e-8)


def test_all_zero_query_and_zero_node():
    ys = np.array([[3, 1, 0, 0], [0, 4, 0, 0], [5, 5, 0, 0]])
    model = train(ys, np.array(["x", "y", "y"]), FOUR, GRID, lambda0=0.3)
    np.testing.assert_allclose(model.predict([0, 0, 0, 0]), [1 / 3, 2 / 3], atol=1e-14)
    assert model.activation_posterior()[2] == pytest.approx(0.3, abs=1e-14)
    assert abs(model.predict([1, 2, 3, 4]).sum() - 1) < 1e-14
    with pytest.raises(ValueError):
        model.predict([1, 2, 3])


def test_identical_classes_give_prior():
    ys = np.array([[3, 1, 4, 1], [5, 9, 2, 6]])
    doubled = np.vstack([ys, ys])
    model = train(doubled, np.array([0, 0, 1, 1]), FOUR, GRID, priors=[0.25, 0.75])
    np.testing.assert_allclose(model.predict([7, 0, 0, 2]), [0.25, 0.75], atol=1e-12)
    # lambda0 = 1/2, so the odds are the log Bayes factors of the two classes
    single = train(ys, np.array([0, 0]), FOUR, GRID)
    np.testing.assert_allclose(model.activation_log_odds(), 2 * single.log_l1[0] - model.log_l0, atol=1e-9)


def test_duplicated_training_keeps_zero_query_at_prior():
    rng = np.random.default_rng(3)
    ys = rng.integers(0, 30, size=(8, 4))
    labels = np.array([0, 1, 2, 0, 1, 2, 0, 0])
    model = train(np.vstack([ys, ys]), np.concatenate([labels, labels]), FOUR, GRID)
    np.testing.assert_allclose(model.predict(np.zeros(4)), model.priors, atol=1e-14)


def test_permutation_equivariance():
    rng = np.random.default_rng(4)
    ys = rng.integers(0, 40, size=(9, 4))
    labels = np.array([0, 1, 2] * 3)
    y_new = rng.integers(0, 40, size=4)
    base = train(ys, labels, FOUR, GRID).predict(y_new)
    perm = np.array([2, 0, 1])
    swapped = train(ys, perm[labels], FOUR, GRID).predict(y_new)
    np.testing.assert_allclose(swapped[perm], base, atol=1e-12)
    order = rng.permutation(9)
    np.testing.assert_allclose(train(ys[order], labels[order], FOUR, GRID).predict(y_new), base, atol=1e-12)


def test_separated_classes():
    y = np.array([[40, 5, 20, 20]] * 10 + [[5, 40, 20, 20]] * 10)
    model = train(y, np.array([0] * 10 + [1] * 10), FOUR, GRID)
    assert model.predict([38, 6, 19, 22])[0] > 0.99
    assert model.activation_posterior()[1] > 0.99


def test_json_round_trip():
    rng = np.random.default_rng(5)
    ys = rng.integers(0, 20, size=(6, 4))
    model = train(ys, np.array(["a", "b"] * 3), FOUR, QuadGrid.build(n_theta=16), lambda0=0.4)
    again = ClassifierModel.from_json(model.to_json())
    np.testing.assert_array_equal(again.predict([1, 2, 3, 4]), model.predict([1, 2, 3, 4]))
    assert again.classes.tolist() == ["a", "b"]
    with pytest.raises(ValueError):
        ClassifierModel.from_json('{"format": "other"}')


def test_train_validation():
    ys = np.ones((2, 4), dtype=int)
    with pytest.raises(ValueError):
        train(ys, np.array([0]), FOUR, GRID)
    with pytest.raises(ValueError):
        train(ys, np.array([0, 1]), FOUR, GRID, lambda0=1.0)
    with pytest.raises(ValueError):
        train(ys, np.array([0, 1]), FOUR, GRID, priors=[1.0, 0.0])
    with pytest.raises(ValueError):
        train(np.ones((2, 3), dtype=int), np.array([0, 1]), FOUR, GRID)
    model = train(ys, np.array([0, 1]), FOUR, GRID)
    with pytest.raises(ValueError):
        predict_enumerate(model, np.ones(4), max_nodes=2)
