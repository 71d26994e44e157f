import numpy as np
import pytest
from hypothesis import given, strategies as st

from artifact.errors import (DegenerateInput, EmptyClass, InvalidBudget, MissingLabelEntry,
                             NonPositiveBandwidth, RowCountMismatch, ShapeMismatch)
from artifact.numcore.rng import RngState
from artifact.ot import DiscreteMeasure, exact_ot
from artifact.otdd import (LabelDistanceMatrix, LabeledEmbeddingSet, class_weights, cka, joint_ground_cost,
                           label_distance_matrix, mean_euclidean, mmd, otdd_class_weighted_stochastic,
                           otdd_exact)

L = LabeledEmbeddingSet


def labeled(rng, sizes, width=3, shift=0.0):
    feats = np.concatenate([rng.normal(shift + 2.0 * c, 1.0, size=(n, width)) for c, n in enumerate(sizes)])
    labels = np.repeat(np.arange(len(sizes)), sizes)
    return L(feats, labels, len(sizes))


def test_set_validation():
    with pytest.raises(ShapeMismatch):
        L(np.ones((3, 2)), [0, 1], 2)
    with pytest.raises(ValueError):
        L(np.ones((2, 2)), [0, 2], 2)
    with pytest.raises(EmptyClass):
        L(np.ones((2, 2)), [0, 0], 2).require_nonempty()


# label distances --------------------------------------------------------------

def test_gaussian_label_distance_zero_diagonal():
    d = labeled(np.random.default_rng(0), (5, 7, 4))
    assert np.array_equal(np.diag(label_distance_matrix(d, d).dist), np.zeros(3))


def test_label_distance_single_points():
    a = L([[1.0, 2.0]], [0], 1)
    b = L([[1.0, 2.0]], [0], 1)
    c = L([[4.0, 6.0]], [0], 1)
    for mode in ("gaussian", "exact"):
        assert label_distance_matrix(a, b, mode=mode).dist[0, 0] == pytest.approx(0.0, abs=1e-12)
        assert label_distance_matrix(a, c, mode=mode).dist[0, 0] == pytest.approx(5.0, abs=1e-12)


def test_gaussian_label_distance_matches_bures_formula():
    rng = np.random.default_rng(1)
    x, y = rng.normal(0, 1, (20, 4)), rng.normal(1, 2, (30, 4))
    got = label_distance_matrix(L(x, np.zeros(20, int), 1), L(y, np.zeros(30, int), 1)).dist[0, 0]
    m1, m2, s1, s2 = x.mean(0), y.mean(0), x.var(0), y.var(0)
    want = np.sqrt(np.sum((m1 - m2) ** 2) + np.sum((np.sqrt(s1) - np.sqrt(s2)) ** 2))
    assert got == pytest.approx(want, abs=1e-9)


def test_exact_label_distance_matches_exact_solver():
    rng = np.random.default_rng(2)
    d, s = labeled(rng, (3, 4)), labeled(rng, (4, 2))
    ldm = label_distance_matrix(d, s, mode="exact", epsilon=0.0)
    for i in range(2):
        for j in range(2):
            xi, xj = d.features[d.members(i)], s.features[s.members(j)]
            c = ((xi[:, None] - xj[None]) ** 2).sum(-1)
            tp = exact_ot(c, DiscreteMeasure.uniform(len(xi)), DiscreteMeasure.uniform(len(xj)))
            assert ldm.dist[i, j] == pytest.approx(np.sqrt(tp.cost_value), abs=1e-12)


def test_label_distance_errors():
    with pytest.raises(ShapeMismatch):
        label_distance_matrix(L(np.ones((1, 2)), [0], 1), L(np.ones((1, 3)), [0], 1))
    with pytest.raises(EmptyClass):
        label_distance_matrix(L(np.ones((1, 2)), [0], 2), L(np.ones((1, 2)), [0], 1))


# joint cost -------------------------------------------------------------------

def test_joint_cost_reduces_to_feature_distance():
    rng = np.random.default_rng(3)
    d, s = labeled(rng, (3, 2)), labeled(rng, (2, 4))
    c = joint_ground_cost(d, s, LabelDistanceMatrix(np.zeros((2, 2)), 2.0))
    feat = np.sqrt(((d.features[:, None] - s.features[None]) ** 2).sum(-1))
    assert np.max(np.abs(c - feat)) <= 1e-12


def test_joint_cost_three_four_five():
    d = L([[0.0, 0.0]], [0], 1)
    s = L([[3.0, 0.0]], [0], 1)
    assert joint_ground_cost(d, s, LabelDistanceMatrix([[4.0]], 2.0))[0, 0] == pytest.approx(5.0, abs=1e-15)
    assert joint_ground_cost(d, d, LabelDistanceMatrix([[0.0]], 2.0))[0, 0] == 0.0


def test_joint_cost_missing_labels():
    d = L(np.ones((2, 2)), [0, 1], 2)
    with pytest.raises(MissingLabelEntry):
        joint_ground_cost(d, d, LabelDistanceMatrix(np.zeros((1, 1)), 2.0))
    with pytest.raises(MissingLabelEntry):
        joint_ground_cost(d, d, LabelDistanceMatrix([[0.0, np.nan], [np.nan, 0.0]], 2.0))


# dataset distance ---------------------------------------------------------------

def test_otdd_self_distance_exact():
    d = labeled(np.random.default_rng(4), (3, 3, 2))
    assert otdd_exact(d, d, epsilon=0.0, inner="exact", inner_epsilon=0.0) <= 1e-9


def test_otdd_singletons():
    a = L([[0.0, 0.0, 0.0]], [0], 1)
    b = L([[1.0, 2.0, 2.0]], [0], 1)
    # feature gap 3 and label gap 3 combine in quadrature
    assert otdd_exact(a, b, epsilon=0.0, inner="exact", inner_epsilon=0.0) == pytest.approx(np.sqrt(18.0))
    same_label = L([[1.0, 2.0, 2.0]], [0], 1)
    assert otdd_exact(a, a, epsilon=0.0) == 0.0
    assert otdd_exact(same_label, same_label, epsilon=0.0) == 0.0


def test_otdd_matches_exact_ot_on_joint_cost(quiet_ot):
    rng = np.random.default_rng(5)
    d, s = labeled(rng, (2, 2)), labeled(rng, (2, 2), shift=0.5)
    ldm = label_distance_matrix(d, s, mode="exact", epsilon=0.0)
    c = joint_ground_cost(d, s, ldm) ** 2
    exact = np.sqrt(exact_ot(c, DiscreteMeasure.uniform(4), DiscreteMeasure.uniform(4)).cost_value)
    assert otdd_exact(d, s, epsilon=0.0, inner="exact", inner_epsilon=0.0) == pytest.approx(exact, abs=1e-12)
    approx = otdd_exact(d, s, epsilon=1e-3, inner="exact", inner_epsilon=0.0)
    assert approx >= exact - 1e-9
    assert approx == pytest.approx(exact, rel=0.01)


def test_debiased_self_distance_is_zero():
    d = labeled(np.random.default_rng(6), (4, 4))
    assert otdd_exact(d, d, epsilon=0.1, debias=True) <= 1e-6


# algorithm 1 ------------------------------------------------------------------

def test_class_weights():
    assert np.array_equal(class_weights(np.repeat([0, 1], [10, 30]), 2), [0.25, 0.75])


def test_stochastic_collapses_to_per_class_distance():
    d, s = labeled(np.random.default_rng(7), (4, 6)), labeled(np.random.default_rng(8), (5, 5))
    est = otdd_class_weighted_stochastic(d, s, b=10, R=1, rng=RngState(0))
    for i in range(2):
        assert est.per_class[i] == pytest.approx(otdd_exact(d.single_class(i), s), abs=1e-12)
    assert est.d == pytest.approx(0.4 * est.per_class[0] + 0.6 * est.per_class[1], abs=1e-12)


def test_stochastic_estimate_invariants():
    d, s = labeled(np.random.default_rng(9), (10, 30)), labeled(np.random.default_rng(10), (8, 8))
    est = otdd_class_weighted_stochastic(d, s, b=4, R=3, rng=RngState(1))
    assert est.per_round.shape == (2, 3)
    assert np.allclose(est.weights, [0.25, 0.75], atol=0) and abs(est.weights.sum() - 1) <= 1e-12
    assert np.max(np.abs(est.per_class - est.per_round.mean(axis=1))) <= 1e-12
    assert abs(est.d - float(est.weights @ est.per_class)) <= 1e-12
    assert est.rounds == 3 and est.subsample == 4


def test_stochastic_is_deterministic():
    d, s = labeled(np.random.default_rng(11), (40, 40)), labeled(np.random.default_rng(12), (20, 20))
    a = otdd_class_weighted_stochastic(d, s, b=32, R=4, rng=RngState(3))
    b = otdd_class_weighted_stochastic(d, s, b=32, R=4, rng=RngState(3))
    assert a.to_bytes() == b.to_bytes()


def test_stochastic_errors():
    d = labeled(np.random.default_rng(13), (3, 3))
    with pytest.raises(InvalidBudget):
        otdd_class_weighted_stochastic(d, d, b=0)
    with pytest.raises(InvalidBudget):
        otdd_class_weighted_stochastic(d, d, R=0)
    with pytest.raises(EmptyClass):
        otdd_class_weighted_stochastic(L(np.ones((2, 3)), [0, 0], 2), d)


def test_stochastic_records_solves():
    d, s = labeled(np.random.default_rng(14), (5, 3)), labeled(np.random.default_rng(15), (4,))
    solves = []
    otdd_class_weighted_stochastic(d, s, b=2, R=2, rng=RngState(0), solves=solves)
    assert [(c, len(rows)) for c, rows, _ in solves] == [(0, 2), (0, 2), (1, 2), (1, 2)]


# alternative metrics -------------------------------------------------------------

def test_mmd():
    rng = np.random.default_rng(16)
    x, y = rng.normal(size=(6, 3)), rng.normal(1, 1, size=(4, 3))
    assert mmd(x, x) <= 1e-12
    # for a wide kernel the value tends to |mean(x) - mean(y)| / bandwidth
    near = rng.normal(size=(4, 3)) * 0.1
    assert mmd(x * 0.1, near, bandwidth=1e6) <= 1e-6
    assert mmd(x, y, bandwidth=1e6) == pytest.approx(np.linalg.norm(x.mean(0) - y.mean(0)) / 1e6, rel=1e-3)
    k = lambda a, b: np.exp(-np.sum((a - b) ** 2) / 2.0)  # noqa: E731
    kxx = sum(k(a, b) for a in x for b in x) / 36
    kyy = sum(k(a, b) for a in y for b in y) / 16
    kxy = sum(k(a, b) for a in x for b in y) / 24
    assert mmd(x, y) == pytest.approx(np.sqrt(kxx + kyy - 2 * kxy), abs=1e-10)
    with pytest.raises(NonPositiveBandwidth):
        mmd(x, y, bandwidth=0.0)


def test_cka_invariances():
    rng = np.random.default_rng(17)
    x = rng.normal(size=(10, 4))
    q, _ = np.linalg.qr(rng.normal(size=(4, 4)))
    assert cka(x, x) == pytest.approx(1.0, abs=1e-12)
    assert cka(x, -3.5 * x) == pytest.approx(1.0, abs=1e-12)
    assert cka(x, x @ q) == pytest.approx(1.0, abs=1e-12)
    assert 0.0 <= cka(x, rng.normal(size=(10, 6))) <= 1.0
    with pytest.raises(RowCountMismatch):
        cka(x, x[:5])
    with pytest.raises(DegenerateInput):
        cka(x, np.ones((10, 2)))


def test_mean_euclidean():
    rng = np.random.default_rng(18)
    x, y = rng.normal(size=(5, 3)), rng.normal(size=(7, 3))
    assert mean_euclidean(x, x) == 0.0
    assert mean_euclidean([[0.0, 0.0]], [[3.0, 4.0]]) == 5.0
    assert mean_euclidean(x, y) == pytest.approx(np.sqrt(np.sum((x.mean(0) - y.mean(0)) ** 2)), abs=1e-12)
    with pytest.raises(ShapeMismatch):
        mean_euclidean(x, np.ones((2, 2)))


@given(st.integers(0, 10**6))
def test_distances_are_nonnegative(seed):
    rng = np.random.default_rng(seed)
    d, s = labeled(rng, (3, 2)), labeled(rng, (2, 3), shift=rng.normal())
    values = [otdd_exact(d, s), otdd_exact(d, s, debias=True), mmd(d, s), mean_euclidean(d, s),
              otdd_class_weighted_stochastic(d, s, b=2, rng=RngState(seed)).d,
              *label_distance_matrix(d, s).dist.ravel()]
    assert min(values) >= -1e-12
