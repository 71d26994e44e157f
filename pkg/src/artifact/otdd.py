"""Optimal-transport dataset distance over (feature, label) pairs.

Labels are replaced by their class-conditional feature distributions, so two
labelled sets can be compared even when their label sets are unrelated.  Also
hosts the class-weighted stochastic estimator and the baseline alignment
metrics (MMD, linear CKA, mean Euclidean).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from artifact.errors import (
    DegenerateInput,
    EmptyClass,
    InvalidBudget,
    MissingLabelEntry,
    NonPositiveBandwidth,
    RowCountMismatch,
    ShapeMismatch,
)
from artifact.numcore.rng import RngState
from artifact.ot import DiscreteMeasure, TransportPlan, exact_ot, pairwise_sq_l2, sinkhorn

INNER_MODES = ("exact", "gaussian")


@dataclass
class LabeledEmbeddingSet:
    features: np.ndarray
    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        if self.features.ndim != 2:
            raise ShapeMismatch(f"features must be (n, e), got {self.features.shape}")
        if self.features.shape[0] != self.labels.size or self.labels.size == 0:
            raise ShapeMismatch(f"{self.features.shape[0]} feature rows vs {self.labels.size} labels")
        if self.labels.min() < 0 or self.labels.max() >= self.num_classes:
            raise ValueError(f"labels must lie in [0, {self.num_classes})")

    def __len__(self) -> int:
        return self.labels.size

    @property
    def width(self) -> int:
        return self.features.shape[1]

    def members(self, cls: int) -> np.ndarray:
        return np.flatnonzero(self.labels == cls)

    def class_sizes(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.num_classes)

    def require_nonempty(self) -> None:
        empty = np.flatnonzero(self.class_sizes() == 0)
        if empty.size:
            raise EmptyClass(f"classes {empty.tolist()} have no members")

    def single_class(self, cls: int, index: np.ndarray | None = None) -> "LabeledEmbeddingSet":
        """Rows of class ``cls`` (or the given rows) as a one-class set."""
        idx = self.members(cls) if index is None else np.asarray(index)
        if idx.size == 0:
            raise EmptyClass(f"class {cls} has no members")
        return LabeledEmbeddingSet(self.features[idx], np.zeros(idx.size, dtype=np.int64), 1)


@dataclass
class LabelDistanceMatrix:
    dist: np.ndarray
    p: float
    mode: str = "gaussian"

    def __post_init__(self):
        self.dist = np.asarray(self.dist, dtype=np.float64)


@dataclass
class OtddEstimate:
    d: float
    per_class: np.ndarray
    weights: np.ndarray
    rounds: int
    subsample: int
    per_round: np.ndarray
    converged: bool = True

    def to_bytes(self) -> bytes:
        parts = [np.float64(self.d).tobytes(), self.per_class.tobytes(), self.weights.tobytes(),
                 np.int64([self.rounds, self.subsample]).tobytes(), self.per_round.tobytes()]
        return b"".join(parts)


@dataclass
class OtddSolve:
    """Everything an envelope-rule gradient needs from one OTDD evaluation."""

    value: float
    plan: TransportPlan
    ldm: LabelDistanceMatrix
    inner_plans: dict = field(default_factory=dict)
    converged: bool = True


# label distances -----------------------------------------------------------------

def _transport(cost: np.ndarray, epsilon: float, max_iter: int, tol: float,
               a: DiscreteMeasure | None = None, b: DiscreteMeasure | None = None,
               normalize_cost: bool = False) -> TransportPlan:
    a = a or DiscreteMeasure.uniform(cost.shape[0])
    b = b or DiscreteMeasure.uniform(cost.shape[1])
    if epsilon == 0:
        return exact_ot(cost, a, b)
    return sinkhorn(cost, a, b, epsilon=epsilon, max_iter=max_iter, tol=tol,
                    normalize_cost=normalize_cost)


def gaussian_stats(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Mean and biased per-coordinate variance."""
    mean = x.mean(axis=0)
    return mean, ((x - mean) ** 2).mean(axis=0)


def bures_diag_sq(m1, v1, m2, v2) -> float:
    """Squared 2-Wasserstein distance between diagonal Gaussians."""
    return float(((m1 - m2) ** 2).sum() + ((np.sqrt(v1) - np.sqrt(v2)) ** 2).sum())


def label_distance_matrix(dyn: LabeledEmbeddingSet, stat: LabeledEmbeddingSet, p: float = 2.0,
                          mode: str = "gaussian", epsilon: float = 0.1, max_iter: int = 2000,
                          tol: float = 1e-6, normalize_cost: bool = False,
                          return_plans: bool = False):
    """Distances between every class-conditional of ``dyn`` and of ``stat``.

    ``mode="exact"`` transports the class samples (Sinkhorn when
    ``epsilon > 0``, the exact solver when ``epsilon == 0``) under the cost
    ``||x - x'||^p``; ``mode="gaussian"`` fits a diagonal Gaussian per class and
    uses the closed-form Bures-Wasserstein W2.
    """
    if mode not in INNER_MODES:
        raise ValueError(f"mode must be one of {INNER_MODES}, got {mode!r}")
    if dyn.width != stat.width:
        raise ShapeMismatch(f"feature widths differ: {dyn.width} vs {stat.width}")
    dyn.require_nonempty()
    stat.require_nonempty()
    kd, ks = dyn.num_classes, stat.num_classes
    dist = np.zeros((kd, ks))
    plans = {}
    if mode == "gaussian":
        sd = [gaussian_stats(dyn.features[dyn.members(i)]) for i in range(kd)]
        ss = [gaussian_stats(stat.features[stat.members(j)]) for j in range(ks)]
        for i in range(kd):
            for j in range(ks):
                dist[i, j] = np.sqrt(bures_diag_sq(*sd[i], *ss[j]))
    else:
        for i in range(kd):
            xi = dyn.features[dyn.members(i)]
            for j in range(ks):
                xj = stat.features[stat.members(j)]
                cost = pairwise_sq_l2(xi, xj) ** (p / 2.0)
                tp = _transport(cost, epsilon, max_iter, tol, normalize_cost=normalize_cost)
                dist[i, j] = max(tp.cost_value, 0.0) ** (1.0 / p)
                plans[i, j] = tp
    ldm = LabelDistanceMatrix(dist, p, mode)
    return (ldm, plans) if return_plans else ldm


def joint_ground_cost(dyn: LabeledEmbeddingSet, stat: LabeledEmbeddingSet,
                      ldm: LabelDistanceMatrix, p: float = 2.0) -> np.ndarray:
    """Pairwise cost on feature x label space: (d_X^p + d_Y^p)^(1/p)."""
    if dyn.width != stat.width:
        raise ShapeMismatch(f"feature widths differ: {dyn.width} vs {stat.width}")
    kd, ks = ldm.dist.shape
    if dyn.labels.max() >= kd or stat.labels.max() >= ks:
        raise MissingLabelEntry(f"label matrix {ldm.dist.shape} does not cover the labels present")
    label_term = ldm.dist[np.ix_(dyn.labels, stat.labels)]
    if not np.all(np.isfinite(label_term)):
        raise MissingLabelEntry("label distance matrix has undefined entries for present labels")
    feat_p = pairwise_sq_l2(dyn.features, stat.features) ** (p / 2.0)
    return (feat_p + label_term ** p) ** (1.0 / p)


# dataset distances -------------------------------------------------------------

def otdd_solve(dyn: LabeledEmbeddingSet, stat: LabeledEmbeddingSet, p: float = 2.0,
               epsilon: float = 0.1, inner: str = "gaussian", inner_epsilon: float | None = None,
               max_iter: int = 2000, tol: float = 1e-6, normalize_cost: bool = False) -> OtddSolve:
    inner_epsilon = epsilon if inner_epsilon is None else inner_epsilon
    ldm, inner_plans = label_distance_matrix(dyn, stat, p=p, mode=inner, epsilon=inner_epsilon,
                                             max_iter=max_iter, tol=tol,
                                             normalize_cost=normalize_cost, return_plans=True)
    cost_p = joint_ground_cost(dyn, stat, ldm, p) ** p
    plan = _transport(cost_p, epsilon, max_iter, tol, normalize_cost=normalize_cost)
    value = max(plan.cost_value, 0.0) ** (1.0 / p)
    converged = plan.converged and all(tp.converged for tp in inner_plans.values())
    return OtddSolve(value=value, plan=plan, ldm=ldm, inner_plans=inner_plans, converged=converged)


def otdd_exact(dyn: LabeledEmbeddingSet, stat: LabeledEmbeddingSet, p: float = 2.0,
               epsilon: float = 0.1, inner: str = "gaussian", inner_epsilon: float | None = None,
               max_iter: int = 2000, tol: float = 1e-6, normalize_cost: bool = False,
               debias: bool = False) -> float:
    """W_p between the two empirical joint distributions (uniform weights).

    ``epsilon == 0`` selects the exact outer solver.  ``debias`` subtracts the
    two self-transport terms (Sinkhorn-divergence style) before the 1/p root.
    """
    kw = dict(p=p, epsilon=epsilon, inner=inner, inner_epsilon=inner_epsilon,
              max_iter=max_iter, tol=tol, normalize_cost=normalize_cost)
    value = otdd_solve(dyn, stat, **kw).value
    if not debias:
        return value
    cross = value ** p
    self_d = otdd_solve(dyn, dyn, **kw).value ** p
    self_s = otdd_solve(stat, stat, **kw).value ** p
    return max(cross - 0.5 * self_d - 0.5 * self_s, 0.0) ** (1.0 / p)


def class_weights(labels: np.ndarray, num_classes: int) -> np.ndarray:
    """Share of each class in the dataset."""
    counts = np.bincount(np.asarray(labels), minlength=num_classes).astype(np.float64)
    return counts / counts.sum()


def draw_subsample(members: np.ndarray, b: int, rng: RngState) -> np.ndarray:
    """min(b, |members|) rows without replacement, kept in dataset order."""
    k = min(b, members.size)
    pick = rng.choice(members.size, size=k, replace=False)
    return members[np.sort(pick)]


def otdd_class_weighted_stochastic(dyn: LabeledEmbeddingSet, stat: LabeledEmbeddingSet,
                                   b: int = 32, R: int = 1, p: float = 2.0, epsilon: float = 0.1,
                                   rng: RngState | None = None, inner: str = "gaussian",
                                   inner_epsilon: float | None = None, max_iter: int = 2000,
                                   tol: float = 1e-6, normalize_cost: bool = False,
                                   weights: np.ndarray | None = None,
                                   solves: list | None = None) -> OtddEstimate:
    """Class-weighted stochastic OTDD.

    For every class of ``dyn``: draw ``R`` uniform subsamples of size
    ``min(b, class size)``, measure each (as a one-class dataset) against the
    whole of ``stat``, average over rounds, then combine classes with weights
    proportional to class size.  ``weights`` overrides the size weights
    (used by minibatch training with dataset-level weights).  When ``solves``
    is a list, each (class, rows, OtddSolve) triple is appended to it.
    """
    if b < 1 or R < 1:
        raise InvalidBudget(f"need b >= 1 and R >= 1, got b={b}, R={R}")
    dyn.require_nonempty()
    rng = rng or RngState(0)
    k = dyn.num_classes
    w = class_weights(dyn.labels, k) if weights is None else np.asarray(weights, dtype=np.float64)
    per_round = np.zeros((k, R))
    converged = True
    for i in range(k):
        members = dyn.members(i)
        for r in range(R):
            rows = draw_subsample(members, b, rng)
            solve = otdd_solve(dyn.single_class(i, rows), stat, p=p, epsilon=epsilon, inner=inner,
                               inner_epsilon=inner_epsilon, max_iter=max_iter, tol=tol,
                               normalize_cost=normalize_cost)
            per_round[i, r] = solve.value
            converged &= solve.converged
            if solves is not None:
                solves.append((i, rows, solve))
    per_class = per_round.mean(axis=1)
    return OtddEstimate(d=float((w * per_class).sum()), per_class=per_class, weights=w, rounds=R,
                        subsample=b, per_round=per_round, converged=converged)


# baseline metrics --------------------------------------------------------------

def _features(x) -> np.ndarray:
    x = np.asarray(x.features if isinstance(x, LabeledEmbeddingSet) else x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ShapeMismatch(f"expected a non-empty (n, e) feature matrix, got {x.shape}")
    return x


def mmd(dyn, stat, bandwidth: float = 1.0) -> float:
    """Biased (V-statistic) RBF-kernel MMD, returned as sqrt(max(0, MMD^2))."""
    if bandwidth <= 0:
        raise NonPositiveBandwidth(f"bandwidth must be positive, got {bandwidth}")
    x, y = _features(dyn), _features(stat)
    if x.shape[1] != y.shape[1]:
        raise ShapeMismatch(f"feature widths differ: {x.shape[1]} vs {y.shape[1]}")
    gamma = 1.0 / (2.0 * bandwidth ** 2)
    kxx = np.exp(-gamma * pairwise_sq_l2(x, x)).mean()
    kyy = np.exp(-gamma * pairwise_sq_l2(y, y)).mean()
    kxy = np.exp(-gamma * pairwise_sq_l2(x, y)).mean()
    return float(np.sqrt(max(kxx + kyy - 2.0 * kxy, 0.0)))


def cka(dyn, stat) -> float:
    """Linear centred kernel alignment of paired representations."""
    x, y = _features(dyn), _features(stat)
    if x.shape[0] != y.shape[0]:
        raise RowCountMismatch(f"CKA pairs rows: {x.shape[0]} vs {y.shape[0]}")
    if x.shape[0] < 2:
        raise RowCountMismatch("CKA needs at least two rows")
    xc = x - x.mean(axis=0)
    yc = y - y.mean(axis=0)
    den = np.linalg.norm(xc.T @ xc) * np.linalg.norm(yc.T @ yc)
    if den == 0:
        raise DegenerateInput("a representation is constant after centring")
    return float(np.linalg.norm(yc.T @ xc) ** 2 / den)


def mean_euclidean(dyn, stat) -> float:
    x, y = _features(dyn), _features(stat)
    if x.shape[1] != y.shape[1]:
        raise ShapeMismatch(f"feature widths differ: {x.shape[1]} vs {y.shape[1]}")
    return float(np.linalg.norm(x.mean(axis=0) - y.mean(axis=0)))
