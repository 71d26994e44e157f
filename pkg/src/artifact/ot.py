"""Discrete optimal transport: log-domain Sinkhorn, exact solvers, 1-D closed form."""
from __future__ import annotations

import itertools
import math
import warnings
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from artifact.errors import (
    InstanceTooLarge,
    LengthMismatch,
    NegativeEpsilon,
    NonConvergenceWarning,
    ShapeMismatch,
)

EXACT_CAP = 8


@dataclass(frozen=True)
class DiscreteMeasure:
    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64).reshape(-1)
        if w.size == 0:
            raise ValueError("a discrete measure needs at least one atom")
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise ValueError("weights must be finite and non-negative")
        if abs(w.sum() - 1.0) > 1e-12:
            raise ValueError(f"weights sum to {w.sum():.17g}, expected 1")
        object.__setattr__(self, "weights", w)

    @classmethod
    def uniform(cls, n: int) -> "DiscreteMeasure":
        return cls(np.full(n, 1.0 / n))

    @property
    def size(self) -> int:
        return self.weights.size

    @property
    def is_uniform(self) -> bool:
        return bool(np.all(self.weights == self.weights[0]))


@dataclass
class TransportPlan:
    plan: np.ndarray
    source: DiscreteMeasure
    target: DiscreteMeasure
    epsilon: float
    cost_value: float
    entropic_value: float = float("nan")
    converged: bool = True
    iterations: int = 0
    violation: float = 0.0
    info: dict = field(default_factory=dict)

    def marginal_violation(self) -> float:
        return marginal_violation(self.plan, self.source.weights, self.target.weights)


def marginal_violation(plan: np.ndarray, a: np.ndarray, b: np.ndarray) -> float:
    """L1 distance of the plan's row and column sums from the target marginals."""
    return float(np.abs(plan.sum(axis=1) - a).sum() + np.abs(plan.sum(axis=0) - b).sum())


def _check_cost(cost, a: DiscreteMeasure, b: DiscreteMeasure) -> np.ndarray:
    c = np.asarray(cost, dtype=np.float64)
    if c.ndim != 2 or c.shape != (a.size, b.size):
        raise ShapeMismatch(f"cost {c.shape} does not match marginals ({a.size}, {b.size})")
    if not np.all(np.isfinite(c)):
        raise ValueError("cost must be finite")
    return c


def sinkhorn(cost, a: DiscreteMeasure, b: DiscreteMeasure, epsilon: float = 0.1,
             max_iter: int = 2000, tol: float = 1e-6, check_every: int = 10,
             normalize_cost: bool = False, eps_scaling: bool = True,
             round_feasible: bool = True) -> TransportPlan:
    """Entropic OT by log-domain Sinkhorn iterations.

    ``cost_value`` is the unregularised transport cost <P, C> of the entropic
    plan; ``entropic_value`` adds ``epsilon * KL(P || a b^T)``.  When the L1
    marginal violation is still above ``tol`` after ``max_iter`` iterations the
    best plan seen is returned with ``converged=False`` and a warning.

    With ``eps_scaling`` the dual potentials are first annealed from the cost
    spread down to ``epsilon``, which keeps small-epsilon solves short.
    ``round_feasible`` maps the final plan onto the exact transport polytope
    (moving it by at most the residual violation), so ``cost_value`` is a
    genuine feasible cost.  Convergence is judged on the unrounded plan.
    """
    if epsilon <= 0:
        raise NegativeEpsilon(f"epsilon must be positive, got {epsilon}")
    c = _check_cost(cost, a, b)
    scale = 1.0
    if normalize_cost:
        med = float(np.median(c))
        scale = med if med > 0 else 1.0
    cs = c / scale
    wa, wb = a.weights, b.weights
    with np.errstate(divide="ignore"):
        log_a, log_b = np.log(wa), np.log(wb)
    eps = float(epsilon)
    f = np.zeros(a.size)
    g = np.zeros(b.size)
    it = 0
    # warm start through a geometric epsilon ladder; potentials carry over
    spread = float(cs.max() - cs.min())
    stage_eps = spread
    while eps_scaling and stage_eps > 4.0 * eps and it < max_iter // 2:
        for _ in range(20):
            f, g = _sinkhorn_sweep(f, g, cs, log_a, log_b, stage_eps)
        it += 20
        stage_eps *= 0.5
    best = None
    violation = math.inf
    converged = False
    while it < max_iter:
        f, g = _sinkhorn_sweep(f, g, cs, log_a, log_b, eps)
        it += 1
        if it % check_every == 0 or it == max_iter:
            plan = np.exp((f[:, None] + g[None, :] - cs) / eps)
            violation = marginal_violation(plan, wa, wb)
            if best is None or violation < best[1]:
                best = (plan, violation, it)
            if violation <= tol:
                converged = True
                break
    plan, violation, _ = best
    raw_violation = violation
    if round_feasible:
        plan = round_to_polytope(plan, wa, wb)
        violation = marginal_violation(plan, wa, wb)
    if not converged:
        warnings.warn(f"sinkhorn did not reach tol={tol:g} in {max_iter} iterations "
                      f"(violation {raw_violation:.3g} before rounding)", NonConvergenceWarning, stacklevel=2)
    cost_value = float((plan * c).sum())
    ref = np.outer(wa, wb)
    mask = plan > 0
    kl = float((plan[mask] * np.log(plan[mask] / ref[mask])).sum())
    return TransportPlan(plan=plan, source=a, target=b, epsilon=eps, cost_value=cost_value,
                         entropic_value=cost_value + eps * scale * kl, converged=converged,
                         iterations=it, violation=violation,
                         info={"raw_violation": raw_violation})


def round_to_polytope(plan: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Nearby coupling with marginals exactly ``a`` and ``b``.

    Shrink over-full rows, then over-full columns, then spread the remaining
    deficit with a rank-one correction.
    """
    rows = plan.sum(axis=1)
    x = plan * np.minimum(np.divide(a, rows, out=np.ones_like(a), where=rows > 0), 1.0)[:, None]
    cols = x.sum(axis=0)
    x = x * np.minimum(np.divide(b, cols, out=np.ones_like(b), where=cols > 0), 1.0)[None, :]
    err_r = np.clip(a - x.sum(axis=1), 0.0, None)
    err_c = np.clip(b - x.sum(axis=0), 0.0, None)
    total = err_c.sum()
    if total > 0:
        x = x + np.outer(err_r, err_c) / total
    return x


def _lse(x: np.ndarray, axis: int) -> np.ndarray:
    top = x.max(axis=axis, keepdims=True)
    top = np.where(np.isfinite(top), top, 0.0)
    with np.errstate(divide="ignore"):
        return (np.log(np.exp(x - top).sum(axis=axis, keepdims=True)) + top).squeeze(axis)


def _sinkhorn_sweep(f, g, cs, log_a, log_b, eps):
    f = eps * (log_a - _lse((g[None, :] - cs) / eps, axis=1))
    g = eps * (log_b - _lse((f[:, None] - cs) / eps, axis=0))
    return f, g


def exact_ot(cost, a: DiscreteMeasure, b: DiscreteMeasure) -> TransportPlan:
    """Exact minimum-cost coupling for small instances (n, m <= 8).

    Uniform square instances enumerate every permutation coupling; all others
    run the transportation simplex from a north-west-corner basis.
    """
    c = _check_cost(cost, a, b)
    n, m = c.shape
    if n > EXACT_CAP or m > EXACT_CAP:
        raise InstanceTooLarge(f"exact_ot is capped at {EXACT_CAP}x{EXACT_CAP}, got {n}x{m}")
    if n == m and a.is_uniform and b.is_uniform:
        plan = _permutation_optimum(c)
        method = "permutations"
    else:
        plan = _transportation_simplex(c, a.weights, b.weights)
        method = "simplex"
    return TransportPlan(plan=plan, source=a, target=b, epsilon=0.0,
                         cost_value=float((plan * c).sum()), entropic_value=float((plan * c).sum()),
                         violation=marginal_violation(plan, a.weights, b.weights),
                         info={"method": method})


def _permutation_optimum(c: np.ndarray) -> np.ndarray:
    n = c.shape[0]
    perms = np.array(list(itertools.permutations(range(n))), dtype=np.intp)
    totals = c[np.arange(n), perms].sum(axis=1)
    best = perms[int(np.argmin(totals))]
    plan = np.zeros_like(c)
    plan[np.arange(n), best] = 1.0 / n
    return plan


def _northwest_corner(a: np.ndarray, b: np.ndarray):
    n, m = a.size, b.size
    supply, demand = a.copy(), b.copy()
    x = np.zeros((n, m))
    basis = []
    i = j = 0
    while i < n and j < m:
        amount = min(supply[i], demand[j])
        x[i, j] = amount
        basis.append((i, j))
        supply[i] -= amount
        demand[j] -= amount
        if i == n - 1:
            j += 1
        elif j == m - 1:
            i += 1
        elif supply[i] <= demand[j]:
            i += 1
        else:
            j += 1
    return x, basis


def _tree_path(basis, n: int, m: int, start_col: int, goal_row: int):
    """Basis cells on the tree path from column ``start_col`` to row ``goal_row``."""
    adj: dict[int, list[tuple[int, tuple[int, int]]]] = {k: [] for k in range(n + m)}
    for (i, j) in basis:
        adj[i].append((n + j, (i, j)))
        adj[n + j].append((i, (i, j)))
    start, goal = n + start_col, goal_row
    prev: dict[int, tuple[int, tuple[int, int]] | None] = {start: None}
    queue = deque([start])
    while queue:
        node = queue.popleft()
        if node == goal:
            break
        for nxt, cell in adj[node]:
            if nxt not in prev:
                prev[nxt] = (node, cell)
                queue.append(nxt)
    path = []
    node = goal
    while prev[node] is not None:
        parent, cell = prev[node]
        path.append(cell)
        node = parent
    path.reverse()
    return path


def _transportation_simplex(c: np.ndarray, a: np.ndarray, b: np.ndarray,
                            max_pivots: int = 10_000) -> np.ndarray:
    n, m = c.shape
    x, basis = _northwest_corner(a, b)
    scale = max(1.0, float(np.abs(c).max()))
    for _ in range(max_pivots):
        u = np.full(n, np.nan)
        v = np.full(m, np.nan)
        u[0] = 0.0
        pending = list(basis)
        while pending:
            rest = []
            for (i, j) in pending:
                if not np.isnan(u[i]) and np.isnan(v[j]):
                    v[j] = c[i, j] - u[i]
                elif np.isnan(u[i]) and not np.isnan(v[j]):
                    u[i] = c[i, j] - v[j]
                elif np.isnan(u[i]) and np.isnan(v[j]):
                    rest.append((i, j))
            if len(rest) == len(pending):
                break
            pending = rest
        reduced = c - u[:, None] - v[None, :]
        in_basis = set(basis)
        entering = None
        for i in range(n):
            for j in range(m):
                if (i, j) not in in_basis and reduced[i, j] < -1e-12 * scale:
                    entering = (i, j)
                    break
            if entering:
                break
        if entering is None:
            return np.clip(x, 0.0, None)
        ei, ej = entering
        path = _tree_path(basis, n, m, ej, ei)
        minus = path[0::2]
        plus = path[1::2]
        theta = min(x[cell] for cell in minus)
        leaving = min((cell for cell in minus if x[cell] == theta))
        for cell in minus:
            x[cell] -= theta
        for cell in plus:
            x[cell] += theta
        x[ei, ej] += theta
        x[leaving] = 0.0
        basis.remove(leaving)
        basis.append(entering)
    raise RuntimeError("transportation simplex exceeded its pivot budget")


def wasserstein_1d(xs, ys, p: float = 2.0) -> float:
    """p-Wasserstein distance between equal-size uniform samples on the line."""
    xs = np.sort(np.asarray(xs, dtype=np.float64).reshape(-1))
    ys = np.sort(np.asarray(ys, dtype=np.float64).reshape(-1))
    if xs.size != ys.size:
        raise LengthMismatch(f"{xs.size} vs {ys.size} samples")
    return float(np.mean(np.abs(xs - ys) ** p) ** (1.0 / p))


def pairwise_sq_l2(x, y) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.ndim != 2 or y.ndim != 2 or x.shape[1] != y.shape[1]:
        raise ShapeMismatch(f"embedding widths differ: {x.shape} vs {y.shape}")
    diff = x[:, None, :] - y[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)
