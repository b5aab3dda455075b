"""Dense two-phase simplex solver with dual recovery.

Maximization problems with mixed <=, =, >= rows and per-variable bounds
(lower bound 0 or -inf, upper bound +inf or finite). The solver returns the
full dual vector for the original rows so callers can read shadow prices
directly off the optimal basis.

Pivoting starts with Dantzig's rule and falls back to Bland's rule after a
bounded number of iterations, which guarantees termination on degenerate
(cycling) instances. All tie-breaks pick the lowest index, so identical
inputs always produce identical outputs.

Data is normalized internally (per-row and objective scaling to unit max
magnitude) and rescaled on exit; tolerances apply to the scaled data.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .model import DimensionError

LE, EQ, GE = "<=", "=", ">="

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"

_MAX_ITERATIONS = 200_000


class IterationLimitError(RuntimeError):
    """The pivot loop exceeded the hard iteration cap."""


@dataclass(frozen=True)
class LpProblem:
    """max c @ x subject to A x (<=|=|>=) rhs and per-variable bounds."""

    c: np.ndarray
    A: np.ndarray
    rhs: np.ndarray
    relations: tuple[str, ...]
    lower: Optional[np.ndarray] = None  # entries: 0.0 or -inf; default 0
    upper: Optional[np.ndarray] = None  # entries: +inf or finite; default +inf
    row_labels: Optional[tuple] = None

    def __post_init__(self):
        c = np.atleast_1d(np.asarray(self.c, dtype=float))
        A = np.asarray(self.A, dtype=float)
        if A.size == 0:
            A = A.reshape((0, c.shape[0]))
        A = np.atleast_2d(A)
        rhs = np.atleast_1d(np.asarray(self.rhs, dtype=float))
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "rhs", rhs)
        object.__setattr__(self, "relations", tuple(self.relations))
        m, n = A.shape
        if c.shape != (n,):
            raise DimensionError("objective length does not match column count")
        if rhs.shape != (m,):
            raise DimensionError("rhs length does not match row count")
        if len(self.relations) != m:
            raise DimensionError("relation count does not match row count")
        for rel in self.relations:
            if rel not in (LE, EQ, GE):
                raise ValueError(f"unknown relation {rel!r}")
        if self.lower is not None:
            lower = np.asarray(self.lower, dtype=float)
            if lower.shape != (n,):
                raise DimensionError("lower bound length does not match columns")
            object.__setattr__(self, "lower", lower)
        if self.upper is not None:
            upper = np.asarray(self.upper, dtype=float)
            if upper.shape != (n,):
                raise DimensionError("upper bound length does not match columns")
            object.__setattr__(self, "upper", upper)
        if self.row_labels is not None and len(self.row_labels) != m:
            raise DimensionError("row label count does not match row count")

    @property
    def num_rows(self) -> int:
        return self.A.shape[0]

    @property
    def num_cols(self) -> int:
        return self.A.shape[1]


@dataclass
class LpSolution:
    status: str
    x: Optional[np.ndarray]
    y: Optional[np.ndarray]
    objective: Optional[float]
    iterations: int
    row_labels: Optional[tuple] = None


def _expand(problem: LpProblem):
    """Rewrite bounds into the row/column structure the simplex core uses.

    Free variables are split into a difference of two nonnegative columns;
    finite upper bounds become extra <= rows. Returns (c, A, rhs, relations,
    recover) where recover maps an expanded solution vector back to original
    variables.
    """
    c = problem.c.copy()
    A = problem.A.copy()
    rhs = problem.rhs.copy()
    relations = list(problem.relations)
    n = problem.num_cols

    neg_cols = []
    if problem.lower is not None:
        for j in range(n):
            if problem.lower[j] == -np.inf:
                neg_cols.append(j)
            elif problem.lower[j] != 0.0:
                raise ValueError("lower bounds must be 0 or -inf")
    if neg_cols:
        A = np.hstack([A, -A[:, neg_cols]])
        c = np.concatenate([c, -c[neg_cols]])

    if problem.upper is not None:
        for j in range(n):
            u = problem.upper[j]
            if np.isfinite(u):
                row = np.zeros(A.shape[1])
                row[j] = 1.0
                if j in neg_cols:
                    row[n + neg_cols.index(j)] = -1.0
                A = np.vstack([A, row])
                rhs = np.concatenate([rhs, [u]])
                relations.append(LE)

    def recover(x_exp: np.ndarray) -> np.ndarray:
        x = x_exp[:n].copy()
        for k, j in enumerate(neg_cols):
            x[j] -= x_exp[n + k]
        return x

    return c, A, rhs, tuple(relations), recover


def solve(problem: LpProblem, tol: float = 1e-9) -> LpSolution:
    """Solve to optimality; infeasible/unbounded are reported via status."""
    if tol <= 0:
        raise ValueError("tolerance must be positive")
    c, A, rhs, relations, recover = _expand(problem)
    m, n = A.shape

    # Normalize: per-row scale on (A | rhs), global scale on c. Variables are
    # untouched so x needs no rescaling; duals pick up row_scale / c_scale.
    row_scale = np.maximum(np.max(np.abs(A), axis=1, initial=0.0), np.abs(rhs))
    row_scale = np.where(row_scale > 0, row_scale, 1.0)
    c_scale = max(np.max(np.abs(c), initial=0.0), 1.0)
    A = A / row_scale[:, None]
    rhs = rhs / row_scale
    c = c / c_scale

    # Orient rows so rhs >= 0 (flip sign and relation); remember orientation
    # to restore dual signs afterwards.
    flip = np.where(rhs < 0, -1.0, 1.0)
    A = A * flip[:, None]
    rhs = rhs * flip
    oriented = [
        rel if f > 0 else {LE: GE, GE: LE, EQ: EQ}[rel]
        for rel, f in zip(relations, flip)
    ]

    # Column layout: structural | slack/surplus | artificial.
    slack_of_row = {}
    art_of_row = {}
    cols = []
    for r, rel in enumerate(oriented):
        if rel == LE:
            col = np.zeros(m)
            col[r] = 1.0
            slack_of_row[r] = n + len(cols)
            cols.append(col)
        elif rel == GE:
            col = np.zeros(m)
            col[r] = -1.0
            slack_of_row[r] = n + len(cols)
            cols.append(col)
    n_slack = len(cols)
    for r, rel in enumerate(oriented):
        if rel == EQ or rel == GE:
            col = np.zeros(m)
            col[r] = 1.0
            art_of_row[r] = n + len(cols)
            cols.append(col)
    M = np.hstack([A] + [col[:, None] for col in cols]) if cols else A.copy()
    total = M.shape[1]
    art_cols = sorted(art_of_row.values())

    # Starting basis: slack for <= rows, artificial for = and >= rows.
    basis = np.empty(m, dtype=int)
    for r, rel in enumerate(oriented):
        basis[r] = art_of_row[r] if r in art_of_row else slack_of_row[r]

    T = np.hstack([M, rhs[:, None]])
    iterations = 0

    def pivot_loop(obj: np.ndarray, allowed: np.ndarray, start_iter: int) -> tuple[str, int]:
        """Run simplex pivots on tableau T for objective row ``obj``
        (reduced-cost row, maximization). Returns (status, iterations)."""
        it = start_iter
        zrow = obj.copy()
        # reduce objective row against current basis
        for r in range(m):
            if abs(zrow[basis[r]]) > 0:
                zrow = zrow - zrow[basis[r]] * T[r, :]
        dantzig_budget = 50 * (m + n) + 50
        while True:
            if it - start_iter > _MAX_ITERATIONS:
                raise IterationLimitError("simplex iteration cap exceeded")
            cand = np.where(allowed & (zrow[:total] > tol))[0]
            if cand.size == 0:
                nonlocal_obj[0] = zrow
                return OPTIMAL, it
            if it - start_iter < dantzig_budget:
                best = np.max(zrow[cand])
                q = int(cand[zrow[cand] >= best - 1e-15][0])
            else:  # Bland: lowest eligible index
                q = int(cand[0])
            d = T[:, q]
            pos = d > tol
            if not np.any(pos):
                nonlocal_obj[0] = zrow
                return UNBOUNDED, it
            ratios = np.full(m, np.inf)
            ratios[pos] = T[pos, -1] / d[pos]
            best_ratio = np.min(ratios)
            tie = np.where(ratios <= best_ratio + 1e-15)[0]
            # lowest basis-variable index among ties (Bland-compatible)
            p = int(tie[np.argmin(basis[tie])])
            # pivot
            piv = T[p, q]
            T[p, :] = T[p, :] / piv
            factors = T[:, q].copy()
            factors[p] = 0.0
            T[:, :] -= np.outer(factors, T[p, :])
            zrow = zrow - zrow[q] * T[p, :]
            basis[p] = q
            it += 1

    nonlocal_obj = [None]

    # Phase 1: drive artificials to zero.
    if art_cols:
        obj1 = np.zeros(total + 1)
        for ac in art_cols:
            obj1[ac] = -1.0
        allowed1 = np.ones(total, dtype=bool)
        status, iterations = pivot_loop(obj1, allowed1, iterations)
        if status != OPTIMAL:
            raise RuntimeError("phase 1 cannot be unbounded")
        # zrow's constant column carries the negated objective value, so this
        # is the total remaining infeasibility.
        phase1_value = float(nonlocal_obj[0][-1])
        if phase1_value > tol * (1.0 + m):
            return LpSolution(INFEASIBLE, None, None, None, iterations,
                              problem.row_labels)
        # Pivot any artificial still in the basis out on a nonzero row entry,
        # or leave it (its value is ~0 and its column stays excluded).
        art_set = set(art_cols)
        for r in range(m):
            if basis[r] in art_set:
                row = T[r, :total]
                choices = [
                    j for j in range(total)
                    if j not in art_set and abs(row[j]) > 1e-7
                ]
                if choices:
                    q = choices[0]
                    piv = T[r, q]
                    T[r, :] = T[r, :] / piv
                    factors = T[:, q].copy()
                    factors[r] = 0.0
                    T[:, :] -= np.outer(factors, T[r, :])
                    basis[r] = q

    # Phase 2.
    obj2 = np.zeros(total + 1)
    obj2[:n] = c
    allowed2 = np.ones(total, dtype=bool)
    for ac in art_cols:
        allowed2[ac] = False
    status, iterations = pivot_loop(obj2, allowed2, iterations)
    if status == UNBOUNDED:
        return LpSolution(UNBOUNDED, None, None, None, iterations,
                          problem.row_labels)

    x_exp = np.zeros(total)
    x_exp[basis] = T[:, -1]

    # Duals from the final basis: y = B^-T c_B on the scaled, oriented data.
    cost = np.zeros(total)
    cost[:n] = c
    B = M[:, basis]
    y = np.linalg.solve(B.T, cost[basis])
    # Undo orientation and scaling; drop internal upper-bound rows.
    y = y * flip * (c_scale / row_scale)
    y = y[: problem.num_rows]
    x = recover(x_exp)
    z = float(problem.c @ x)
    return LpSolution(OPTIMAL, x, y, z, iterations, problem.row_labels)


def check_certificate(problem: LpProblem, solution: LpSolution,
                      tol: float = 1e-7) -> bool:
    """Verify primal feasibility, dual feasibility, complementary slackness
    and the duality gap of an optimal solution, each within ``tol``."""
    if solution.status != OPTIMAL:
        return False
    x, y = solution.x, solution.y
    if x is None or y is None:
        return False
    A, rhs, c = problem.A, problem.rhs, problem.c
    m, n = problem.num_rows, problem.num_cols
    scale = max(np.max(np.abs(A), initial=0.0), np.max(np.abs(rhs), initial=0.0),
                np.max(np.abs(c), initial=0.0), 1.0)
    t = tol * scale

    lower = problem.lower if problem.lower is not None else np.zeros(n)
    upper = problem.upper if problem.upper is not None else np.full(n, np.inf)

    slack = rhs - A @ x
    for r, rel in enumerate(problem.relations):
        if rel == LE and slack[r] < -t:
            return False
        if rel == GE and slack[r] > t:
            return False
        if rel == EQ and abs(slack[r]) > t:
            return False
        # dual sign conventions
        if rel == LE and y[r] < -t:
            return False
        if rel == GE and y[r] > t:
            return False
        # complementary slackness on rows
        if rel != EQ and abs(y[r] * slack[r]) > t * (1.0 + abs(rhs[r])):
            return False
    if np.any(x < lower - t) or np.any(x > upper + t):
        return False

    # Dual feasibility and complementary slackness on columns. For a
    # maximization the reduced cost is c_j - (A^T y)_j; it must be <= 0 for
    # columns free to increase, >= 0 for columns free to decrease, and it
    # contributes max(0, red_j) * upper_j to the dual objective when the
    # upper bound is finite.
    red = c - A.T @ y
    dual_obj = float(y @ rhs)
    for j in range(n):
        at_upper = np.isfinite(upper[j]) and x[j] > upper[j] - t
        at_lower = lower[j] == 0.0 and x[j] < t
        if red[j] > t and not at_upper:
            return False
        if red[j] < -t and not at_lower:
            return False
        if np.isfinite(upper[j]):
            dual_obj += max(0.0, red[j]) * upper[j]

    z = float(c @ x)
    if abs(z - dual_obj) > tol * scale * (1.0 + abs(z)):
        return False
    return True
