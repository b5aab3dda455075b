"""Brute-force verification of the mechanism's promised properties.

Every check here evaluates the defining inequalities by direct arithmetic on
pricing outcomes; nothing in this module calls into the LP solver or the
mechanism's optimization paths, so a bug there cannot hide from a check
here. The grid-search oracle is the independent reference for the small
assignment programs.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .model import Assignment, MarketInstance, ValuationProfile

MAX_GRID_POINTS = 10_000_000


class GridTooLargeError(ValueError):
    """The requested grid search exceeds the enumeration budget."""


@dataclass(frozen=True)
class PropertyReport:
    """Outcome of one property check over its full quantifier range."""

    name: str
    passed: bool
    worst_violation: float
    tolerance: float
    witness: Optional[dict] = None

    def describe(self) -> str:
        status = "pass" if self.passed else "FAIL"
        out = f"{self.name}: {status} (worst violation {self.worst_violation:.3e})"
        if not self.passed and self.witness:
            out += f" witness {self.witness}"
        return out


def check_truthfulness(
    instance: MarketInstance,
    outcome_fn: Callable[[ValuationProfile], object],
    tol: float,
) -> PropertyReport:
    """Max gain over every (traveler, true scenario, misreport row) triple.

    ``outcome_fn`` must map a reported profile to a PricingOutcome
    deterministically. Utilities under a misreport are re-evaluated at the
    traveler's true valuations.
    """
    worst = -np.inf
    witness = None
    S = instance.scenario_count
    for s in range(S):
        true_profile = instance.scenario(s)
        truthful = outcome_fn(true_profile)
        for i in range(instance.traveler_count):
            v_true = true_profile.matrix[i]
            u_true = float(
                v_true @ truthful.final.matrix[i] - truthful.payments[i]
            )
            for m in range(S):
                reported = true_profile.with_row(i, instance.scenario(m).matrix[i])
                deviated = outcome_fn(reported)
                u_dev = float(
                    v_true @ deviated.final.matrix[i] - deviated.payments[i]
                )
                gain = u_dev - u_true
                if gain > worst:
                    worst = gain
                    witness = {"traveler": i, "scenario": s, "misreport": m}
    worst = float(worst) if np.isfinite(worst) else 0.0
    passed = worst <= tol
    return PropertyReport("truthfulness", passed, worst, tol,
                          None if passed else witness)


def check_voluntary_participation(outcome, tol: float) -> PropertyReport:
    """Every traveler's realized utility must be nonnegative."""
    u = np.asarray(outcome.utilities, dtype=float)
    worst = float(-np.min(u)) if u.size else 0.0
    i = int(np.argmin(u)) if u.size else None
    passed = worst <= tol
    return PropertyReport(
        "voluntary_participation", passed, worst, tol,
        None if passed else {"traveler": i},
    )


def check_budget_fairness(outcome, budgets, tol: float) -> PropertyReport:
    """No payment may exceed the traveler's budget."""
    p = np.asarray(outcome.payments, dtype=float)
    b = np.asarray(budgets, dtype=float)
    excess = p - b
    worst = float(np.max(excess)) if excess.size else 0.0
    i = int(np.argmax(excess)) if excess.size else None
    passed = worst <= tol
    return PropertyReport(
        "budget_fairness", passed, worst, tol,
        None if passed else {"traveler": i},
    )


def check_sustainability(
    outcomes: Sequence, worst_case_objective: float, tol: float
) -> PropertyReport:
    """The lowest total payment across scenarios must cover the worst-case
    program value."""
    revenues = [float(np.sum(o.payments)) for o in outcomes]
    shortfall = worst_case_objective - min(revenues)
    s = int(np.argmin(revenues))
    passed = shortfall <= tol
    return PropertyReport(
        "sustainability", passed, float(shortfall), tol,
        None if passed else {"scenario": s},
    )


def check_feasibility(outcome, instance: MarketInstance, tol: float) -> PropertyReport:
    """Final assignment respects nonnegativity, limits and capacities."""
    m = outcome.final.matrix
    worst = max(
        float(np.max(-m, initial=0.0)),
        float(np.max(m.sum(axis=1) - instance.service_limits, initial=0.0)),
        float(np.max(m.sum(axis=0) - instance.capacities, initial=0.0)),
    )
    passed = worst <= tol
    return PropertyReport("feasibility", passed, worst, tol)


def brute_force_assignment(
    instance: MarketInstance,
    scenario: ValuationProfile,
    step: float,
) -> tuple[float, np.ndarray]:
    """Exhaustive grid search of the single-scenario welfare program.

    Searches the feasibility polytope (limits, capacities, budget rows,
    nonnegativity) on a per-cell grid of spacing ``step`` augmented with the
    0/1 corner values, returning the best objective and an attaining
    assignment. Intended as a desk-scale oracle, hence the hard size caps.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    I, J = instance.shape
    if I * J > 9:
        raise GridTooLargeError("grid oracle supports at most 9 cells")
    v = scenario.matrix

    cell_values = []
    for i in range(I):
        for j in range(J):
            hi = float(min(instance.service_limits[i], instance.capacities[j]))
            pts = set(np.arange(0.0, hi + step / 2, step).round(12))
            pts.update((0.0, min(1.0, hi), hi))
            cell_values.append(sorted(pts))
    total = 1
    for pts in cell_values:
        total *= len(pts)
        if total > MAX_GRID_POINTS:
            raise GridTooLargeError(f"grid would exceed {MAX_GRID_POINTS} points")

    best_val = -np.inf
    best = np.zeros((I, J))
    limits = instance.service_limits
    caps = instance.capacities
    budgets = instance.budgets
    for combo in itertools.product(*cell_values):
        a = np.array(combo).reshape(I, J)
        if np.any(a.sum(axis=1) > limits + 1e-12):
            continue
        if np.any(a.sum(axis=0) > caps + 1e-12):
            continue
        if np.any((a * v).sum(axis=1) > budgets + 1e-12):
            continue
        val = float((a * v).sum())
        if val > best_val:
            best_val = val
            best = a
    if not np.isfinite(best_val):
        raise RuntimeError("grid search found no feasible point (zero is always feasible)")
    return best_val, best
