"""Domain types for the budget-constrained mobility market.

A market instance couples travelers (with budgets and per-traveler service
limits) to capacitated services, together with a finite set of candidate
valuation profiles. All types are immutable after construction and every
operation here is a pure function, so instances can be shared freely across
threads.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np


class DimensionError(ValueError):
    """Shapes of the supplied arrays do not line up."""


def _frozen_array(values, dtype=float) -> np.ndarray:
    arr = np.array(values, dtype=dtype)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class ValuationProfile:
    """An I x J matrix of per-traveler, per-service monetary valuations.

    ``index`` is set when the profile was drawn from an instance's scenario
    set and records its position there.
    """

    matrix: np.ndarray
    index: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "matrix", _frozen_array(self.matrix))
        if self.matrix.ndim != 2:
            raise DimensionError("valuation profile must be a 2-d matrix")

    @property
    def shape(self):
        return self.matrix.shape

    def row(self, i: int) -> np.ndarray:
        return self.matrix[i]

    def with_row(self, i: int, row) -> "ValuationProfile":
        """Copy of this profile with traveler ``i``'s row replaced."""
        m = np.array(self.matrix)
        m[i] = np.asarray(row, dtype=float)
        return ValuationProfile(m)


@dataclass(frozen=True)
class MarketInstance:
    """Travelers, services, budgets, capacities and the scenario set."""

    traveler_count: int
    service_count: int
    budgets: np.ndarray
    service_limits: np.ndarray
    capacities: np.ndarray
    scenario_set: tuple[ValuationProfile, ...]
    name: str = ""
    tolerance: float = 1e-7

    def __post_init__(self):
        object.__setattr__(self, "budgets", _frozen_array(self.budgets))
        object.__setattr__(
            self, "service_limits", _frozen_array(self.service_limits, dtype=int)
        )
        object.__setattr__(
            self, "capacities", _frozen_array(self.capacities, dtype=int)
        )
        scenarios = tuple(
            ValuationProfile(
                v.matrix if isinstance(v, ValuationProfile) else v, index=k
            )
            for k, v in enumerate(self.scenario_set)
        )
        object.__setattr__(self, "scenario_set", scenarios)

    @property
    def shape(self):
        return (self.traveler_count, self.service_count)

    def scenario(self, s: int) -> ValuationProfile:
        return self.scenario_set[s]

    @property
    def scenario_count(self) -> int:
        return len(self.scenario_set)


@dataclass(frozen=True)
class Assignment:
    """Fractional traveler x service assignment matrix."""

    matrix: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "matrix", _frozen_array(self.matrix))
        if self.matrix.ndim != 2:
            raise DimensionError("assignment must be a 2-d matrix")

    @property
    def shape(self):
        return self.matrix.shape

    def row(self, i: int) -> np.ndarray:
        return self.matrix[i]


@dataclass(frozen=True)
class Violation:
    """One finding from validate(); warnings never invalidate an instance."""

    level: str  # "error" | "warning"
    message: str

    @property
    def is_error(self) -> bool:
        return self.level == "error"


def validate(instance: MarketInstance) -> list[Violation]:
    """Check every instance invariant.

    Returns an empty list when all invariants hold and no expectation is
    violated. A traveler count at or above the service count only produces a
    warning entry.
    """
    findings: list[Violation] = []
    I, J = instance.traveler_count, instance.service_count

    if I < 2:
        findings.append(Violation("error", "traveler_count below 2"))
    if J < 1:
        findings.append(Violation("error", "service_count below 1"))
    if instance.budgets.shape != (I,):
        findings.append(Violation("error", "budgets must have one entry per traveler"))
    else:
        for i, b in enumerate(instance.budgets):
            if b < 0:
                findings.append(Violation("error", f"budget negative for traveler {i}"))
    if instance.service_limits.shape != (I,):
        findings.append(
            Violation("error", "service_limits must have one entry per traveler")
        )
    else:
        for i, d in enumerate(instance.service_limits):
            if d < 1:
                findings.append(
                    Violation("error", f"service limit below 1 for traveler {i}")
                )
    if instance.capacities.shape != (J,):
        findings.append(
            Violation("error", "capacities must have one entry per service")
        )
    else:
        for j, e in enumerate(instance.capacities):
            if e < 1:
                findings.append(
                    Violation("error", f"capacity below 1 for service {j}")
                )
    if instance.scenario_count < 1:
        findings.append(Violation("error", "scenario set is empty"))
    for s, prof in enumerate(instance.scenario_set):
        if prof.shape != (I, J):
            findings.append(
                Violation("error", f"scenario {s} has shape {prof.shape}, expected {(I, J)}")
            )

    if I >= 2 and J >= 1 and I >= J:
        findings.append(
            Violation("warning", "I >= J: more travelers than services")
        )
    return findings


def is_valid(instance: MarketInstance) -> bool:
    return not any(f.is_error for f in validate(instance))


def is_feasible(a: Assignment, instance: MarketInstance, tol: float = 0.0) -> bool:
    """True iff the assignment respects nonnegativity, per-traveler service
    limits and per-service capacities within additive tolerance ``tol``."""
    if tol < 0:
        raise ValueError("tolerance must be nonnegative")
    m = a.matrix
    if m.shape != instance.shape:
        raise DimensionError(
            f"assignment shape {m.shape} does not match instance {instance.shape}"
        )
    if np.any(m < -tol):
        return False
    if np.any(m.sum(axis=1) > instance.service_limits + tol):
        return False
    if np.any(m.sum(axis=0) > instance.capacities + tol):
        return False
    return True


def utility(v_row, a_row, payment: float) -> float:
    """Traveler utility: assigned value minus payment."""
    v = np.asarray(v_row, dtype=float)
    a = np.asarray(a_row, dtype=float)
    if v.shape != a.shape:
        raise DimensionError("valuation and assignment rows differ in length")
    return float(v @ a - payment)


def revenue(payments) -> float:
    """Total collected payments."""
    return float(np.sum(np.asarray(payments, dtype=float)))
