"""Worst-case assignment mechanism: offline tables and online pricing.

The offline stage maximizes the minimum scenario welfare over per-scenario
assignment blocks (a max-min epigraph LP with cross-scenario consistency
rows), selects the worst-case scenario, fixes the nominal assignment, and
derives reservation payments from the dual variables of the worst-case
block. The online stage prices any realized valuation profile through an
adapted-assignment LP, per-traveler exclusion LPs, and a closed-form payment
rule; it never re-optimizes payments.

Everything offline is collected into immutable MechanismTables; pricing is a
pure function of (tables, realized profile), so distinct realized profiles
can be evaluated in parallel.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import lp
from .model import (
    Assignment,
    DimensionError,
    MarketInstance,
    ValuationProfile,
    is_feasible,
    utility,
)


class MechanismError(RuntimeError):
    """A pipeline stage produced an inconsistent or infeasible result."""


DEFAULT_TOL = 1e-7
LP_TOL = 1e-9


def _scale(instance: MarketInstance) -> float:
    """Magnitude used to convert the relative tolerance to absolute units."""
    vmax = max(
        (float(np.max(np.abs(p.matrix))) for p in instance.scenario_set),
        default=0.0,
    )
    return max(vmax, float(np.max(instance.budgets, initial=0.0)), 1.0)


@dataclass(frozen=True)
class DualCertificate:
    """The six dual-variable families of the worst-case program.

    xi1 (per traveler) and xi2 (per service) are the service-limit and
    capacity duals at the worst-case scenario. xi3 (per scenario) are the
    epigraph duals and sum to one. xi4 is indexed by (traveler, scenario,
    misreport scenario) and aggregates the cross-scenario consistency rows
    over services. xi5 and xi6 are indexed by (traveler, scenario); together
    they carry the budget-row duals.
    """

    xi1: np.ndarray
    xi2: np.ndarray
    xi3: np.ndarray
    xi4: np.ndarray
    xi5: np.ndarray
    xi6: np.ndarray

    def __post_init__(self):
        for name in ("xi1", "xi2", "xi3", "xi4", "xi5", "xi6"):
            arr = np.asarray(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)


@dataclass(frozen=True)
class MechanismTables:
    """Everything computed offline, before any realized profile arrives."""

    v_worst: ValuationProfile
    nominal: Assignment
    reservations: np.ndarray
    gamma: np.ndarray
    duals: DualCertificate
    worst_case_value: float

    @property
    def worst_index(self) -> int:
        return self.v_worst.index


@dataclass(frozen=True)
class PricingOutcome:
    """Per realized profile: assignments, payments and utilities."""

    realized: ValuationProfile
    adapted: Assignment
    exclusions: tuple[Assignment, ...]
    final: Assignment
    payments: np.ndarray
    utilities: np.ndarray


def build_worst_case_problem(instance: MarketInstance) -> lp.LpProblem:
    """The max-min welfare LP over all scenarios.

    Variables: the epigraph value t (free, column 0) followed by one I x J
    assignment block per scenario. Rows, all <=:
      epi s     : t - sum_ij v[s]_ij a[s]_ij <= 0
      limit i,s : sum_j a[s]_ij <= delta_i
      cap j,s   : sum_i a[s]_ij <= eps_j
      budget i,s: sum_j v[s]_ij a[s]_ij <= b_i
      ic i,j,s,t: v[s]_ij (a[t]_ij - a[s]_ij) <= 0   (misreport consistency)
    """
    I, J = instance.shape
    S = instance.scenario_count
    nvar = 1 + S * I * J

    def col(s: int, i: int, j: int) -> int:
        return 1 + s * I * J + i * J + j

    rows, rhs, labels = [], [], []

    for s in range(S):
        v = instance.scenario(s).matrix
        row = np.zeros(nvar)
        row[0] = 1.0
        for i in range(I):
            for j in range(J):
                row[col(s, i, j)] = -v[i, j]
        rows.append(row)
        rhs.append(0.0)
        labels.append(("epi", s))

    for s in range(S):
        for i in range(I):
            row = np.zeros(nvar)
            for j in range(J):
                row[col(s, i, j)] = 1.0
            rows.append(row)
            rhs.append(float(instance.service_limits[i]))
            labels.append(("limit", i, s))
        for j in range(J):
            row = np.zeros(nvar)
            for i in range(I):
                row[col(s, i, j)] = 1.0
            rows.append(row)
            rhs.append(float(instance.capacities[j]))
            labels.append(("cap", j, s))
        v = instance.scenario(s).matrix
        for i in range(I):
            row = np.zeros(nvar)
            for j in range(J):
                row[col(s, i, j)] = v[i, j]
            rows.append(row)
            rhs.append(float(instance.budgets[i]))
            labels.append(("budget", i, s))

    for s in range(S):
        v = instance.scenario(s).matrix
        for st in range(S):
            if st == s:
                continue
            for i in range(I):
                for j in range(J):
                    if v[i, j] == 0.0:
                        continue  # vacuous row
                    row = np.zeros(nvar)
                    row[col(st, i, j)] = v[i, j]
                    row[col(s, i, j)] = -v[i, j]
                    rows.append(row)
                    rhs.append(0.0)
                    labels.append(("ic", i, j, s, st))

    c = np.zeros(nvar)
    c[0] = 1.0
    lower = np.zeros(nvar)
    lower[0] = -np.inf
    return lp.LpProblem(
        c=c,
        A=np.array(rows),
        rhs=np.array(rhs),
        relations=tuple("<=" for _ in rows),
        lower=lower,
        row_labels=tuple(labels),
    )


def build_nominal_problem(instance: MarketInstance, s: int) -> lp.LpProblem:
    """Single-scenario welfare LP: max sum v a over the feasible,
    budget-respecting assignments for scenario ``s``."""
    I, J = instance.shape
    v = instance.scenario(s).matrix
    nvar = I * J
    rows, rhs, labels = [], [], []

    for i in range(I):
        row = np.zeros(nvar)
        row[i * J: (i + 1) * J] = 1.0
        rows.append(row)
        rhs.append(float(instance.service_limits[i]))
        labels.append(("limit", i, s))
    for j in range(J):
        row = np.zeros(nvar)
        row[j::J] = 1.0
        rows.append(row)
        rhs.append(float(instance.capacities[j]))
        labels.append(("cap", j, s))
    for i in range(I):
        row = np.zeros(nvar)
        row[i * J: (i + 1) * J] = v[i]
        rows.append(row)
        rhs.append(float(instance.budgets[i]))
        labels.append(("budget", i, s))

    return lp.LpProblem(
        c=v.ravel().copy(),
        A=np.array(rows),
        rhs=np.array(rhs),
        relations=tuple("<=" for _ in rows),
        row_labels=tuple(labels),
    )


@dataclass(frozen=True)
class WorstCaseResult:
    v_worst: ValuationProfile
    nominal: Assignment
    lp_solution: lp.LpSolution  # worst-block solve carrying the duals
    coupled_solution: lp.LpSolution
    objective: float  # max-min welfare value

    def __iter__(self):
        # allow (v_worst, nominal, lp_solution) unpacking
        return iter((self.v_worst, self.nominal, self.lp_solution))


def solve_worst_case(instance: MarketInstance) -> WorstCaseResult:
    """Find the worst-case scenario and its nominal assignment.

    The coupled max-min LP identifies the scenario with minimum optimal
    welfare (lowest index on ties). The nominal assignment and the dual
    variables are then read from a solve of that scenario's own welfare LP,
    whose complementary slackness ties reservations to worst-case values
    exactly.
    """
    I, J = instance.shape
    S = instance.scenario_count
    tol = instance.tolerance * _scale(instance)

    coupled = lp.solve(build_worst_case_problem(instance), LP_TOL)
    if coupled.status != lp.OPTIMAL:
        raise MechanismError(
            f"no feasible nominal assignment (worst-case LP {coupled.status})"
        )
    t_star = coupled.objective

    welfare = np.empty(S)
    for s in range(S):
        block = coupled.x[1 + s * I * J: 1 + (s + 1) * I * J]
        welfare[s] = instance.scenario(s).matrix.ravel() @ block
    candidates = np.where(welfare <= t_star + tol)[0]
    worst = int(candidates[0]) if candidates.size else int(np.argmin(welfare))

    standalone = lp.solve(build_nominal_problem(instance, worst), LP_TOL)
    if standalone.status != lp.OPTIMAL:
        raise MechanismError("no feasible nominal assignment")
    nominal = Assignment(standalone.x.reshape(I, J))
    return WorstCaseResult(
        v_worst=instance.scenario(worst),
        nominal=nominal,
        lp_solution=standalone,
        coupled_solution=coupled,
        objective=float(t_star),
    )


def extract_duals(
    lp_solution: lp.LpSolution,
    instance: MarketInstance,
    worst_index: Optional[int] = None,
) -> DualCertificate:
    """Partition a labeled dual vector into the six xi families.

    Works on both the coupled max-min LP (epigraph and consistency rows
    present) and a single worst-block LP (epigraph weight collapses to the
    block's scenario). Budget-row duals are booked under xi6; xi5 stays
    zero because the single budget row plays the affordability role and the
    pricing rebate must not exceed what payments can sustain.
    """
    if lp_solution.status != lp.OPTIMAL:
        raise MechanismError("dual extraction requires an optimal LP solution")
    if lp_solution.row_labels is None:
        raise MechanismError("dual extraction requires labeled rows")
    I, J = instance.shape
    S = instance.scenario_count

    xi1 = np.zeros(I)
    xi2 = np.zeros(J)
    xi3 = np.zeros(S)
    xi4 = np.zeros((I, S, S))
    xi5 = np.zeros((I, S))
    xi6 = np.zeros((I, S))

    seen = set()
    has_epi = False
    for label, dual in zip(lp_solution.row_labels, lp_solution.y):
        kind = label[0]
        value = max(float(dual), 0.0)  # <=-row duals; clip float noise
        if kind == "epi":
            has_epi = True
            xi3[label[1]] += value
        elif kind == "budget":
            xi6[label[1], label[2]] += value
            seen.add(label[2])
        elif kind == "ic":
            _, i, j, s, st = label
            xi4[i, s, st] += value
            seen.add(s)
        elif kind == "limit":
            seen.add(label[2])
        elif kind == "cap":
            seen.add(label[2])

    if worst_index is None:
        if has_epi:
            worst_index = int(np.argmax(xi3))
        elif len(seen) == 1:
            worst_index = next(iter(seen))
        else:
            raise MechanismError("worst scenario index cannot be inferred")

    for label, dual in zip(lp_solution.row_labels, lp_solution.y):
        if label[0] == "limit" and label[2] == worst_index:
            xi1[label[1]] = max(float(dual), 0.0)
        elif label[0] == "cap" and label[2] == worst_index:
            xi2[label[1]] = max(float(dual), 0.0)

    if not has_epi:
        xi3[worst_index] = 1.0
    total = xi3.sum()
    if abs(total - 1.0) > 1e-6:
        raise MechanismError(f"epigraph duals sum to {total}, expected 1")
    return DualCertificate(xi1, xi2, xi3, xi4, xi5, xi6)


def reservation_payments(
    duals: DualCertificate,
    v_worst: ValuationProfile,
    tol: float = DEFAULT_TOL,
) -> np.ndarray:
    """Per-cell minimum payments: xi1_i + xi2_j + (xi5_i + xi6_i) v_ij at the
    worst-case scenario. A value below -tol signals a dual-extraction bug."""
    w = v_worst.index
    if w is None:
        raise MechanismError("v_worst must carry its scenario index")
    mult = duals.xi5[:, w] + duals.xi6[:, w]
    r = duals.xi1[:, None] + duals.xi2[None, :] + mult[:, None] * v_worst.matrix
    scale = max(float(np.max(np.abs(v_worst.matrix), initial=0.0)), 1.0)
    if np.any(r < -tol * scale):
        raise MechanismError("negative reservation payment: inconsistent duals")
    return np.maximum(r, 0.0)


def compute_gamma(nominal: Assignment, scenario_set) -> np.ndarray:
    """Row i is taken from the scenario minimizing the nominal-assignment
    weighted value for traveler i (lowest index on ties)."""
    a = nominal.matrix
    I, J = a.shape
    gamma = np.zeros((I, J))
    for i in range(I):
        values = [float(a[i] @ prof.matrix[i]) for prof in scenario_set]
        best = int(np.argmin(values))
        gamma[i] = scenario_set[best].matrix[i]
    return gamma


def _residuals(instance: MarketInstance, tables: MechanismTables):
    """Residual capacity, per-traveler limit and budget room left by the
    nominal assignment. Tiny negative residuals are float noise."""
    a_bar = tables.nominal.matrix
    r = tables.reservations
    w = tables.worst_index
    cap = instance.capacities - a_bar.sum(axis=0)
    lim = instance.service_limits - a_bar.sum(axis=1)
    spent = (a_bar * r).sum(axis=1)
    rebate = tables.duals.xi5[:, w] * (a_bar * tables.gamma).sum(axis=1)
    budget = instance.budgets - spent + rebate
    return np.maximum(cap, 0.0), np.maximum(lim, 0.0), np.maximum(budget, 0.0)


def _adapted_problem(
    instance: MarketInstance,
    tables: MechanismTables,
    realized: ValuationProfile,
    exclude: Optional[int] = None,
) -> lp.LpProblem:
    """LP over the report-independent adapted set: maximize reservation
    surplus of the realized profile. With ``exclude`` set, traveler k's
    variables are dropped and their budget rows lose the rebate term."""
    I, J = instance.shape
    cap, lim, budget = _residuals(instance, tables)
    if exclude is not None:
        # exclusion-stage budget rooms carry no rebate term
        a_bar = tables.nominal.matrix
        spent = (a_bar * tables.reservations).sum(axis=1)
        budget = np.maximum(instance.budgets - spent, 0.0)
    travelers = [i for i in range(I) if i != exclude]
    index = {i: k for k, i in enumerate(travelers)}
    nvar = len(travelers) * J

    rows, rhs, labels = [], [], []
    for j in range(J):
        row = np.zeros(nvar)
        for i in travelers:
            row[index[i] * J + j] = 1.0
        rows.append(row)
        rhs.append(cap[j])
        labels.append(("cap", j))
    for i in travelers:
        row = np.zeros(nvar)
        row[index[i] * J: (index[i] + 1) * J] = 1.0
        rows.append(row)
        rhs.append(lim[i])
        labels.append(("limit", i))
    for i in travelers:
        for prof in instance.scenario_set:
            row = np.zeros(nvar)
            row[index[i] * J: (index[i] + 1) * J] = prof.matrix[i]
            rows.append(row)
            rhs.append(budget[i])
            labels.append(("budget", i, prof.index))

    c = np.zeros(nvar)
    surplus = realized.matrix - tables.reservations
    for i in travelers:
        c[index[i] * J: (index[i] + 1) * J] = surplus[i]
    return lp.LpProblem(
        c=c,
        A=np.array(rows),
        rhs=np.array(rhs),
        relations=tuple("<=" for _ in rows),
        row_labels=tuple(labels),
    )


def adapted_assignment(
    instance: MarketInstance,
    tables: MechanismTables,
    realized: ValuationProfile,
) -> Assignment:
    """Report-dependent extra assignment on top of the nominal one."""
    problem = _adapted_problem(instance, tables, realized)
    sol = lp.solve(problem, LP_TOL)
    if sol.status != lp.OPTIMAL:
        raise MechanismError(f"adapted assignment LP is {sol.status}")
    I, J = instance.shape
    return Assignment(sol.x.reshape(I, J))


def exclusion_assignment(
    instance: MarketInstance,
    tables: MechanismTables,
    realized: ValuationProfile,
    k: int,
) -> Assignment:
    """Adapted assignment computed as if traveler ``k`` were absent; row k of
    the result is identically zero."""
    I, J = instance.shape
    if not 0 <= k < I:
        raise IndexError(f"traveler index {k} out of range")
    problem = _adapted_problem(instance, tables, realized, exclude=k)
    sol = lp.solve(problem, LP_TOL)
    if sol.status != lp.OPTIMAL:
        raise MechanismError(f"exclusion LP for traveler {k} is {sol.status}")
    full = np.zeros((I, J))
    travelers = [i for i in range(I) if i != k]
    for pos, i in enumerate(travelers):
        full[i] = sol.x[pos * J: (pos + 1) * J]
    return Assignment(full)


def price(
    instance: MarketInstance,
    tables: MechanismTables,
    realized: ValuationProfile,
    adapted: Assignment,
    exclusions,
) -> np.ndarray:
    """Closed-form payment rule: own reservation charges plus the
    externality imposed on the other travelers' reservation surplus."""
    I, J = instance.shape
    r = tables.reservations
    a_bar = tables.nominal.matrix
    a_tld = adapted.matrix
    w = tables.worst_index
    surplus = (realized.matrix - r) * a_tld  # per-cell adapted surplus
    rebate = tables.duals.xi5[:, w] * (a_bar * tables.gamma).sum(axis=1)

    payments = np.zeros(I)
    total_surplus_rows = surplus.sum(axis=1)
    for k in range(I):
        others = [i for i in range(I) if i != k]
        excl = exclusions[k].matrix
        excl_welfare = sum(
            float((realized.matrix[i] - r[i]) @ excl[i]) for i in others
        )
        adapted_welfare_others = float(total_surplus_rows[others].sum())
        payments[k] = (
            float(a_tld[k] @ r[k])
            + float(a_bar[k] @ r[k])
            - float(rebate[k])
            + excl_welfare
            - adapted_welfare_others
        )
    return payments


def final_assignment(tables: MechanismTables, adapted: Assignment) -> Assignment:
    """Entrywise sum of nominal and adapted assignments."""
    if tables.nominal.shape != adapted.shape:
        raise DimensionError("nominal and adapted assignment shapes differ")
    return Assignment(tables.nominal.matrix + adapted.matrix)


def build_tables(instance: MarketInstance) -> MechanismTables:
    """Run the offline stage once; the result is immutable and reusable."""
    result = solve_worst_case(instance)
    duals = extract_duals(
        result.lp_solution, instance, worst_index=result.v_worst.index
    )
    r = reservation_payments(duals, result.v_worst, instance.tolerance)
    gamma = compute_gamma(result.nominal, instance.scenario_set)
    return MechanismTables(
        v_worst=result.v_worst,
        nominal=result.nominal,
        reservations=r,
        gamma=gamma,
        duals=duals,
        worst_case_value=result.objective,
    )


def run_pipeline(
    instance: MarketInstance,
    realized: ValuationProfile,
    tables: Optional[MechanismTables] = None,
    exclusion_cache: Optional[dict] = None,
) -> PricingOutcome:
    """Full offline + online pipeline for one realized profile.

    Pass ``tables`` to reuse the offline stage across realized profiles and
    ``exclusion_cache`` (a plain dict) to reuse exclusion LPs across reports
    that only change one traveler's row.
    """
    if tables is None:
        tables = build_tables(instance)
    I, J = instance.shape
    if realized.shape != (I, J):
        raise DimensionError("realized profile shape does not match instance")

    adapted = adapted_assignment(instance, tables, realized)
    exclusions = []
    for k in range(I):
        if exclusion_cache is not None:
            others = np.delete(realized.matrix, k, axis=0)
            key = (k, others.tobytes())
            if key not in exclusion_cache:
                exclusion_cache[key] = exclusion_assignment(
                    instance, tables, realized, k
                )
            exclusions.append(exclusion_cache[key])
        else:
            exclusions.append(exclusion_assignment(instance, tables, realized, k))
    exclusions = tuple(exclusions)

    payments = price(instance, tables, realized, adapted, exclusions)
    final = final_assignment(tables, adapted)
    scale = _scale(instance)
    if not is_feasible(final, instance, tol=instance.tolerance * scale * 10):
        raise MechanismError("final assignment violates feasibility")
    utilities = np.array(
        [
            utility(realized.matrix[i], final.matrix[i], payments[i])
            for i in range(I)
        ]
    )
    return PricingOutcome(
        realized=realized,
        adapted=adapted,
        exclusions=exclusions,
        final=final,
        payments=payments,
        utilities=utilities,
    )
