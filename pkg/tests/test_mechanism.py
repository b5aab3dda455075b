import itertools

import numpy as np
import pytest

from mobmech import lp, mechanism, model
from mobmech.verify import brute_force_assignment


def make_instance(scenarios, budgets, capacities, limits=None, tol=1e-7):
    I, J = np.asarray(scenarios[0]).shape
    if limits is None:
        limits = np.ones(I)
    return model.MarketInstance(
        traveler_count=I,
        service_count=J,
        budgets=np.asarray(budgets, dtype=float),
        service_limits=np.asarray(limits, dtype=float),
        capacities=np.asarray(capacities, dtype=float),
        scenario_set=tuple(np.asarray(s, dtype=float) for s in scenarios),
        tolerance=tol,
    )


@pytest.fixture
def diag_instance():
    """Two travelers, two unit-capacity services, one scenario where each
    traveler prefers 'their' service at value 3."""
    return make_instance(
        scenarios=[[[3.0, 1.0], [1.0, 3.0]]],
        budgets=(10.0, 10.0),
        capacities=(1.0, 1.0),
    )


class TestWorstCase:
    def test_single_scenario_matches_grid_oracle(self, diag_instance):
        result = mechanism.solve_worst_case(diag_instance)
        oracle_val, oracle_a = brute_force_assignment(
            diag_instance, diag_instance.scenario(0), step=0.25
        )
        assert result.objective == pytest.approx(oracle_val, abs=1e-6)
        assert result.v_worst.index == 0
        assert result.nominal.matrix == pytest.approx(oracle_a, abs=1e-6)
        assert result.nominal.matrix == pytest.approx(np.eye(2))

    def test_dominated_scenario_is_worst(self):
        """With scenarios v and v/2 the halved one has the lower optimum."""
        v = np.array([[4.0, 2.0], [2.0, 4.0]])
        inst = make_instance(
            scenarios=[v, v / 2],
            budgets=(20.0, 20.0),
            capacities=(1.0, 1.0),
        )
        result = mechanism.solve_worst_case(inst)
        assert result.v_worst.index == 1
        oracle_val, _ = brute_force_assignment(inst, inst.scenario(1), 0.25)
        # cross-scenario consistency can only lower the guarantee
        assert result.objective <= oracle_val + 1e-6

    def test_tied_scenarios_pick_lowest_index(self):
        v = [[2.0, 1.0], [1.0, 2.0]]
        inst = make_instance(
            scenarios=[v, v],
            budgets=(10.0, 10.0),
            capacities=(1.0, 1.0),
        )
        assert mechanism.solve_worst_case(inst).v_worst.index == 0

    def test_zero_budgets_give_zero_economy(self):
        inst = make_instance(
            scenarios=[[[3.0, 1.0], [1.0, 3.0]]],
            budgets=(0.0, 0.0),
            capacities=(1.0, 1.0),
        )
        tables = mechanism.build_tables(inst)
        assert tables.worst_case_value == pytest.approx(0.0, abs=1e-9)
        outcome = mechanism.run_pipeline(inst, inst.scenario(0), tables)
        assert outcome.payments == pytest.approx(np.zeros(2), abs=1e-9)
        assert (outcome.final.matrix * inst.scenario(0).matrix).sum() == \
            pytest.approx(0.0, abs=1e-9)

    def test_objective_never_exceeds_any_scenario_optimum(self):
        rng = np.random.default_rng(3)
        for _ in range(5):
            scenarios = [rng.integers(0, 6, size=(2, 2)).astype(float)
                         for _ in range(3)]
            inst = make_instance(
                scenarios=scenarios,
                budgets=rng.integers(1, 12, size=2).astype(float),
                capacities=(1.0, 1.0),
            )
            result = mechanism.solve_worst_case(inst)
            for s in range(3):
                val, _ = brute_force_assignment(inst, inst.scenario(s), 0.25)
                assert result.objective <= val + 1e-6


class TestDualsAndReservations:
    def test_epigraph_duals_sum_to_one(self, diag_instance):
        result = mechanism.solve_worst_case(diag_instance)
        duals = mechanism.extract_duals(
            result.lp_solution, diag_instance, worst_index=0
        )
        assert duals.xi3.sum() == pytest.approx(1.0)
        assert duals.xi3[0] == pytest.approx(1.0)

    def test_reservations_nonnegative_and_supported_cells_match_values(
        self, diag_instance
    ):
        tables = mechanism.build_tables(diag_instance)
        r = tables.reservations
        assert np.all(r >= 0.0)
        # complementary slackness: wherever the nominal assignment is
        # positive, the reservation equals the worst-case valuation
        a = tables.nominal.matrix
        v = tables.v_worst.matrix
        gap = np.abs(a * (r - v)).max()
        assert gap <= 1e-6

    def test_diag_reservations_explicit(self, diag_instance):
        tables = mechanism.build_tables(diag_instance)
        assert tables.reservations[0, 0] == pytest.approx(3.0, abs=1e-7)
        assert tables.reservations[1, 1] == pytest.approx(3.0, abs=1e-7)

    def test_tight_budget_moves_duals_into_budget_row(self):
        # budget 1 binds before the unit capacity does
        inst = make_instance(
            scenarios=[[[4.0, 0.0], [0.0, 4.0]]],
            budgets=(1.0, 1.0),
            capacities=(1.0, 1.0),
        )
        tables = mechanism.build_tables(inst)
        assert tables.worst_case_value == pytest.approx(2.0, abs=1e-9)
        assert np.all(tables.duals.xi5 == 0.0)
        assert tables.duals.xi6[:, 0].sum() > 0.0

    def test_unlabeled_solution_rejected(self, diag_instance):
        sol = lp.solve(
            lp.LpProblem(c=[1.0], A=[[1.0]], rhs=[1.0], relations=["<="]),
            1e-9,
        )
        with pytest.raises(mechanism.MechanismError):
            mechanism.extract_duals(sol, diag_instance)


class TestGamma:
    def test_gamma_selects_per_traveler_minimum(self):
        nominal = model.Assignment(np.array([[1.0, 0.0], [0.0, 1.0]]))
        s0 = model.ValuationProfile(np.array([[5.0, 9.0], [9.0, 1.0]]), index=0)
        s1 = model.ValuationProfile(np.array([[2.0, 9.0], [9.0, 7.0]]), index=1)
        gamma = mechanism.compute_gamma(nominal, (s0, s1))
        # traveler 0: a.v is 5 under s0 and 2 under s1, so row from s1
        assert gamma[0] == pytest.approx([2.0, 9.0])
        # traveler 1: 1 under s0 and 7 under s1, so row from s0
        assert gamma[1] == pytest.approx([9.0, 1.0])

    def test_gamma_tie_picks_lowest_index(self):
        nominal = model.Assignment(np.zeros((1, 2)))
        s0 = model.ValuationProfile(np.array([[1.0, 1.0]]), index=0)
        s1 = model.ValuationProfile(np.array([[2.0, 2.0]]), index=1)
        gamma = mechanism.compute_gamma(nominal, (s0, s1))
        assert gamma[0] == pytest.approx([1.0, 1.0])


def _grid_adapted_oracle(instance, tables, realized, step):
    """Independent grid search of the adapted-assignment program."""
    I, J = instance.shape
    cap, lim, budget = mechanism._residuals(instance, tables)
    surplus = realized.matrix - tables.reservations
    pts = [
        sorted({round(x, 12) for x in np.arange(0.0, 1.0 + step / 2, step)})
        for _ in range(I * J)
    ]
    best = -np.inf
    for combo in itertools.product(*pts):
        a = np.array(combo).reshape(I, J)
        if np.any(a.sum(axis=0) > cap + 1e-9):
            continue
        if np.any(a.sum(axis=1) > lim + 1e-9):
            continue
        ok = True
        for prof in instance.scenario_set:
            if np.any((a * prof.matrix).sum(axis=1) > budget + 1e-9):
                ok = False
                break
        if not ok:
            continue
        best = max(best, float((a * surplus).sum()))
    return best


class TestOnlineStage:
    def test_adapted_is_zero_when_nominal_exhausts_capacity(self, diag_instance):
        tables = mechanism.build_tables(diag_instance)
        adapted = mechanism.adapted_assignment(
            diag_instance, tables, diag_instance.scenario(0)
        )
        assert adapted.matrix == pytest.approx(np.zeros((2, 2)), abs=1e-9)

    def test_adapted_objective_matches_grid_oracle(self):
        inst = make_instance(
            scenarios=[[[3.0, 1.0], [1.0, 3.0]], [[2.0, 2.0], [2.0, 2.0]]],
            budgets=(6.0, 6.0),
            capacities=(2.0, 2.0),
            limits=(2.0, 2.0),
        )
        tables = mechanism.build_tables(inst)
        realized = inst.scenario(1)
        adapted = mechanism.adapted_assignment(inst, tables, realized)
        lp_val = float(((realized.matrix - tables.reservations)
                        * adapted.matrix).sum())
        oracle = _grid_adapted_oracle(inst, tables, realized, step=0.25)
        assert lp_val >= oracle - 1e-6

    def test_exclusion_row_is_zero(self, diag_instance):
        tables = mechanism.build_tables(diag_instance)
        excl = mechanism.exclusion_assignment(
            diag_instance, tables, diag_instance.scenario(0), 1
        )
        assert excl.matrix[1] == pytest.approx([0.0, 0.0])

    def test_exclusion_index_out_of_range(self, diag_instance):
        tables = mechanism.build_tables(diag_instance)
        with pytest.raises(IndexError):
            mechanism.exclusion_assignment(
                diag_instance, tables, diag_instance.scenario(0), 5
            )

    def test_diag_payments_and_utilities(self, diag_instance):
        outcome = mechanism.run_pipeline(diag_instance, diag_instance.scenario(0))
        assert outcome.payments == pytest.approx([3.0, 3.0], abs=1e-7)
        assert outcome.utilities == pytest.approx([0.0, 0.0], abs=1e-7)
        assert outcome.final.matrix == pytest.approx(np.eye(2), abs=1e-9)

    def test_final_assignment_shape_mismatch(self, diag_instance):
        tables = mechanism.build_tables(diag_instance)
        with pytest.raises(model.DimensionError):
            mechanism.final_assignment(
                tables, model.Assignment(np.zeros((3, 2)))
            )

    def test_revenue_covers_worst_case_value(self):
        rng = np.random.default_rng(11)
        for _ in range(4):
            scenarios = [rng.integers(0, 8, size=(3, 2)).astype(float)
                         for _ in range(3)]
            inst = make_instance(
                scenarios=scenarios,
                budgets=rng.integers(0, 15, size=3).astype(float),
                capacities=rng.integers(1, 3, size=2).astype(float),
                limits=rng.integers(1, 3, size=3).astype(float),
            )
            tables = mechanism.build_tables(inst)
            for s in range(inst.scenario_count):
                outcome = mechanism.run_pipeline(inst, inst.scenario(s), tables)
                revenue = float(outcome.payments.sum())
                assert revenue >= tables.worst_case_value - 1e-6

    def test_payments_never_exceed_budgets(self):
        rng = np.random.default_rng(17)
        for _ in range(4):
            scenarios = [rng.integers(0, 8, size=(2, 2)).astype(float)
                         for _ in range(3)]
            inst = make_instance(
                scenarios=scenarios,
                budgets=rng.integers(0, 10, size=2).astype(float),
                capacities=(1.0, 1.0),
            )
            tables = mechanism.build_tables(inst)
            for s in range(inst.scenario_count):
                outcome = mechanism.run_pipeline(inst, inst.scenario(s), tables)
                assert np.all(outcome.payments <= inst.budgets + 1e-6)

    def test_exclusion_cache_reuse_gives_identical_payments(self, diag_instance):
        tables = mechanism.build_tables(diag_instance)
        cache = {}
        first = mechanism.run_pipeline(
            diag_instance, diag_instance.scenario(0), tables, cache
        )
        second = mechanism.run_pipeline(
            diag_instance, diag_instance.scenario(0), tables, cache
        )
        assert np.array_equal(first.payments, second.payments)
        assert len(cache) == 2

    def test_realized_shape_mismatch(self, diag_instance):
        tables = mechanism.build_tables(diag_instance)
        bad = model.ValuationProfile(np.ones((3, 2)))
        with pytest.raises(model.DimensionError):
            mechanism.run_pipeline(diag_instance, bad, tables)


def test_pipeline_deterministic():
    rng = np.random.default_rng(23)
    scenarios = [rng.integers(0, 9, size=(3, 3)).astype(float) for _ in range(2)]
    inst = make_instance(
        scenarios=scenarios,
        budgets=(7.0, 5.0, 9.0),
        capacities=(1.0, 2.0, 1.0),
        limits=(1.0, 1.0, 2.0),
    )
    a = mechanism.run_pipeline(inst, inst.scenario(0))
    b = mechanism.run_pipeline(inst, inst.scenario(0))
    assert np.array_equal(a.payments, b.payments)
    assert np.array_equal(a.final.matrix, b.final.matrix)
