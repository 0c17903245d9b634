import numpy as np
import pytest

from empty_car_routing.core.exceptions import SolverError
from empty_car_routing.solvers.equilibrium import equilibrium_point, residuals
from empty_car_routing.solvers.fluid_opt import (apply_boundary_fixup, build_lookahead_lp, build_relaxed_lp,
                                                 lookahead_table, recover_routing, solve_fluid_optimum,
                                                 solve_lookahead, standard_fluid_table, utility, window_coefficients)
from empty_car_routing.utils.models import FluidSolution, NetworkParams, Schedule, ScheduleSlot
from empty_car_routing.utils.scenarios import perturb


def _solution(a_bar, idle):
    e_bar = np.diag(idle).astype(float)
    return FluidSolution(e_bar=e_bar, f_bar=np.zeros_like(e_bar), a_bar=a_bar, value=0.0)


class TestRelaxedLp:
    def test_didi_dimensions(self, didi):
        problem = build_relaxed_lp(didi)
        assert problem.n_vars == 171
        assert problem.n_rows == 2 * 81 + 2 * 9 + 1
        assert problem.n_constraints == 4 * 81 + 2 * 9 + 1

    def test_constraint_count_formula(self, two_region):
        assert build_relaxed_lp(two_region).n_constraints == 4 * 4 + 2 * 2 + 1


class TestFluidOptimum:
    def test_two_region_optimum(self, two_region_optimum):
        sol = two_region_optimum
        assert sol.value == pytest.approx(5.0 / 6.0, abs=1e-8)
        np.testing.assert_allclose(sol.a_bar, [0.75, 1.0], atol=1e-8)
        assert sol.f_bar[0, 0] == pytest.approx(0.0, abs=1e-12)
        np.testing.assert_allclose(sol.q_star.q, [[1.0, 0.0], [1.0 / 3.0, 2.0 / 3.0]], atol=1e-6)
        assert sol.e_bar[0, 1] == pytest.approx(0.0, abs=1e-12)

    def test_didi_optimum(self, didi_optimum):
        # Published value 0.8403 was computed from rounded data
        assert didi_optimum.value == pytest.approx(0.8403, abs=1e-3)
        assert didi_optimum.value == pytest.approx(0.84081, abs=1e-4)
        np.testing.assert_allclose(didi_optimum.q_star.q.sum(axis=1), 1.0, atol=1e-9)
        assert np.all(didi_optimum.q_star.q >= 0)

    @pytest.mark.parametrize("slot, expected", [(0, 0.91), (1, 0.92), (2, 0.92)])
    def test_city_slots(self, city, slot, expected):
        sol = solve_fluid_optimum(city.slots[slot].params)
        assert sol.value == pytest.approx(expected, abs=5e-3)

    def test_symmetric_market_needs_no_empty_routing(self):
        params = NetworkParams(r=2, n_cars=100, lam=[0.5, 0.5], mu=np.ones((2, 2)), p=[[0, 1], [1, 0]])
        sol = solve_fluid_optimum(params)
        assert sol.value == pytest.approx(1.0)
        np.testing.assert_allclose(sol.q_star.q, np.eye(2), atol=1e-9)

    def test_explicit_rewards(self, two_region):
        rewards = np.full((2, 2), 1.0 / two_region.lam.sum())
        assert solve_fluid_optimum(two_region, rewards).value == pytest.approx(5.0 / 6.0, abs=1e-8)

    def test_value_equals_utility_of_availability(self, didi_optimum, didi):
        assert utility(didi_optimum.a_bar, didi) == pytest.approx(didi_optimum.value, abs=1e-9)

    @pytest.mark.parametrize("name", ["two_region_optimum", "didi_optimum"])
    def test_equilibrium_round_trip(self, request, name):
        sol = request.getfixturevalue(name)
        params = request.getfixturevalue(name.replace("_optimum", ""))
        point = equilibrium_point(params, sol.q_star)
        np.testing.assert_allclose(point.a_bar, sol.a_bar, atol=1e-6)
        assert residuals(point, params, sol.q_star) <= 1e-8

    def test_recovered_routing_satisfies_flow_equations(self, didi_optimum, didi):
        q = recover_routing(didi_optimum, didi).q
        np.testing.assert_allclose(q, didi_optimum.q_star.q, atol=1e-12)
        mu = didi.mu
        full_in = (mu * didi_optimum.f_bar).sum(axis=0)
        off = ~np.eye(didi.r, dtype=bool)
        np.testing.assert_allclose((mu * didi_optimum.e_bar)[off], (q * full_in[:, None])[off], atol=1e-8)

    @pytest.mark.parametrize("seed", range(5))
    def test_perturbed_didi_is_solved(self, didi, seed):
        noisy = perturb(didi, 0.1, seed=seed)
        sol = solve_fluid_optimum(noisy)
        assert 0.5 < sol.value <= 1.0
        assert utility(sol.a_bar, noisy) == pytest.approx(sol.value, abs=1e-9)
        assert sol.q_star.max_row_error() <= 1e-9

    def test_raising_rewards_never_lowers_value(self, didi):
        rng = np.random.default_rng(4)
        base = rng.uniform(0.5, 2.0, size=(9, 9))
        raised = base + rng.uniform(0.0, 1.0, size=(9, 9))
        low = solve_fluid_optimum(didi, base).value
        high = solve_fluid_optimum(didi, raised).value
        assert high >= low - 1e-9

    def test_uniform_reward_increase_on_two_regions(self, two_region):
        base = np.full((2, 2), 1.0)
        raised = np.array([[1.0, 2.0], [1.0, 1.0]])
        assert solve_fluid_optimum(two_region, raised).value > solve_fluid_optimum(two_region, base).value


class TestRecoverRouting:
    def test_unbalanced_solution_is_rejected(self, two_region, two_region_optimum):
        broken = two_region_optimum.model_copy(update={"a_bar": np.array([0.5, 1.0])})
        with pytest.raises(SolverError):
            recover_routing(broken, two_region)

    def test_float_drift_is_absorbed(self, two_region, two_region_optimum):
        nudged = two_region_optimum.model_copy(update={"a_bar": two_region_optimum.a_bar + np.array([1e-13, 0.0])})
        q = recover_routing(nudged, two_region).q
        np.testing.assert_allclose(q.sum(axis=1), 1.0, atol=1e-15)
        np.testing.assert_allclose(q, two_region_optimum.q_star.q, atol=1e-9)

    def test_region_without_full_arrivals_keeps_its_cars(self):
        e_bar = np.array([[0.5, 0.0], [0.0, 0.5]])
        sol = FluidSolution(e_bar=e_bar, f_bar=np.zeros((2, 2)), a_bar=[1.0, 1.0], value=0.0)
        params = NetworkParams(r=2, n_cars=10, lam=[0.5, 0.5], mu=np.ones((2, 2)), p=[[0, 1], [1, 0]])
        np.testing.assert_array_equal(recover_routing(sol, params).q, np.eye(2))


class TestBoundaryFixup:
    def test_moves_idle_mass_to_saturated_region(self):
        fixed = apply_boundary_fixup(_solution([1.0, 0.8], [0.1, 0.05]))
        assert fixed.e_bar[0, 0] == pytest.approx(0.15)
        assert fixed.e_bar[1, 1] == 0.0
        assert fixed.fixup_applied

    def test_no_saturation_no_idle_is_unchanged(self):
        sol = _solution([0.7, 0.8], [0.0, 0.0])
        fixed = apply_boundary_fixup(sol)
        np.testing.assert_array_equal(fixed.e_bar, sol.e_bar)
        assert not fixed.fixup_applied

    def test_ties_go_to_smallest_index(self):
        fixed = apply_boundary_fixup(_solution([1.0, 1.0], [0.2, 0.3]))
        assert fixed.e_bar[0, 0] == pytest.approx(0.5)
        assert fixed.e_bar[1, 1] == 0.0

    def test_idle_mass_without_saturation_is_an_error(self):
        with pytest.raises(SolverError):
            apply_boundary_fixup(_solution([0.7, 0.8], [0.1, 0.0]))


class TestUtility:
    def test_full_and_zero_availability(self, didi):
        assert utility(np.ones(9), didi) == pytest.approx(1.0)
        assert utility(np.zeros(9), didi) == 0.0

    def test_two_region_arithmetic(self, two_region):
        assert utility([0.5, 1.0], two_region) == pytest.approx(2.0 / 3.0)


class TestLookahead:
    def test_constant_schedule_matches_static(self, two_region, two_region_optimum):
        schedule = Schedule(slots=[ScheduleSlot(start=0.0, end=10.0, params=two_region)])
        sol = solve_lookahead(schedule, 3.0, 0.5)
        assert sol.value == pytest.approx(two_region_optimum.value, abs=1e-9)
        np.testing.assert_allclose(sol.q_star.q, two_region_optimum.q_star.q, atol=1e-9)

    def test_coefficients_blend_across_boundary(self, city):
        coef = window_coefficients(city, 18.75, 0.5)
        expected = 0.5 * (city.slots[0].params.lam + city.slots[1].params.lam)
        np.testing.assert_allclose(coef.lam, expected)
        np.testing.assert_allclose(coef.mu, 0.5 * (city.slots[0].params.mu + city.slots[1].params.mu))

    def test_table_covers_schedule(self, city):
        delta = 1.0 / 60.0
        table = lookahead_table(city, delta, 0.5)
        assert len(table) == 360
        assert table[0][0] == pytest.approx(17.0)
        times = [t for t, _ in table]
        assert times == sorted(times)
        for _, routing in table:
            assert routing.max_row_error() <= 1e-9

    def test_standard_fluid_table(self, city):
        table = standard_fluid_table(city)
        assert [t for t, _ in table] == [17.0, 19.0, 21.0]

    def test_bad_delta(self, city):
        with pytest.raises(ValueError):
            lookahead_table(city, 0.0, 0.5)

    def test_lookahead_lp_of_constant_schedule_is_static_lp(self, two_region):
        schedule = Schedule(slots=[ScheduleSlot(start=0.0, end=10.0, params=two_region)])
        window = build_lookahead_lp(schedule, 2.0, 3.0)
        static = build_relaxed_lp(two_region)
        assert window.n_vars == static.n_vars
        np.testing.assert_allclose(window.objective, static.objective)
        np.testing.assert_allclose(window.a_matrix, static.a_matrix)
        np.testing.assert_allclose(window.rhs, static.rhs)
