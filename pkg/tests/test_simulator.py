import numpy as np
import pytest

from empty_car_routing.core.exceptions import SimulationError
from empty_car_routing.simulation.policies import RoutingPolicy, policy_jlcr, policy_lookahead, policy_static, policy_sw
from empty_car_routing.simulation.simulator import FleetSimulator, RandomStream, initial_state_proportional, simulate
from empty_car_routing.solvers.fluid_opt import lookahead_table, standard_fluid_table
from empty_car_routing.solvers.mva import analyze
from empty_car_routing.utils.models import NetworkParams, RoutingMatrix, SimConfig


@pytest.fixture
def single_car():
    return NetworkParams(r=1, n_cars=1, lam=[1.0], mu=[[1.0]], p=[[1.0]])


class _OutOfRange(RoutingPolicy):
    name = "broken"

    def decide(self, region, state, params, time, rng):
        return params.r


def test_random_stream_is_reproducible():
    a, b = RandomStream(9), RandomStream(9)
    assert [a.uniform() for _ in range(10)] == [b.uniform() for _ in range(10)]
    assert a.exponential(2.0) == b.exponential(2.0)


class TestInitialState:
    def test_proportional_to_demand(self, two_region):
        state = initial_state_proportional(two_region)
        np.testing.assert_array_equal(state.idle(), [800, 400])
        assert state.f_count.sum() == 0

    def test_single_car_goes_to_busiest_region(self, two_region):
        state = initial_state_proportional(two_region.with_fleet(1))
        np.testing.assert_array_equal(state.idle(), [1, 0])

    def test_rounding_keeps_fleet_size(self, didi):
        assert initial_state_proportional(didi.with_fleet(997)).total_cars == 997


class TestSimulate:
    def test_single_car_alternates(self, single_car):
        metrics = simulate(single_car, policy_static(RoutingMatrix.identity(1)),
                           SimConfig(horizon=10_000.0, warmup=100.0, seed=1))
        assert metrics.fulfilled_fraction[0] == pytest.approx(0.5, abs=0.02)
        assert metrics.time_available[0] == pytest.approx(0.5, abs=0.02)
        assert metrics.utility == pytest.approx(metrics.fulfilled_fraction[0])

    def test_empty_fleet_serves_nobody(self, two_region):
        metrics = simulate(two_region, policy_static(RoutingMatrix.identity(2)),
                           SimConfig(horizon=10.0, n_cars=0))
        assert metrics.utility == 0.0
        np.testing.assert_array_equal(metrics.fulfilled, 0)
        np.testing.assert_array_equal(metrics.fulfilled_fraction, 0.0)

    @pytest.mark.parametrize("policy", [policy_jlcr(0.5), policy_sw()])
    def test_cars_are_conserved(self, didi, policy):
        config = SimConfig(horizon=20.0, warmup=0.0, n_cars=200, check_conservation=True, seed=3)
        simulator = FleetSimulator(didi, policy, config, seed=3)
        summary = simulator.run()
        assert summary["final_state"].total_cars == 200
        assert np.all(summary["fulfilled"] <= summary["requests"])
        total_mass = summary["mean_e"].sum() + summary["mean_f"].sum()
        assert total_mass == pytest.approx(1.0, abs=1e-9)

    def test_same_seed_same_result(self, two_region, q_half):
        config = SimConfig(horizon=50.0, n_cars=120, seed=7, replications=2)
        first = simulate(two_region, policy_static(q_half), config)
        second = simulate(two_region, policy_static(q_half), config)
        assert first.replicate_utilities == second.replicate_utilities
        np.testing.assert_array_equal(first.requests, second.requests)

    def test_workers_match_sequential(self, two_region, q_half):
        config = SimConfig(horizon=30.0, n_cars=60, seed=2, replications=2)
        sequential = simulate(two_region, policy_static(q_half), config.model_copy(update={"max_workers": 1}))
        pooled = simulate(two_region, policy_static(q_half), config.model_copy(update={"max_workers": 2}))
        assert pooled.replicate_utilities == sequential.replicate_utilities

    def test_policy_out_of_range(self, two_region):
        with pytest.raises(SimulationError):
            simulate(two_region, _OutOfRange(), SimConfig(horizon=50.0, n_cars=20))

    def test_static_scenario_needs_horizon(self, two_region, q_half):
        with pytest.raises(SimulationError):
            simulate(two_region, policy_static(q_half), SimConfig())

    def test_warmup_must_fit_in_horizon(self, two_region, q_half):
        with pytest.raises(SimulationError):
            simulate(two_region, policy_static(q_half), SimConfig(horizon=5.0, warmup=10.0))

    def test_initial_state_size_checked(self, two_region, q_half):
        state = initial_state_proportional(two_region.with_fleet(10))
        with pytest.raises(SimulationError):
            simulate(two_region, policy_static(q_half), SimConfig(horizon=5.0), initial_state=state)

    def test_schedule_bins(self, city):
        table = standard_fluid_table(city)
        config = SimConfig(warmup=0.0, n_cars=100, bin_width=1.0, seed=4)
        metrics = simulate(city, policy_lookahead(table, name="standard_fluid"), config)
        assert len(metrics.bins) == 6
        assert metrics.bins[0].start == pytest.approx(17.0)
        assert metrics.bins[-1].end == pytest.approx(23.0)
        assert sum(b.requests for b in metrics.bins) == int(metrics.requests.sum())

    def test_schedule_bins_follow_slots_by_default(self, city):
        config = SimConfig(warmup=0.0, n_cars=50, seed=4)
        metrics = simulate(city, policy_lookahead(standard_fluid_table(city)), config)
        assert [b.start for b in metrics.bins] == pytest.approx([17.0, 19.0, 21.0])

    def test_finite_fleet_below_fluid_bound(self, two_region, two_region_optimum):
        config = SimConfig(horizon=200.0, warmup=50.0, seed=5)
        metrics = simulate(two_region, policy_static(two_region_optimum.q_star), config)
        assert 0.78 < metrics.utility < 5.0 / 6.0


@pytest.mark.slow
class TestAcceptance:
    def test_matches_mva(self, two_region, q_half):
        exact = analyze(two_region.with_fleet(50), q_half, 50).availability
        config = SimConfig(horizon=2000.0, warmup=100.0, n_cars=50, seed=10, replications=10)
        metrics = simulate(two_region, policy_static(q_half), config)
        half_width = 1.96 * metrics.fraction_std / np.sqrt(10)
        assert np.all(np.abs(metrics.fulfilled_fraction - exact) <= np.maximum(half_width, 5e-3))

    def test_didi_gap_shrinks_with_fleet(self, didi, didi_optimum):
        policy = policy_static(didi_optimum.q_star)
        gaps = []
        for n_cars in (500, 2000, 8000):
            metrics = simulate(didi, policy, SimConfig(horizon=200.0, warmup=20.0, n_cars=n_cars,
                                                       seed=20, replications=5))
            assert metrics.utility < didi_optimum.value
            gaps.append(didi_optimum.value - metrics.utility)
        assert gaps[0] > gaps[1] > gaps[2]
        assert gaps[2] < 0.03

    def test_lookahead_beats_standard_fluid(self, city):
        config = SimConfig(warmup=0.0, n_cars=1000, seed=0, replications=10, travel_time_mode="deterministic")
        standard = simulate(city, policy_lookahead(standard_fluid_table(city)), config)
        delta = 1.0 / 60.0 * city.units_per_hour
        ahead = simulate(city, policy_lookahead(lookahead_table(city, delta, 0.5 * city.units_per_hour)), config)
        assert ahead.utility - standard.utility >= 0.05
        assert 0.72 <= standard.utility <= 0.78
        assert 0.81 <= ahead.utility <= 0.87
