import numpy as np
import pytest

from empty_car_routing.core.exceptions import ScenarioError, SolverError
from empty_car_routing.solvers.mva import analyze, availability_curve, station_layout
from empty_car_routing.utils.models import NetworkParams, RoutingMatrix


class TestTableOneAvailabilities:
    def test_third_sent_back(self, two_region, q_third):
        result = analyze(two_region, q_third, 1200)
        np.testing.assert_allclose(result.availability, [0.7319, 0.9759], atol=5e-4)

    def test_half_sent_back(self, two_region, q_half):
        result = analyze(two_region, q_half, 1200)
        np.testing.assert_allclose(result.availability, [0.7464, 0.7464], atol=5e-4)

    def test_no_empty_routing(self, two_region):
        result = analyze(two_region, RoutingMatrix.identity(2), 1200)
        assert result.availability[0] == pytest.approx(0.5, abs=5e-3)
        assert result.availability[1] >= 0.995


class TestStationLayout:
    def test_unused_empty_leg_pruned(self, two_region, q_half):
        labels = [s.label for s in station_layout(two_region, q_half).stations]
        assert "empty(1,2)" not in labels
        assert "empty(2,1)" in labels
        assert "full(1,1)" not in labels

    def test_single_region(self):
        params = NetworkParams(r=1, n_cars=3, lam=[1.0], mu=[[2.0]], p=[[1.0]])
        layout = station_layout(params, RoutingMatrix.identity(1))
        assert [s.label for s in layout.stations] == ["idle(1)", "full(1,1)"]
        assert layout.stations[0].rate == pytest.approx(3.0)
        assert layout.stations[1].rate == pytest.approx(2.0)

    def test_full_visit_ratios(self, didi, didi_optimum):
        layout = station_layout(didi, didi_optimum.q_star)
        visits = dict(zip([s.label for s in layout.stations], layout.visit_ratios))
        for i in range(9):
            for j in range(9):
                label = f"full({i + 1},{j + 1})"
                if label in visits:
                    assert visits[label] == pytest.approx(visits[f"idle({i + 1})"] * didi.p[i, j])

    def test_station_routing_is_stochastic(self, didi, didi_optimum):
        layout = station_layout(didi, didi_optimum.q_star)
        np.testing.assert_allclose(layout.routing.sum(axis=1), 1.0, atol=1e-9)

    def test_reducible_network(self):
        params = NetworkParams(r=2, n_cars=10, lam=[0.5, 0.5], mu=np.ones((2, 2)), p=np.eye(2))
        with pytest.raises(SolverError):
            station_layout(params, RoutingMatrix.identity(2))


class TestRecursion:
    @pytest.mark.parametrize("n_cars", [1, 7, 50])
    def test_population_conserved(self, didi, didi_optimum, n_cars):
        result = analyze(didi, didi_optimum.q_star, n_cars)
        assert result.mean_queue.sum() == pytest.approx(n_cars, abs=1e-6)

    def test_availability_below_one(self, two_region, q_third):
        for _, availability in availability_curve(two_region, q_third, [1, 10, 100]):
            assert np.all(availability < 1.0)
            assert np.all(availability > 0.0)

    def test_approaches_fluid_limit(self, two_region, q_half):
        curve = availability_curve(two_region, q_half, [100, 400, 1200, 4000])
        gaps = [abs(availability[0] - 0.75) for _, availability in curve]
        assert all(later < earlier for earlier, later in zip(gaps, gaps[1:]))
        assert [n for n, _ in curve] == [100, 400, 1200, 4000]

    def test_needs_a_car(self, two_region, q_half):
        with pytest.raises(ScenarioError):
            analyze(two_region, q_half, 0)
