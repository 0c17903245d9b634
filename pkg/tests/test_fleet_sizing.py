import numpy as np
import pytest

from empty_car_routing.solvers.equilibrium import equilibrium_point
from empty_car_routing.solvers.fleet_sizing import (backhaul_routing, empty_masses, fleet_residual, full_masses,
                                                    min_fleet, repair_diagonal, total_mass,
                                                    triangle_inequality_holds)
from empty_car_routing.utils.models import FleetSizingResult, NetworkParams, RoutingMatrix


@pytest.fixture
def symmetric():
    return NetworkParams(r=2, n_cars=100, lam=[0.5, 0.5], mu=np.ones((2, 2)), p=[[0, 1], [1, 0]])


class TestMinFleet:
    def test_two_region_kappa(self, two_region):
        result = min_fleet(two_region)
        assert result.kappa == pytest.approx(4.0 / 3.0, abs=1e-8)
        np.testing.assert_allclose(result.q_kappa.q, [[1.0, 0.0], [0.5, 0.5]], atol=1e-8)
        assert result.e_kappa[1, 0] == pytest.approx(1.0 / 3.0)
        assert result.verdict == "undersupply"
        assert result.fleet_multiplier == pytest.approx(4.0 / 3.0)

    def test_rescaled_demand_reaches_one(self, two_region, didi):
        for params in (two_region, didi):
            kappa = min_fleet(params).kappa
            assert min_fleet(params.scaled_demand(1.0 / kappa)).kappa == pytest.approx(1.0, abs=1e-6)

    def test_balanced_market_needs_only_full_mass(self, symmetric):
        result = min_fleet(symmetric)
        assert result.kappa == pytest.approx(1.0)
        np.testing.assert_allclose(result.e_kappa, 0.0, atol=1e-12)

    def test_oversupplied_market(self, symmetric):
        assert min_fleet(symmetric.scaled_demand(0.5)).verdict == "oversupply"

    def test_full_mass_is_a_floor(self, didi):
        result = min_fleet(didi)
        assert result.kappa >= full_masses(didi).sum() - 1e-12
        assert fleet_residual(result.q_kappa.q, didi) <= 1e-8

    def test_backhaul_certificate(self, two_region, didi):
        for params in (two_region, didi):
            result = min_fleet(params)
            assert fleet_residual(backhaul_routing(params).q, params) <= 1e-12
            assert result.kappa <= result.backhaul_kappa + 1e-9


class TestRepairDiagonal:
    def test_positive_diagonal_left_alone(self, two_region):
        result = min_fleet(two_region)
        assert np.all(np.diag(result.q_kappa.q) > 0)
        repaired = repair_diagonal(result, two_region)
        assert repaired is result
        assert not repaired.repaired

    def test_swap_routing_gets_positive_diagonal(self, two_region):
        # Every car crosses back empty: feasible, but both diagonals are zero
        q = np.array([[0.0, 1.0], [1.0, 0.0]])
        assert fleet_residual(q, two_region) <= 1e-12
        result = FleetSizingResult(
            kappa=total_mass(q, two_region),
            q_kappa=RoutingMatrix(q=q),
            e_kappa=empty_masses(q, two_region),
            f_kappa=full_masses(two_region),
            triangle_ok=True,
        )
        repaired = repair_diagonal(result, two_region)
        assert repaired.repaired
        assert np.all(np.diag(repaired.q_kappa.q) > 0)
        assert repaired.kappa <= result.kappa + 1e-12
        assert fleet_residual(repaired.q_kappa.q, two_region) <= 1e-12

    def test_repaired_didi_keeps_kappa(self, didi):
        result = min_fleet(didi)
        repaired = repair_diagonal(result, didi)
        assert triangle_inequality_holds(didi) == result.triangle_ok
        if result.triangle_ok:
            assert np.all(np.diag(repaired.q_kappa.q) > 0)
            assert repaired.kappa == pytest.approx(result.kappa, abs=1e-8)

    def test_triangle_violation_skips_repair(self):
        mean_travel = np.array([[1.0, 1.0, 10.0], [1.0, 1.0, 1.0], [10.0, 1.0, 1.0]])
        params = NetworkParams(
            r=3, n_cars=10, lam=[0.5, 0.3, 0.2], mu=1.0 / mean_travel,
            p=[[0.0, 0.5, 0.5], [0.5, 0.0, 0.5], [0.5, 0.5, 0.0]],
        )
        assert not triangle_inequality_holds(params)
        result = min_fleet(params)
        assert not result.triangle_ok
        assert repair_diagonal(result, params) is result


class TestPerfectAvailability:
    @pytest.mark.parametrize("name", ["two_region", "didi"])
    def test_rescaled_demand_is_fully_served(self, request, name):
        params = request.getfixturevalue(name)
        result = repair_diagonal(min_fleet(params), params)
        rescaled = params.scaled_demand(1.0 / result.kappa)
        point = equilibrium_point(rescaled, result.q_kappa)
        np.testing.assert_allclose(point.a_bar, 1.0, atol=1e-6)
        assert point.m_bar == pytest.approx(0.0, abs=1e-6)

    def test_unscaled_demand_is_not(self, two_region):
        result = min_fleet(two_region)
        point = equilibrium_point(two_region, result.q_kappa)
        assert point.a_bar.max() == pytest.approx(1.0)
        np.testing.assert_allclose(point.a_bar, 0.75, atol=1e-9)


def test_triangle_holds_for_unit_travel(two_region):
    assert triangle_inequality_holds(two_region)
