import numpy as np
import pytest
from pydantic import ValidationError

from empty_car_routing.core.exceptions import FluidIntegrationError
from empty_car_routing.solvers.equilibrium import equilibrium_point
from empty_car_routing.solvers.fluid_ode import (derivative, distance_to_equilibrium, from_equilibrium,
                                                 idle_state, integrate, random_fluid_state)
from empty_car_routing.utils.models import FluidState, RoutingMatrix


class TestDerivative:
    @pytest.mark.parametrize("routing", [
        RoutingMatrix(q=[[1.0, 0.0], [0.5, 0.5]]),
        RoutingMatrix.identity(2),
    ])
    def test_equilibrium_is_a_fixed_point(self, two_region, routing):
        point = equilibrium_point(two_region, routing)
        de, df, _ = derivative(from_equilibrium(point), two_region, routing)
        np.testing.assert_allclose(de, 0.0, atol=1e-10)
        np.testing.assert_allclose(df, 0.0, atol=1e-10)

    def test_reflection_rules(self, two_region):
        # All mass riding from region 2 to region 1: region 1 is flooded, region 2 starved
        state = FluidState(e=np.zeros((2, 2)), f=np.array([[0.0, 0.0], [1.0, 0.0]]))
        de, _, u_dot = derivative(state, two_region, RoutingMatrix.identity(2))
        assert u_dot[0] == 0.0
        assert de[0, 0] > 0
        assert u_dot[1] == pytest.approx(1.0)
        assert de[1, 1] == 0.0


class TestIntegrate:
    def test_equilibrium_stays_put(self, two_region, q_half):
        point = equilibrium_point(two_region, q_half)
        trajectory = integrate(from_equilibrium(point), two_region, q_half, t_end=5.0, dt=1e-3, point=point)
        final = trajectory.states[-1]
        assert np.max(np.abs(final.e - point.e_bar)) <= 1e-6
        assert np.max(np.abs(final.f - point.f_bar)) <= 1e-6

    def test_mass_conserved_and_regulator_monotone(self, two_region, q_half):
        trajectory = integrate(idle_state(2, 0), two_region, q_half, t_end=10.0, dt=1e-3)
        np.testing.assert_allclose(trajectory.mass, 1.0, atol=1e-6)
        assert np.all(np.diff(trajectory.u, axis=0) >= -1e-15)
        assert trajectory.steps == 10000
        assert trajectory.times[-1] == pytest.approx(10.0)

    def test_lyapunov_nonincreasing(self, mixing_params, mixing_routing):
        dt = 1e-3
        for seed in range(3):
            trajectory = integrate(random_fluid_state(2, seed), mixing_params, mixing_routing, t_end=10.0, dt=dt)
            assert trajectory.max_lyapunov_increase <= 10 * dt
            assert trajectory.lyapunov[-1] <= trajectory.lyapunov[0] + 10 * dt

    def test_large_step_aborts(self, two_region):
        state = FluidState(e=np.zeros((2, 2)), f=np.array([[0.0, 1.0], [0.0, 0.0]]))
        with pytest.raises(FluidIntegrationError):
            integrate(state, two_region, RoutingMatrix.identity(2), t_end=5.0, dt=5.0)

    def test_initial_mass_must_be_one(self, two_region, q_half):
        state = idle_state(2).model_copy(update={"e": np.full((2, 2), 0.5)})
        with pytest.raises(FluidIntegrationError):
            integrate(state, two_region, q_half, t_end=1.0)

    def test_reducible_routing_still_integrates(self):
        from empty_car_routing.utils.models import NetworkParams

        params = NetworkParams(r=2, n_cars=10, lam=[0.5, 0.5], mu=np.ones((2, 2)), p=np.eye(2))
        trajectory = integrate(idle_state(2, 0), params, RoutingMatrix.identity(2), t_end=1.0, dt=1e-2)
        assert trajectory.lyapunov is None
        np.testing.assert_allclose(trajectory.mass, 1.0, atol=1e-6)

    @pytest.mark.slow
    def test_converges_from_idle_start(self, two_region, q_half):
        point = equilibrium_point(two_region, q_half)
        trajectory = integrate(idle_state(2, 0), two_region, q_half, t_end=200.0, dt=1e-3,
                               record_interval=10.0, point=point)
        assert trajectory.distance[-1] < 1e-3
        np.testing.assert_allclose(trajectory.mass, 1.0, atol=1e-6)

    @pytest.mark.slow
    def test_didi_random_starts_converge(self, didi, didi_optimum):
        dt = 1e-3
        point = equilibrium_point(didi, didi_optimum.q_star)
        for seed in range(20):
            trajectory = integrate(random_fluid_state(9, seed), didi, didi_optimum.q_star, t_end=300.0, dt=dt,
                                   record_interval=50.0, point=point)
            assert trajectory.max_lyapunov_increase <= 10 * dt
            assert trajectory.distance[-1] < 1e-3


def test_random_state_on_simplex():
    state = random_fluid_state(3, seed=4)
    assert state.total_mass == pytest.approx(1.0)
    assert np.all(state.e >= 0) and np.all(state.f >= 0)


def test_distance_grows_with_perturbation(two_region, q_half):
    point = equilibrium_point(two_region, q_half)
    f = np.array(point.f_bar)
    f[1, 0] += 0.02
    f[0, 1] -= 0.02
    assert distance_to_equilibrium(FluidState(e=point.e_bar, f=f), point) >= 0.02 - 1e-12


class TestStateSpace:
    def test_mass_must_sum_to_one(self):
        with pytest.raises(ValidationError):
            FluidState(e=np.full((2, 2), 0.5), f=np.zeros((2, 2)))

    def test_negative_mass_rejected(self):
        with pytest.raises(ValidationError):
            FluidState(e=np.array([[1.2, 0.0], [0.0, 0.0]]), f=np.array([[0.0, -0.2], [0.0, 0.0]]))

    def test_shapes_must_match(self):
        with pytest.raises(ValidationError):
            FluidState(e=np.array([[1.0]]), f=np.zeros((2, 2)))

    def test_float_drift_tolerated(self):
        e = np.array([[0.5, 0.0], [0.0, 0.5 + 1e-9]])
        assert FluidState(e=e, f=np.zeros((2, 2))).total_mass == pytest.approx(1.0)
