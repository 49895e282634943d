import numpy as np
import pytest

from mohl import cases, stepper
from mohl.bvp import CollocationSolution
from mohl.physics import BoundaryDriver
from mohl.signals import Constant
from mohl.stepper import (
    BDF_COEFFICIENTS,
    BdfDerivative,
    FunctionField,
    InsufficientHistory,
    PolynomialField,
    TimeGrid,
    advance_step,
    bdf_time_derivative,
    initial_state,
    run_simulation,
)

PI = np.pi


def manufactured_case(dt, tau=1.0, Fo_T=2.0 / PI**2, gamma1=0.05, gamma2=0.01):
    """v = 1 + exp(-t) sin(pi x), u = 1 + A exp(-t) sin(pi x) for unit closures."""
    amp = (gamma1 - Fo_T * PI**2 * gamma2) / (Fo_T * PI**2 - 1.0)
    s = lambda x: np.sin(PI * x)  # noqa: E731
    v0 = FunctionField(lambda x: 1.0 + s(x), lambda x: PI * np.cos(PI * x), lambda x: -PI**2 * s(x))
    u0 = FunctionField(lambda x: 1.0 + amp * s(x), lambda x: amp * PI * np.cos(PI * x),
                       lambda x: -amp * PI**2 * s(x))
    case = cases.constant_coefficient_case(Fo_M=1.0 / PI**2, Fo_T=Fo_T, gamma1=gamma1, gamma2=gamma2,
                                           v0=v0, u0=u0, dt_star=dt, tau_star=tau, tol=1e-10)
    return case, amp


def final_errors(dt):
    case, amp = manufactured_case(dt)
    res = run_simulation(case)
    assert res.ok
    x, t = res.x, res.times[-1]
    ev = np.max(np.abs(res.v[-1] - (1.0 + np.exp(-t) * np.sin(PI * x))))
    eu = np.max(np.abs(res.u[-1] - (1.0 + amp * np.exp(-t) * np.sin(PI * x))))
    return ev, eu


def test_bdf2_coefficients_are_consistent():
    # exact for constants and linear functions in time
    for order, coef in BDF_COEFFICIENTS.items():
        assert sum(coef) == pytest.approx(0.0)
        assert -sum(i * c for i, c in enumerate(coef)) == pytest.approx(1.0)


def test_bdf_constant_field_has_zero_derivative():
    f = np.full(5, 3.7)
    np.testing.assert_allclose(bdf_time_derivative([f, f], f, 0.1, 2), 0.0, atol=1e-13)
    np.testing.assert_allclose(bdf_time_derivative([f], f, 0.1, 1), 0.0, atol=1e-13)


def test_bdf_linear_in_time_is_exact():
    dt = 0.25
    vals = [2.0 + 3.0 * k * dt for k in range(3)]
    assert bdf_time_derivative([vals[1], vals[0]], vals[2], dt, 2) == pytest.approx(3.0)


def test_insufficient_history():
    with pytest.raises(InsufficientHistory):
        bdf_time_derivative([np.zeros(2)], np.zeros(2), 0.1, 2)
    with pytest.raises(InsufficientHistory):
        BdfDerivative((PolynomialField.uniform(1.0),), 0.1, 2)
    with pytest.raises(ValueError):
        bdf_time_derivative([np.zeros(2)] * 3, np.zeros(2), 0.1, 3)


def test_time_grid():
    g = TimeGrid(0.1, 72.0)
    assert g.steps == 720
    assert g.times[-1] == pytest.approx(72.0)
    with pytest.raises(ValueError):
        TimeGrid(0.0, 1.0)


def test_temporal_order_is_two():
    coarse = final_errors(0.1)
    fine = final_errors(0.05)
    ratio_v = coarse[0] / fine[0]
    ratio_u = coarse[1] / fine[1]
    assert 3.4 <= ratio_v <= 4.6, ratio_v
    assert 3.4 <= ratio_u <= 4.6, ratio_u


def test_first_step_uses_first_order_formula():
    case, _ = manufactured_case(0.1)
    state = initial_state(case.v0, case.u0)
    assert len(state.history_v) == 1
    s1 = advance_step(state, case.model, case.drivers, case.layer_options(), 0.1)
    assert len(s1.history_v) == 2 and s1.history_v[1] is case.v0
    s2 = advance_step(s1, case.model, case.drivers, case.layer_options(), 0.1)
    assert s2.history_v[1] is s1.v_solution
    assert isinstance(s2.v_solution, CollocationSolution)


def test_guess_reuses_previous_mesh():
    case = cases.constant_coefficient_case(tau_star=0.3)
    state = initial_state(case.v0, case.u0)
    s1 = advance_step(state, case.model, case.drivers, case.layer_options(), 0.1)
    s2 = advance_step(s1, case.model, case.drivers, case.layer_options(), 0.1)
    # the equilibrium is solved exactly on the inherited mesh, with no Newton work left;
    # quiet intervals may then be merged, so nodes only disappear
    assert s2.newton_iterations == (0, 0)
    assert set(s2.v_solution.mesh.nodes) <= set(s1.v_solution.mesh.nodes)


def test_moisture_is_solved_before_heat(monkeypatch):
    case = cases.constant_coefficient_case(tau_star=0.1)
    calls = []
    real = stepper.solve_bvp

    def spy(system, bc, guess, options=None, pinned=()):
        sol = real(system, bc, guess, options, pinned)
        calls.append((system.jac is None, sol))
        return sol

    monkeypatch.setattr(stepper, "solve_bvp", spy)
    state = advance_step(initial_state(case.v0, case.u0), case.model, case.drivers, case.layer_options(), 0.1)
    # moisture system uses difference Jacobians, heat carries an analytic one
    assert [c[0] for c in calls] == [True, False]
    assert calls[0][1] is state.v_solution and calls[1][1] is state.u_solution


@pytest.mark.parametrize("dt", [0.1, 1.0, 10.0])
def test_large_steps_stay_within_data_extremes(dt):
    drivers = (BoundaryDriver("left", Constant(1.02), Constant(0.8)),
               BoundaryDriver("right", Constant(0.98), Constant(0.6)))
    v0 = PolynomialField((0.5, 0.0, 0.7))  # 0.7 .. 1.2
    u0 = PolynomialField.uniform(1.0)
    case = cases.constant_coefficient_case(drivers=drivers, v0=v0, u0=u0, dt_star=dt, tau_star=20 * dt)
    res = run_simulation(case)
    assert res.ok
    lo_v, hi_v = 0.6, 1.2
    lo_u, hi_u = 0.98, 1.02
    assert np.all(np.isfinite(res.v)) and np.all(np.isfinite(res.u))
    assert res.v.min() >= lo_v - 1e-9 and res.v.max() <= hi_v + 1e-9
    assert res.u.min() >= lo_u - 1e-9 and res.u.max() <= hi_u + 1e-9


def test_failure_is_recorded_not_raised():
    case = cases.constant_coefficient_case(tau_star=0.5)
    bad = case.replace(max_nodes=2, initial_nodes=2, min_nodes=2,
                       v0=PolynomialField((40.0, -40.0, 10.0, 1.0)))
    res = run_simulation(bad)
    assert not res.ok
    assert isinstance(res.error, stepper.StepFailure)
    assert res.times.size == res.v.shape[0] == 1


def test_field_helpers():
    p = PolynomialField((2.0, 1.0))
    val, der = p.evaluate(np.array([0.0, 1.0]))
    np.testing.assert_allclose(val, [[1.0, 3.0], [2.0, 2.0]])
    np.testing.assert_allclose(der, [[2.0, 2.0], [0.0, 0.0]])
    f = FunctionField(np.sin, np.cos, lambda x: -np.sin(x))
    np.testing.assert_allclose(f(np.array([0.0]))[:, 0], [0.0, 1.0])
