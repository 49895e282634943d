from dataclasses import replace

import numpy as np
import pytest

from mohl import _kernels, cases
from mohl.physics import BoundaryDriver, Closure, CoefficientClosure, Layer
from mohl.reference import (
    CflViolation,
    GridConfig,
    PicardNonConvergence,
    admissible_dt,
    cfl_bound,
    euler_explicit_run,
    euler_implicit_run,
)
from mohl.signals import Constant
from mohl.stepper import FunctionField, PolynomialField

PI = np.pi
GAMMA2 = 0.01


def nonlinear_steady_case(dt=10.0, tau=300.0):
    """k_M(v) = v^2 with v = 1, 2 at the ends: steady state v = (1 + 7x)^(1/3).

    (k_M = v would be reproduced exactly, since averaged face values telescope v^2.)
    """
    closure = CoefficientClosure(
        c_M=Closure.constant(), c_T=Closure.constant(), c_TM=Closure.constant(),
        k_M=Closure.polynomial((1.0, 0.0, 0.0)), k_T=Closure.constant(), k_TM=Closure.constant())
    base = cases.constant_coefficient_case(gamma2=GAMMA2)
    model = replace(base.model, layers=(Layer(0.0, 1.0, closure),))
    drivers = (BoundaryDriver("left", Constant(1.0), Constant(1.0), mode="dirichlet"),
               BoundaryDriver("right", Constant(1.0), Constant(2.0), mode="dirichlet"))
    return base.replace(model=model, drivers=drivers, v0=PolynomialField((1.0, 1.0)),
                        dt_star=dt, tau_star=tau)


def steady_exact(x):
    v = np.cbrt(1.0 + 7.0 * x)
    return v, 1.0 + GAMMA2 * (1.0 + x - v)


def sine_case(dt, tau=1.0):
    v0 = FunctionField(lambda x: 1.0 + np.sin(PI * x), lambda x: PI * np.cos(PI * x),
                       lambda x: -PI**2 * np.sin(PI * x))
    return cases.constant_coefficient_case(Fo_M=1.0 / PI**2, v0=v0, dt_star=dt, tau_star=tau)


def test_equilibrium_is_preserved():
    case = cases.constant_coefficient_case(tau_star=1.0)
    g = GridConfig(20, 0.1)
    imp = euler_implicit_run(case, g)
    assert imp.ok
    np.testing.assert_allclose(imp.v, 1.0, atol=1e-13)
    np.testing.assert_allclose(imp.u, 1.0, atol=1e-13)
    exp = euler_explicit_run(case, GridConfig(20, 1e-3), output_dt=0.1)
    assert exp.ok
    np.testing.assert_allclose(exp.v, 1.0, atol=1e-13)


def test_implicit_spatial_order_is_two():
    errs = []
    for n in (10, 20, 40):
        res = euler_implicit_run(nonlinear_steady_case(), GridConfig(n, 10.0))
        assert res.ok
        v_ex, u_ex = steady_exact(res.x)
        errs.append(max(np.max(np.abs(res.v[-1] - v_ex)), np.max(np.abs(res.u[-1] - u_ex))))
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all((orders >= 1.7) & (orders <= 2.3)), orders


def test_implicit_temporal_order_is_one():
    errs = []
    for dt in (0.1, 0.05):
        res = euler_implicit_run(sine_case(dt), GridConfig(400, dt))
        t = res.times[-1]
        errs.append(np.max(np.abs(res.v[-1] - (1.0 + np.exp(-t) * np.sin(PI * res.x)))))
    order = np.log2(errs[0] / errs[1])
    assert 0.8 <= order <= 1.2, order


def test_explicit_refuses_steps_above_bound():
    case = sine_case(0.1)
    bound = cfl_bound(case.model, 1 / 50, (1.0, 2.0))
    # moisture (Fo_M = 1/pi^2) is the binding equation
    assert bound == pytest.approx((1 / 50) ** 2 * min(PI**2 / 2, 1.0 / (2 * 0.1)))
    with pytest.raises(CflViolation) as info:
        euler_explicit_run(case, GridConfig(50, 1.5 * bound), v_range=(1.0, 2.0))
    assert info.value.bound == pytest.approx(bound)


@pytest.mark.filterwarnings("ignore:overflow:RuntimeWarning", "ignore:invalid value:RuntimeWarning")
def test_explicit_bounded_below_and_divergent_above_bound():
    case = sine_case(0.1)
    v_range = (1.0, 2.0)
    bound = cfl_bound(case.model, 1 / 50, v_range)
    ok = euler_explicit_run(case, GridConfig(50, 0.9 * bound), tau_star=2000 * 0.9 * bound, v_range=v_range)
    assert ok.ok and ok.v.max() <= 2.0 + 1e-12 and ok.v.min() >= 1.0 - 1e-12
    bad = euler_explicit_run(case, GridConfig(50, 1.5 * bound), tau_star=2000 * 1.5 * bound,
                             v_range=v_range, check_cfl=False)
    assert not bad.ok or np.max(np.abs(bad.v[-1])) > 1e3


def test_admissible_dt_divides_output_interval():
    case = cases.single_layer()
    dt = admissible_dt(case, 100, 0.1)
    k = 0.1 / dt
    assert abs(k - round(k)) < 1e-9
    assert dt <= 0.9 * cfl_bound(case.model, 1e-2, case.operating_range) + 1e-18


def test_explicit_backends_agree(monkeypatch):
    case = cases.single_layer()
    grid = GridConfig(40, admissible_dt(case, 40, 0.1))
    monkeypatch.setattr(_kernels, "USE_NUMBA", _kernels.NUMBA_AVAILABLE)
    a = euler_explicit_run(case, grid, output_dt=0.1, tau_star=0.3)
    monkeypatch.setattr(_kernels, "USE_NUMBA", False)
    b = euler_explicit_run(case, grid, output_dt=0.1, tau_star=0.3)
    assert b.meta["backend"] == "numpy"
    assert a.meta["backend"] == ("numba" if _kernels.NUMBA_AVAILABLE else "numpy")
    np.testing.assert_allclose(a.v, b.v, rtol=0, atol=1e-12)
    np.testing.assert_allclose(a.u, b.u, rtol=0, atol=1e-12)


def test_explicit_and_implicit_agree_on_the_single_layer_case():
    case = cases.single_layer()
    grid = GridConfig(50, admissible_dt(case, 50, 0.1))
    exp = euler_explicit_run(case, grid, output_dt=0.1, tau_star=0.5)
    imp = euler_implicit_run(case, GridConfig(50, 1e-3), output_dt=0.1, tau_star=0.5)
    assert np.max(np.abs(exp.v - imp.v)) < 5e-4
    assert np.max(np.abs(exp.u - imp.u)) < 5e-5


def test_picard_failure_is_reported():
    res = euler_implicit_run(nonlinear_steady_case(dt=0.1, tau=0.3), GridConfig(20, 0.1), picard_max=1)
    assert isinstance(res.error, PicardNonConvergence)
    assert res.error.step == 1
    assert res.times.size == 1


def test_grid_puts_a_node_on_every_interface():
    model = cases.multilayer().model
    g = GridConfig.from_spacing(1e-3, 1e-3, model)
    assert g.intervals == 1002
    assert np.min(np.abs(g.x - model.interfaces[0])) < 1e-12
    assert GridConfig.from_spacing(0.01, 0.01).intervals == 100
    with pytest.raises(ValueError):
        GridConfig(3, 0.1)
    with pytest.raises(ValueError):
        GridConfig(10, 0.0)


def test_multilayer_interface_slopes_match():
    case = cases.multilayer()
    g = GridConfig.from_spacing(1 / 60, 0.05, case.model)
    res = euler_implicit_run(case, g, output_dt=0.1, tau_star=1.0)
    assert res.ok
    assert np.all(np.isfinite(res.v)) and res.meta["mean_picard_iterations"] >= 1
    j = int(round(case.model.interfaces[0] * g.intervals))
    # one-sided slopes agree at the interface row
    dx = g.dx_star
    v = res.v[-1]
    left = (3 * v[j] - 4 * v[j - 1] + v[j - 2]) / (2 * dx)
    right = (-3 * v[j] + 4 * v[j + 1] - v[j + 2]) / (2 * dx)
    assert left == pytest.approx(right, rel=1e-8, abs=1e-10)


def test_output_interval_must_divide():
    case = cases.constant_coefficient_case(tau_star=0.2)
    with pytest.raises(ValueError):
        euler_implicit_run(case, GridConfig(10, 0.03), output_dt=0.1)
