import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from mohl import cases, postprocess as pp
from mohl.bvp import OutOfDomain
from mohl.physics import BoundaryDriver
from mohl.signals import Constant
from mohl.stepper import SimulationResult, run_simulation


def snapshot_result(v, u, theta, mu, times=None, x=None):
    v = np.atleast_2d(v)
    x = np.linspace(0, 1, v.shape[1]) if x is None else x
    times = np.arange(v.shape[0], dtype=float) if times is None else times
    full = lambda a: np.broadcast_to(a, v.shape).astype(float)  # noqa: E731
    return SimulationResult(times=times, x=x, v=full(v), u=full(u), theta=full(theta), mu=full(mu))


# ---------------------------------------------------------------------------
# error norms


@settings(max_examples=50, deadline=None)
@given(arrays(float, (4, 6), elements=st.floats(-10, 10)), arrays(float, (4, 6), elements=st.floats(-10, 10)))
def test_inf_error_is_max_of_l2_profile(a, b):
    prof = pp.l2_error_profile(a, b)
    brute = [math.sqrt(sum((a[t, j] - b[t, j]) ** 2 for t in range(4)) / 4) for j in range(6)]
    np.testing.assert_allclose(prof, brute, rtol=1e-12, atol=1e-300)
    assert pp.inf_error(prof) == max(prof)


def test_error_norm_shape_checks():
    with pytest.raises(pp.GridMismatch):
        pp.l2_error_profile(np.zeros((2, 3)), np.zeros((2, 4)))
    with pytest.raises(pp.GridMismatch):
        pp.l2_error_profile(np.zeros((0, 3)), np.zeros((0, 3)))
    with pytest.raises(pp.GridMismatch):
        pp.error_report(np.zeros(2), np.zeros((1, 3)), np.zeros((1, 3)), np.zeros((1, 3)), np.zeros((1, 3)))


def test_compare_results_interpolates_reference_grid():
    xf = np.linspace(0, 1, 11)
    xc = np.linspace(0, 1, 6)
    fine = snapshot_result(np.vstack([xf, 2 * xf]), 1.0, 0.0, 0.0, x=xf)
    coarse = snapshot_result(np.vstack([xc, 2 * xc]) + 0.1, 1.0, 0.0, 0.0, x=xc)
    rep = pp.compare_results(coarse, fine)
    np.testing.assert_allclose(rep.eps2_v, 0.1)
    assert rep.eps_inf_u == 0.0 and rep.n_t == 2
    rep1 = pp.compare_results(coarse, fine, tau_star=0.0)
    assert rep1.n_t == 1
    late = snapshot_result(np.vstack([xf, xf]), 1.0, 0.0, 0.0, x=xf, times=np.array([0.0, 5.0]))
    with pytest.raises(pp.GridMismatch):
        pp.compare_results(coarse, late)


# ---------------------------------------------------------------------------
# sensor comparison


@settings(max_examples=50, deadline=None)
@given(arrays(float, 7, elements=st.floats(-50, 50)), arrays(float, 7, elements=st.floats(0.1, 50)))
def test_relative_error_matches_brute_force(num, meas):
    out = pp.relative_error_series({"a": num}, {"a": meas})["a"]
    brute = np.array([math.sqrt((num[i] - meas[i]) ** 2) / meas[i] for i in range(7)])
    assert np.array_equal(out, brute)


def test_relative_error_guards():
    with pytest.raises(pp.ZeroMeasurement):
        pp.relative_error_series({"a": [1.0]}, {"a": [0.0]})
    with pytest.raises(pp.GridMismatch):
        pp.relative_error_series({"a": [1.0, 2.0]}, {"a": [1.0]})


def test_total_uncertainty():
    assert pp.total_uncertainty(3.0, 4.0) == 5.0
    np.testing.assert_allclose(pp.total_uncertainty(0.3, np.array([0.0, 0.4])), [0.3, 0.5])
    with pytest.raises(ValueError):
        pp.total_uncertainty(-1.0, 1.0)
    np.testing.assert_allclose(pp.positional_uncertainty([-2.0, 3.0], 0.01), [0.02, 0.03])


# ---------------------------------------------------------------------------
# fluxes


def test_fluxes_vanish_at_equilibrium():
    model = cases.single_layer().model
    res = snapshot_result(np.ones((3, 5)), 1.0, 0.0, 0.0)
    f = pp.boundary_fluxes(res, model)
    assert np.all(f.q_s == 0) and np.all(f.q_l == 0) and np.all(f.g == 0)


def test_fluxes_for_linear_profiles():
    case = cases.constant_coefficient_case(gamma2=0.02)
    model = case.model
    r = model.references
    res = snapshot_result(np.full((2, 5), 1.0), 1.0, 0.5, -0.25)
    f = pp.boundary_fluxes(res, model, x0=0.5)
    np.testing.assert_allclose(f.q_s, r.k_T0 * r.T0 * 0.25 / r.L)
    np.testing.assert_allclose(f.q_l, -r.k_T0 * r.T0 * 0.02 * 0.5 / r.L)
    np.testing.assert_allclose(f.g, -r.k_M0 * r.Pv0 * 0.5 / r.L)
    np.testing.assert_allclose(f.total_heat, f.q_s + f.q_l)
    with pytest.raises(OutOfDomain):
        pp.boundary_fluxes(res, model, x0=1.5)


def test_flux_sign_follows_gradient_on_a_solved_run():
    drivers = (BoundaryDriver("left", Constant(1.03), Constant(0.9)),
               BoundaryDriver("right", Constant(1.0), Constant(0.5)))
    case = cases.constant_coefficient_case(drivers=drivers, tau_star=2.0, dt_star=0.5)
    res = run_simulation(case, keep_solutions=True)
    f = pp.boundary_fluxes(res, case.model, x0=0.5)
    assert np.all(f.g[1:] > 0) and np.all(f.q_s[1:] > 0)


# ---------------------------------------------------------------------------
# moisture budget


def robin_budget(dt):
    drivers = (BoundaryDriver("left", Constant(1.0), Constant(1.4)),
               BoundaryDriver("right", Constant(1.0), Constant(0.7)))
    case = cases.constant_coefficient_case(drivers=drivers, tau_star=3.0, dt_star=dt, tol=1e-8)
    res = run_simulation(case, keep_solutions=True)
    return pp.mass_budget(res, case.model), res, case


def test_mass_budget_closes_for_a_robin_run():
    coarse, res, case = robin_budget(0.05)
    fine, _, _ = robin_budget(0.025)
    assert coarse.inflow.size == res.times.size - 1
    # the initial field does not satisfy the boundary condition, so the
    # first (first-order) step carries nearly all of the imbalance
    later = np.sum(coarse.residual[1:] * np.diff(coarse.times)[1:]) / np.sum(np.abs(coarse.inflow))
    assert later < 0.05 * coarse.aggregate_closure
    assert coarse.aggregate_closure / fine.aggregate_closure == pytest.approx(2.0, rel=0.1)
    # the output grid gives the same budget to quadrature accuracy
    res.solutions = None
    assert pp.mass_budget(res, case.model).aggregate_closure == pytest.approx(coarse.aggregate_closure, rel=1e-3)


def test_storage_density_is_integral_of_capacity():
    model = cases.single_layer().model
    c_m = model.layers[0].closure.c_M
    w = pp._storage_density(model, np.array([1.3]), 0, 0.8)[0]
    xs = np.linspace(0.8, 1.3, 20001)
    ref = np.trapezoid(c_m(xs), xs) if hasattr(np, "trapezoid") else np.trapz(c_m(xs), xs)
    assert w == pytest.approx(ref, rel=1e-8)


# ---------------------------------------------------------------------------
# interface traces


def test_interface_report_needs_solutions():
    res = snapshot_result(np.ones((2, 5)), 1.0, 0.0, 0.0)
    with pytest.raises(ValueError):
        pp.interface_report(res, cases.multilayer().model)


def test_interface_traces_of_a_multilayer_run():
    case = cases.multilayer().replace(tau_star=0.5)
    res = run_simulation(case, keep_solutions=True)
    rep = pp.interface_report(res, case.model)
    assert rep.x_star == pytest.approx(10 / 12)
    assert np.max(rep.field_jump["v"]) < 1e-12 and np.max(rep.field_jump["u"]) < 1e-12
    assert rep.total_heat_jump.shape == res.times.shape


# ---------------------------------------------------------------------------
# tables


@settings(max_examples=30, deadline=None)
@given(records=st.lists(st.tuples(st.floats(allow_nan=False, allow_infinity=False), st.integers(-10**6, 10**6),
                          st.text(alphabet=st.characters(blacklist_categories=("Cs",), blacklist_characters="\r\x00"),
                                  max_size=8).filter(lambda s: _not_numeric(s))),
                max_size=6))
def test_csv_round_trip(records, tmp_path_factory):
    path = tmp_path_factory.mktemp("csv") / "t.csv"
    table = pp.Table(("a", "b", "c"), [list(r) for r in records])
    pp.export_csv(table, path)
    back = pp.read_csv(path)
    assert back.columns == ("a", "b", "c")
    assert len(back.rows) == len(records)
    for got, want in zip(back.rows, records):
        assert got[0] == want[0]
        assert got[1] == float(want[1])
        assert got[2] == want[2]


def _not_numeric(s):
    try:
        float(s)
    except ValueError:
        return True
    return False


def test_csv_header_only_and_errors(tmp_path):
    p = pp.export_csv(pp.Table(("x",), []), tmp_path / "h.csv")
    assert p.read_bytes() == b"x\r\n"
    assert pp.read_csv(p).rows == []
    (tmp_path / "e.csv").write_text("")
    with pytest.raises(ValueError):
        pp.read_csv(tmp_path / "e.csv")
    with pytest.raises(pp.IoFailure):
        pp.read_csv(tmp_path / "missing.csv")
    with pytest.raises(pp.IoFailure):
        pp.export_csv(pp.Table(("x",), []), tmp_path / "nodir" / "x.csv")
    with pytest.raises(ValueError):
        pp.Table(("a", "b"), [[1]])


def test_result_tables():
    res = snapshot_result(np.ones((2, 3)), 1.0, 0.0, 0.0)
    t = pp.fields_table(res)
    assert t.columns == ("t_star", "x_star", "v", "u", "theta", "mu") and len(t.rows) == 6
    rows = pp.rows_table(("a", "b"), [{"a": 1}, {"b": 2.0}])
    assert rows.rows == [[1, ""], ["", 2.0]]
