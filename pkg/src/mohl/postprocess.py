"""Surface fluxes, error norms, sensor comparisons, moisture budget and CSV export.

Inputs are :class:`mohl.stepper.SimulationResult` snapshots: fields and
their slopes ``theta``, ``mu`` on a fixed output grid.  MOHL results carry
the slopes of the collocation polynomials, so fluxes are never obtained by
differencing the stored values.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .bvp import OutOfDomain
from .physics import DimensionlessModel, saturation_pressure, saturation_pressure_derivative

__all__ = [
    "GridMismatch",
    "ZeroMeasurement",
    "IoFailure",
    "FluxSeries",
    "ErrorReport",
    "Table",
    "boundary_fluxes",
    "l2_error_profile",
    "inf_error",
    "error_report",
    "compare_results",
    "relative_error_series",
    "total_uncertainty",
    "positional_uncertainty",
    "sensor_comparison",
    "MassBudget",
    "mass_budget",
    "InterfaceReport",
    "interface_report",
    "export_csv",
    "read_csv",
    "fields_table",
    "flux_table",
    "error_table",
]


class GridMismatch(ValueError):
    pass


class ZeroMeasurement(ValueError):
    pass


class IoFailure(OSError):
    pass


# ---------------------------------------------------------------------------
# fluxes


@dataclass(frozen=True)
class FluxSeries:
    """Sensible and latent heat flux (W/m^2) and moisture flow (kg/m^2/s) at ``x0``.

    Positive values point towards increasing ``x``.
    """

    t_star: np.ndarray
    q_s: np.ndarray
    q_l: np.ndarray
    g: np.ndarray
    x0: float

    @property
    def total_heat(self) -> np.ndarray:
        return self.q_s + self.q_l


def _closure_values(model: DimensionlessModel, v, x, side: str):
    """Transfer coefficients ``k_M, k_T, k_TM`` at ``x``; ``side`` picks the layer at an interface."""
    x = float(x)
    idx = int(model.layer_index(x))
    if side == "left" and idx > 0 and np.isclose(x, model.interfaces[idx - 1]):
        idx -= 1
    cl = model.layers[idx].closure
    return [cl.slot(s).value_and_derivative(np.asarray(v, dtype=float))[0] for s in (3, 4, 5)]


def _sample_at(result, x0: float, side: str = "right"):
    """``v, theta, u, mu`` time series at ``x0``."""
    if not 0.0 <= x0 <= 1.0 or math.isnan(x0):
        raise OutOfDomain(f"x0 = {x0} outside [0, 1]")
    sols = result.solutions
    if sols is not None:
        vals = []
        for sv, su in sols:
            a, da = sv.evaluate(np.array([x0]), side) if hasattr(sv, "mesh") else sv.evaluate(np.array([x0]))
            b, db = su.evaluate(np.array([x0]), side) if hasattr(su, "mesh") else su.evaluate(np.array([x0]))
            vals.append((a[0, 0], a[1, 0], b[0, 0], b[1, 0]))
        arr = np.array(vals)
        return arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3]
    x = result.x
    j = np.flatnonzero(np.isclose(x, x0, rtol=0, atol=1e-12))
    if j.size:
        j = j[0]
        return result.v[:, j], result.theta[:, j], result.u[:, j], result.mu[:, j]

    def interp(f):
        return np.array([np.interp(x0, x, row) for row in f])

    return interp(result.v), interp(result.theta), interp(result.u), interp(result.mu)


def boundary_fluxes(result, model: DimensionlessModel, x0: float = 0.0, side: str = "right") -> FluxSeries:
    """Dimensional fluxes at ``x0`` (dimensionless coordinate).

    ``q_s = -k_T dT/dx``, ``q_l = -k_TM dP_v/dx`` and ``g = -k_M dP_v/dx``,
    with slopes rescaled by the reference temperature, vapour pressure and
    length.  The latent part uses the model's ``gamma2`` (``q_l = -k_T0 T0
    gamma2 k*_TM theta / L``) so that ``q_s + q_l`` is exactly the heat flux
    of the dimensionless energy balance, even when the preset ``gamma2``
    and reference values disagree.
    """
    r = model.references
    v, theta, u, mu = _sample_at(result, x0, side)
    k_m, k_t, k_tm = _closure_values(model, v, x0, side)
    return FluxSeries(
        t_star=np.asarray(result.times)[: v.size],
        q_s=-r.k_T0 * k_t * r.T0 * mu / r.L,
        q_l=-r.k_T0 * r.T0 * model.gamma2 * k_tm * theta / r.L,
        g=-r.k_M0 * k_m * r.Pv0 * theta / r.L,
        x0=float(x0),
    )


# ---------------------------------------------------------------------------
# error norms


def l2_error_profile(num, ref) -> np.ndarray:
    """``eps2(x) = sqrt(1/N_t sum_t (num - ref)^2)`` for arrays of shape ``(N_t, N_x)``."""
    num = np.asarray(num, dtype=float)
    ref = np.asarray(ref, dtype=float)
    if num.shape != ref.shape or num.ndim != 2:
        raise GridMismatch(f"series shapes differ or are not (time, space): {num.shape} vs {ref.shape}")
    if num.shape[0] == 0:
        raise GridMismatch("no time samples")
    return np.sqrt(np.sum((num - ref) ** 2, axis=0) / num.shape[0])


def inf_error(profile) -> float:
    return float(np.max(profile))


@dataclass
class ErrorReport:
    """Error profiles of a candidate against a reference on a shared grid."""

    x: np.ndarray
    eps2_u: np.ndarray
    eps2_v: np.ndarray
    n_t: int
    relative_error: dict = field(default_factory=dict)

    @property
    def eps_inf_u(self) -> float:
        return inf_error(self.eps2_u)

    @property
    def eps_inf_v(self) -> float:
        return inf_error(self.eps2_v)


def error_report(x, num_u, ref_u, num_v, ref_v) -> ErrorReport:
    e_u = l2_error_profile(num_u, ref_u)
    e_v = l2_error_profile(num_v, ref_v)
    x = np.asarray(x, dtype=float)
    if x.shape != e_u.shape:
        raise GridMismatch("grid length differs from the series width")
    return ErrorReport(x=x, eps2_u=e_u, eps2_v=e_v, n_t=np.shape(num_u)[0])


def _on_grid(result, x: np.ndarray, times: np.ndarray):
    """Fields of ``result`` at ``times`` (must be stored) and ``x`` (linear in space)."""
    rt = np.asarray(result.times)
    idx = np.searchsorted(rt, times - 1e-9)
    if np.any(idx >= rt.size) or not np.allclose(rt[np.minimum(idx, rt.size - 1)], times, atol=1e-9, rtol=0):
        raise GridMismatch("reference lacks some of the candidate's output times")
    if result.x.shape == x.shape and np.allclose(result.x, x, atol=1e-14, rtol=0):
        return result.u[idx], result.v[idx]
    u = np.array([np.interp(x, result.x, result.u[i]) for i in idx])
    v = np.array([np.interp(x, result.x, result.v[i]) for i in idx])
    return u, v


def compare_results(candidate, reference, x: np.ndarray | None = None, tau_star: float | None = None) -> ErrorReport:
    """Error profiles of ``candidate`` against ``reference``.

    Both are sampled on ``x`` (default: the candidate's grid) at the
    candidate's output times, up to ``tau_star`` when given.  A reference on
    a different spatial grid is interpolated linearly.
    """
    x = np.asarray(candidate.x if x is None else x, dtype=float)
    times = np.asarray(candidate.times)
    keep = times <= (np.inf if tau_star is None else tau_star + 1e-9)
    times = times[keep]
    cu, cv = _on_grid(candidate, x, times)
    ru, rv = _on_grid(reference, x, times)
    return error_report(x, cu, ru, cv, rv)


# ---------------------------------------------------------------------------
# sensor comparison


def relative_error_series(num: dict, meas: dict) -> dict:
    """``eps(t) = sqrt((Y_num - Y_meas)^2) / Y_meas`` per sensor.

    ``num`` and ``meas`` map a sensor key to equally long series.
    """
    out = {}
    for key, m in meas.items():
        m = np.asarray(m, dtype=float)
        y = np.asarray(num[key], dtype=float)
        if y.shape != m.shape:
            raise GridMismatch(f"sensor {key!r}: series lengths differ")
        if np.any(m == 0):
            raise ZeroMeasurement(f"sensor {key!r} has a zero measurement")
        out[key] = np.sqrt((y - m) ** 2) / m
    return out


def total_uncertainty(sigma_meas, sigma_pos):
    """``sqrt(sigma_meas^2 + sigma_pos^2)``."""
    a = np.asarray(sigma_meas, dtype=float)
    b = np.asarray(sigma_pos, dtype=float)
    if np.any(a < 0) or np.any(b < 0):
        raise ValueError("uncertainties must be nonnegative")
    out = np.sqrt(a**2 + b**2)
    return float(out) if out.ndim == 0 else out


def _sensor_fields(result, model: DimensionlessModel, x_star: float):
    """Temperature (C), relative humidity and their x-gradients per metre."""
    r = model.references
    v, theta, u, mu = _sample_at(result, x_star)
    T = u * r.T0
    ps = saturation_pressure(T)
    phi = v * r.Pv0 / ps
    dT = mu * r.T0 / r.L
    dphi = (theta * r.Pv0 / r.L - phi * saturation_pressure_derivative(T) * dT) / ps
    return T - 273.15, phi, dT, dphi


def positional_uncertainty(gradient, sigma_position_m):
    """Field-unit equivalent of a sensor position uncertainty: ``|dY/dx| sigma_x``."""
    return np.abs(np.asarray(gradient, dtype=float)) * float(sigma_position_m)


def sensor_comparison(result, case, sensors, sigma_t: float, sigma_rh: float,
                      sigma_position_cm: dict) -> dict:
    """Simulated versus measured temperature and humidity at the interior sensors.

    Measurements are interpolated in time onto the result's output times.
    Returns per-sensor dicts with ``T_num``, ``T_meas``, ``RH_num``,
    ``RH_meas``, relative errors ``eps_T``, ``eps_RH`` and total
    uncertainties ``sigma_T``, ``sigma_RH``.  Temperatures are in degrees
    Celsius, humidity as a fraction.
    """
    model = case.model
    r = model.references
    hours = np.asarray(result.times) * r.t0 / 3600.0
    length_cm = r.L * 100.0
    out = {}
    for pos in sensors.interior_positions_cm:
        T_num, phi_num, dT, dphi = _sensor_fields(result, model, pos / length_cm)
        T_meas = np.interp(hours, sensors.t_hours, sensors.temperature[pos])
        rh_meas = np.interp(hours, sensors.t_hours, sensors.humidity[pos])
        eps = relative_error_series({"T": T_num, "RH": phi_num}, {"T": T_meas, "RH": rh_meas})
        sx = sigma_position_cm.get(pos, 0.0) / 100.0
        out[pos] = {
            "t_hours": hours,
            "T_num": T_num, "T_meas": T_meas, "RH_num": phi_num, "RH_meas": rh_meas,
            "eps_T": eps["T"], "eps_RH": eps["RH"],
            "sigma_T": total_uncertainty(sigma_t, positional_uncertainty(dT, sx)),
            "sigma_RH": total_uncertainty(sigma_rh, positional_uncertainty(dphi, sx)),
        }
    return out


# ---------------------------------------------------------------------------
# moisture budget

_GL_X, _GL_W = np.polynomial.legendre.leggauss(8)


def _storage_density(model: DimensionlessModel, v, layer: int, v_ref: float):
    """``W(v) = int_{v_ref}^{v} c_M(s) ds`` by Gauss-Legendre quadrature."""
    c_m = model.layers[layer].closure.slot(0)
    v = np.asarray(v, dtype=float)
    half = 0.5 * (v - v_ref)
    mid = 0.5 * (v + v_ref)
    pts = mid[..., None] + half[..., None] * _GL_X
    vals = c_m.value_and_derivative(pts.ravel())[0].reshape(pts.shape)
    return half * (vals @ _GL_W)


def _layer_integral(model, result, n: int, layer, panels: int, v_ref: float):
    a, b = layer.start, layer.stop
    edges = np.linspace(a, b, panels + 1)
    xq = (0.5 * (edges[:-1] + edges[1:])[:, None] + 0.5 * np.diff(edges)[:, None] * _GL_X).ravel()
    wq = (0.5 * np.diff(edges)[:, None] * _GL_W).ravel()
    if result.solutions is not None:
        v = result.solutions[n][0].evaluate(xq)[0][0]
    else:
        v = np.interp(xq, result.x, result.v[n])
    li = model.layers.index(layer)
    return float(np.sum(wq * _storage_density(model, v, li, v_ref)))


@dataclass
class MassBudget:
    """Moisture storage change against boundary inflow between snapshots.

    All quantities are dimensionless (storage ``int W(v) dx``, time ``t*``).
    ``residual[n]`` is ``|dS - inflow| / dt`` over the ``n``-th interval.
    """

    times: np.ndarray
    storage: np.ndarray
    inflow: np.ndarray
    residual: np.ndarray

    @property
    def storage_change(self) -> np.ndarray:
        return np.diff(self.storage)

    @property
    def aggregate_closure(self) -> float:
        """``sum |dS - inflow| / sum |inflow|`` over the run."""
        denom = float(np.sum(np.abs(self.inflow)))
        num = float(np.sum(np.abs(self.storage_change - self.inflow)))
        return num / denom if denom > 0 else num


def mass_budget(result, model: DimensionlessModel, panels: int = 64) -> MassBudget:
    """Integral moisture balance of a run.

    The stored moisture is ``int W(v) dx`` with ``W' = c_M`` so that the
    balance is exact for nonlinear storage; the inflow ``Fo_M [k_M theta]``
    evaluated at both surfaces is integrated in time by the trapezoidal
    rule.  Fields come from the stored solutions when available, otherwise
    from the output grid.
    """
    times = np.asarray(result.times)
    nt = times.size
    v_ref = float(result.v[0].mean()) if nt else 0.0
    storage = np.array([sum(_layer_integral(model, result, n, layer, panels, v_ref) for layer in model.layers)
                        for n in range(nt)])
    left = _sample_at(result, 0.0)
    right = _sample_at(result, 1.0)
    k_left = _closure_values(model, left[0], 0.0, "right")[0]
    k_right = _closure_values(model, right[0], 1.0, "left")[0]
    rate = model.Fo_M * (k_right * right[1] - k_left * left[1])
    dt = np.diff(times)
    inflow = 0.5 * dt * (rate[1:] + rate[:-1])
    resid = np.abs(np.diff(storage) - inflow) / np.where(dt > 0, dt, 1.0)
    return MassBudget(times=times, storage=storage, inflow=inflow, residual=resid)


# ---------------------------------------------------------------------------
# interface traces


@dataclass
class InterfaceReport:
    """Traces on both sides of an interface.

    Field and slope jumps measure the solver's continuity conditions; the
    flux jumps are reported, not enforced.
    """

    x_star: float
    times: np.ndarray
    field_jump: dict
    total_heat_jump: np.ndarray
    moisture_flow_jump: np.ndarray


def interface_report(result, model: DimensionlessModel, which: int = 0) -> InterfaceReport:
    """Continuity of ``v, theta, u, mu`` and flux jumps at interface ``which``."""
    if result.solutions is None:
        raise ValueError("interface traces need the stored solutions (keep_solutions=True)")
    xi = float(model.interfaces[which])
    lt = _sample_at(result, xi, "left")
    rt = _sample_at(result, xi, "right")
    names = ("v", "theta", "u", "mu")
    jump = {n: np.abs(a - b) for n, a, b in zip(names, lt, rt)}
    fl = boundary_fluxes(result, model, xi, "left")
    fr = boundary_fluxes(result, model, xi, "right")
    return InterfaceReport(
        x_star=xi, times=np.asarray(result.times), field_jump=jump,
        total_heat_jump=np.abs(fl.total_heat - fr.total_heat), moisture_flow_jump=np.abs(fl.g - fr.g),
    )


# ---------------------------------------------------------------------------
# tables


@dataclass(frozen=True)
class Table:
    columns: tuple[str, ...]
    rows: list

    def __post_init__(self):
        object.__setattr__(self, "columns", tuple(self.columns))
        width = len(self.columns)
        for r in self.rows:
            if len(r) != width:
                raise ValueError(f"row width {len(r)} differs from header width {width}")


def _fmt(x) -> str:
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return str(x)


def export_csv(table: Table, path: str | Path) -> Path:
    """Write a header row then one row per record (RFC 4180 quoting, CRLF line ends).

    Floats are written with ``repr`` so they read back exactly.
    """
    path = Path(path)
    try:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, quoting=csv.QUOTE_MINIMAL, lineterminator="\r\n")
            w.writerow(table.columns)
            for r in table.rows:
                w.writerow([_fmt(e) for e in r])
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc
    return path


def read_csv(path: str | Path) -> Table:
    """Read a file written by :func:`export_csv`; numeric cells become floats."""
    path = Path(path)
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    if not rows:
        raise ValueError(f"{path} is empty")

    def conv(s):
        try:
            return float(s)
        except ValueError:
            return s

    return Table(tuple(rows[0]), [[conv(c) for c in r] for r in rows[1:]])


def fields_table(result) -> Table:
    nt = len(result.times)
    rows = []
    for n in range(nt):
        t = float(result.times[n])
        for j, x in enumerate(result.x):
            rows.append((t, float(x), result.v[n, j], result.u[n, j], result.theta[n, j], result.mu[n, j]))
    return Table(("t_star", "x_star", "v", "u", "theta", "mu"), rows)


def flux_table(flux: FluxSeries) -> Table:
    return Table(("t_star", "q_s", "q_l", "g"),
                 [(float(t), a, b, c) for t, a, b, c in zip(flux.t_star, flux.q_s, flux.q_l, flux.g)])


def error_table(report: ErrorReport) -> Table:
    return Table(("x_star", "eps2_u", "eps2_v"),
                 [(float(x), a, b) for x, a, b in zip(report.x, report.eps2_u, report.eps2_v)])


def rows_table(columns: Sequence[str], records: Iterable[dict]) -> Table:
    """Table from dict records, in the given column order."""
    return Table(tuple(columns), [[rec.get(c, "") for c in columns] for rec in records])
