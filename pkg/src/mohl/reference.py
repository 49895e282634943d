"""Finite-difference reference solvers on a uniform grid (method of lines).

Both schemes use conservative central differences with transfer
coefficients at half nodes, second-order one-sided differences in the Robin
boundary rows, and a grid node on every material interface.  The interface
row imposes continuity of the first derivative from both sides, the same
condition the collocation solver satisfies.

``euler_implicit_run`` is first order in time with Picard iterations on
the coefficients; ``euler_explicit_run`` is the forward Euler scheme with a
stability guard.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
import scipy.linalg

from . import _kernels
from .physics import DimensionlessModel
from .stepper import SimulationResult

__all__ = [
    "PicardNonConvergence",
    "CflViolation",
    "GridConfig",
    "cfl_bound",
    "admissible_dt",
    "euler_implicit_run",
    "euler_explicit_run",
]


class PicardNonConvergence(RuntimeError):
    def __init__(self, step: int, t_star: float, gap: float):
        super().__init__(f"Picard iteration stalled at time layer {step} (t* = {t_star:.6g}), "
                         f"iterate gap {gap:.3e}")
        self.step = step
        self.t_star = t_star
        self.gap = gap


class CflViolation(ValueError):
    def __init__(self, dt_star: float, bound: float):
        super().__init__(f"explicit step dt* = {dt_star:.3e} exceeds the stability bound {bound:.3e}")
        self.dt_star = dt_star
        self.bound = bound


def _interface_multiple(model: DimensionlessModel) -> int:
    m = 1
    for x in model.interfaces:
        d = Fraction(float(x)).limit_denominator(10_000).denominator
        m = m * d // math.gcd(m, d)
    return m


@dataclass(frozen=True)
class GridConfig:
    """Uniform grid with ``intervals`` cells; ``dx_star = 1 / intervals``."""

    intervals: int
    dt_star: float

    def __post_init__(self):
        if self.intervals < 4 or not self.dt_star > 0:
            raise ValueError("need at least 4 intervals and a positive time step")

    @classmethod
    def from_spacing(cls, dx_star: float, dt_star: float, model: DimensionlessModel | None = None):
        """Grid closest to ``dx_star`` whose nodes include every interface."""
        n = max(4, int(round(1.0 / dx_star)))
        if model is not None and len(model.interfaces):
            m = _interface_multiple(model)
            n = max(m, m * int(round(n / m)))
        return cls(n, dt_star)

    @property
    def dx_star(self) -> float:
        return 1.0 / self.intervals

    @property
    def n_x(self) -> int:
        return self.intervals + 1

    @property
    def x(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.n_x)


def _grid_layout(model: DimensionlessModel, grid: GridConfig):
    x = grid.x
    n = grid.intervals
    iface = []
    for xi in model.interfaces:
        j = int(round(xi * n))
        if abs(j / n - xi) > 1e-9:
            raise ValueError(f"interface {xi} is not a grid node")
        iface.append(j)
    xh = 0.5 * (x[:-1] + x[1:])
    return x, np.array(iface, dtype=np.int64), model.layer_index(x), model.layer_index(xh), xh


def cfl_bound(model: DimensionlessModel, dx_star: float, v_range: tuple[float, float],
              samples: int = 400) -> float:
    """``dx^2 min(c / (2 Fo k))`` over both equations, all layers and the v range."""
    v = np.linspace(v_range[0], v_range[1], samples)
    best = np.inf
    for layer in model.layers:
        cl = layer.closure
        c_m = cl.c_M.value_and_derivative(v)[0]
        k_m = cl.k_M.value_and_derivative(v)[0]
        c_t = cl.c_T.value_and_derivative(v)[0]
        k_t = cl.k_T.value_and_derivative(v)[0]
        best = min(best, float(np.min(c_m / (2.0 * model.Fo_M * k_m))),
                   float(np.min(c_t / (2.0 * model.Fo_T * k_t))))
    return dx_star**2 * best


def admissible_dt(case, grid_intervals: int, output_dt: float, safety: float = 0.9) -> float:
    """Largest explicit step below ``safety`` times the bound that divides ``output_dt``."""
    rng = case.operating_range
    if rng is None:
        v0 = case.v0(np.linspace(0.0, 1.0, grid_intervals + 1))
        rng = (float(np.min(v0)), float(np.max(v0)))
    bound = cfl_bound(case.model, 1.0 / grid_intervals, rng)
    return output_dt / math.ceil(output_dt / (safety * bound))


def _drivers_at(drivers, t):
    return [(float(d.u_inf(t)), float(d.v_inf(t)), float(d.g_inf(t)), float(d.q_inf(t))) for d in drivers]


def _output_stride(dt_star: float, output_dt: float | None) -> int:
    if output_dt is None:
        return 1
    k = int(round(output_dt / dt_star))
    if k < 1 or abs(k * dt_star - output_dt) > 1e-9 * max(output_dt, 1.0):
        raise ValueError("output interval must be a multiple of the time step")
    return k


def _gradients(f: np.ndarray, dx: float) -> np.ndarray:
    return np.gradient(f, dx, axis=-1, edge_order=2)


class _ImplicitAssembler:
    """Pentadiagonal systems of one Picard iteration (banded storage, l = u = 2)."""

    def __init__(self, model: DimensionlessModel, grid: GridConfig, drivers):
        self.model = model
        self.dx = grid.dx_star
        self.dt = grid.dt_star
        x, self.iface, self.lay_node, self.lay_half, xh = _grid_layout(model, grid)
        self.x, self.xh = x, xh
        self.n = x.size
        interior = np.ones(self.n, dtype=bool)
        interior[[0, -1]] = False
        interior[self.iface] = False
        self.jj = np.flatnonzero(interior)
        self.drivers = drivers
        nl = len(model.layers)
        self.node_masks = [self.lay_node == i for i in range(nl)]
        self.half_masks = [self.lay_half == i for i in range(nl)]
        if nl == 1:
            self.node_masks = [slice(None)]
            self.half_masks = [slice(None)]
        self._cached = None
        for d in drivers:
            if d.radiation is not None:
                raise NotImplementedError("radiative boundary terms are not supported by the reference solvers")

    def _coeffs(self, v):
        # the heat solve of one sweep and the moisture solve of the next share v
        if self._cached is not None and self._cached[0] is v:
            return self._cached[1]
        vh = 0.5 * (v[:-1] + v[1:])
        vals = [np.empty(self.n) for _ in range(6)]
        hv = [None, None, None] + [np.empty(self.n - 1) for _ in range(3)]
        for li, layer in enumerate(self.model.layers):
            mn, mh = self.node_masks[li], self.half_masks[li]
            for s in range(6):
                vals[s][mn] = layer.closure.slot(s).value_and_derivative(v[mn])[0]
            for s in (3, 4, 5):
                hv[s][mh] = layer.closure.slot(s).value_and_derivative(vh[mh])[0]
        self._cached = (v, (vals, hv))
        return vals, hv

    def _interior(self, ab, rhs, cap, kh, fo, old):
        jj = self.jj
        r = self.dt * fo / self.dx**2
        lo = r * kh[jj - 1]
        hi = r * kh[jj]
        ab[2, jj] = cap[jj] + lo + hi
        ab[3, jj - 1] = -lo
        ab[1, jj + 1] = -hi
        rhs[jj] = cap[jj] * old[jj]

    def _interface_rows(self, ab, rhs):
        # 3f_j - 4f_{j-1} + f_{j-2} + 3f_j - 4f_{j+1} + f_{j+2} = 0
        for j in self.iface:
            ab[2, j] = 6.0
            ab[3, j - 1] = -4.0
            ab[4, j - 2] = 1.0
            ab[1, j + 1] = -4.0
            ab[0, j + 2] = 1.0
            rhs[j] = 0.0

    def moisture_system(self, v_it, v_old, t_new, drv):
        n, dx = self.n, self.dx
        vals, hv = self._coeffs(v_it)
        ab = np.zeros((5, n))
        rhs = np.zeros(n)
        self._interior(ab, rhs, vals[0], hv[3], self.model.Fo_M, v_old)
        self._interface_rows(ab, rhs)
        for side, (b, i1, i2, sgn) in enumerate(((0, 1, 2, 1.0), (n - 1, n - 2, n - 3, -1.0))):
            uinf, vinf, ginf, _ = drv[side]
            if self.drivers[side].mode == "dirichlet":
                ab[2, b] = 1.0
                rhs[b] = vinf
                continue
            k0 = vals[3][b]
            bi = self.model.Bi_M[side]
            # k (sgn)(-3 v_b + 4 v_1 - v_2)/(2dx) * sgn ... written for the actual derivative
            # left: k v_x - Bi (v - vinf) + g = 0 ; right: k v_x + Bi (v - vinf) - g = 0
            c = k0 / (2.0 * dx)
            # derivative coefficients of v_b, v_1, v_2
            d0, d1, d2 = (-3.0 * c, 4.0 * c, -c) if side == 0 else (3.0 * c, -4.0 * c, c)
            ab[2, b] = d0 - sgn * bi
            _set_band(ab, b, i1, d1)
            _set_band(ab, b, i2, d2)
            rhs[b] = -sgn * (bi * vinf + ginf)
        return ab, rhs

    def heat_system(self, v_new, v_old, u_old, t_new, drv):
        n, dx = self.n, self.dx
        m = self.model
        vals, hv = self._coeffs(v_new)
        ab = np.zeros((5, n))
        rhs = np.zeros(n)
        self._interior(ab, rhs, vals[1], hv[4], m.Fo_T, u_old)
        jj = self.jj
        r = self.dt * m.Fo_T * m.gamma2 / dx**2
        fx = hv[5] * np.diff(v_new)
        rhs[jj] += r * (fx[jj] - fx[jj - 1]) - m.gamma1 * vals[2][jj] * (v_new[jj] - v_old[jj])
        self._interface_rows(ab, rhs)
        hf = m.heat_factor
        for side, (b, i1, i2, sgn) in enumerate(((0, 1, 2, 1.0), (n - 1, n - 2, n - 3, -1.0))):
            uinf, vinf, _, qinf = drv[side]
            if self.drivers[side].mode == "dirichlet":
                ab[2, b] = 1.0
                rhs[b] = uinf
                continue
            kt, ktm = vals[4][b], vals[5][b]
            if side == 0:
                w = (-3.0, 4.0, -1.0)
            else:
                w = (3.0, -4.0, 1.0)
            vx = (w[0] * v_new[b] + w[1] * v_new[i1] + w[2] * v_new[i2]) / (2.0 * dx)
            c = hf * kt / (2.0 * dx)
            bi_t, bi_tm = m.Bi_T[side], m.Bi_TM[side]
            ab[2, b] = w[0] * c - sgn * bi_t
            _set_band(ab, b, i1, w[1] * c)
            _set_band(ab, b, i2, w[2] * c)
            rhs[b] = -hf * m.gamma2 * ktm * vx - sgn * (bi_t * uinf - bi_tm * m.gamma2 * (v_new[b] - vinf) + qinf)
        return ab, rhs


def _set_band(ab, row, col, val):
    ab[2 + row - col, col] = val


def _solve(ab, rhs):
    return scipy.linalg.solve_banded((2, 2), ab, rhs, check_finite=False)


def _result(method, times, x, v, u, wall, error, meta):
    v = np.asarray(v)
    u = np.asarray(u)
    dx = x[1] - x[0]
    return SimulationResult(
        times=np.asarray(times), x=x, v=v, u=u,
        theta=_gradients(v, dx) if v.size else v.copy(), mu=_gradients(u, dx) if u.size else u.copy(),
        wall_seconds=wall, method=method, error=error, meta=meta,
    )


def _initial(case, x):
    return case.v0(x)[0].astype(float), case.u0(x)[0].astype(float)


def euler_implicit_run(case, grid: GridConfig, picard_tol: float = 1e-8, picard_max: int = 50,
                       output_dt: float | None = None, tau_star: float | None = None) -> SimulationResult:
    """Implicit Euler with Picard iteration on the coefficients.

    Each iteration solves the moisture system with coefficients at the
    current iterate, then the heat system with coefficients at the new
    moisture field, until the max change of both fields is at most
    ``picard_tol``.  Results are stored every ``output_dt`` (default: every
    step).  A Picard failure ends the run; earlier layers are returned with
    ``error`` set.
    """
    model = case.model
    asm = _ImplicitAssembler(model, grid, case.drivers)
    tau = case.tau_star if tau_star is None else tau_star
    steps = int(round(tau / grid.dt_star))
    stride = _output_stride(grid.dt_star, output_dt)
    v, u = _initial(case, asm.x)
    times, vs, us = [0.0], [v.copy()], [u.copy()]
    iters = []
    error = None
    t_start = time.perf_counter()
    for n in range(1, steps + 1):
        t_new = n * grid.dt_star
        drv = _drivers_at(case.drivers, t_new)
        v_it, u_it = v.copy(), u.copy()
        gap = np.inf
        for k in range(picard_max):
            v_new = _solve(*asm.moisture_system(v_it, v, t_new, drv))
            u_new = _solve(*asm.heat_system(v_new, v, u, t_new, drv))
            gap = max(float(np.max(np.abs(v_new - v_it))), float(np.max(np.abs(u_new - u_it))))
            v_it, u_it = v_new, u_new
            if gap <= picard_tol:
                break
        if not (gap <= picard_tol):
            error = PicardNonConvergence(n, t_new, gap)
            break
        iters.append(k + 1)
        v, u = v_it, u_it
        if n % stride == 0:
            times.append(t_new)
            vs.append(v.copy())
            us.append(u.copy())
    wall = time.perf_counter() - t_start
    meta = {"dx_star": grid.dx_star, "dt_star": grid.dt_star, "picard_tol": picard_tol,
            "picard_max": picard_max, "mean_picard_iterations": float(np.mean(iters)) if iters else 0.0}
    res = _result("euler-implicit", times, asm.x, vs, us, wall, error, meta)
    res.iterations_v = np.array(iters, dtype=int)
    return res


def euler_explicit_run(case, grid: GridConfig, output_dt: float | None = None, tau_star: float | None = None,
                       check_cfl: bool = True, v_range: tuple[float, float] | None = None,
                       chunk: int = 20000) -> SimulationResult:
    """Forward Euler with coefficients from the previous step.

    Raises :class:`CflViolation` when ``dt_star`` exceeds :func:`cfl_bound`
    over ``v_range`` (default: the case's operating range).
    """
    model = case.model
    x, iface, lay_node, lay_half, _ = _grid_layout(model, grid)
    rng = v_range or case.operating_range
    if rng is None:
        v0 = case.v0(x)[0]
        rng = (float(v0.min()), float(v0.max()))
    bound = cfl_bound(model, grid.dx_star, rng)
    if check_cfl and grid.dt_star > bound:
        raise CflViolation(grid.dt_star, bound)
    for d in case.drivers:
        if d.radiation is not None:
            raise NotImplementedError("radiative boundary terms are not supported by the reference solvers")
    num, den, pw = model.packed_closures()
    modes = np.array([0 if d.mode == "robin" else 1 for d in case.drivers], dtype=np.int64)
    bis = np.array([[model.Bi_M[s], model.Bi_T[s], model.Bi_TM[s]] for s in range(2)])
    tau = case.tau_star if tau_star is None else tau_star
    steps = int(round(tau / grid.dt_star))
    stride = _output_stride(grid.dt_star, output_dt)
    v, u = _initial(case, x)
    v = np.ascontiguousarray(v)
    u = np.ascontiguousarray(u)
    times, vs, us = [0.0], [v.copy()], [u.copy()]
    error = None
    t_start = time.perf_counter()
    done = 0
    lay_node = lay_node.astype(np.int64)
    lay_half = lay_half.astype(np.int64)
    while done < steps:
        # march to the next output time in chunks
        target = min(steps, (done // stride + 1) * stride)
        while done < target:
            m = min(chunk, target - done)
            t = (done + 1 + np.arange(m)) * grid.dt_star
            drv = np.empty((2, 4, m))
            for s, d in enumerate(case.drivers):
                drv[s, 0] = d.u_inf(t)
                drv[s, 1] = d.v_inf(t)
                drv[s, 2] = d.g_inf(t)
                drv[s, 3] = d.q_inf(t)
            _kernels.explicit_march(v, u, m, grid.dt_star, grid.dx_star, num, den, pw, lay_node, lay_half,
                                    iface, model.Fo_M, model.Fo_T, model.gamma1, model.gamma2,
                                    model.heat_factor, modes, bis, drv)
            done += m
        if not (np.all(np.isfinite(v)) and np.all(np.isfinite(u))):
            error = FloatingPointError(f"explicit scheme diverged before t* = {done * grid.dt_star:.6g}")
            break
        times.append(done * grid.dt_star)
        vs.append(v.copy())
        us.append(u.copy())
    wall = time.perf_counter() - t_start
    meta = {"dx_star": grid.dx_star, "dt_star": grid.dt_star, "cfl_bound": bound, "backend": _kernels.backend()}
    return _result("euler-explicit", times, x, vs, us, wall, error, meta)
