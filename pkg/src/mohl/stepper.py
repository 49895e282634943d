"""Time stepping by the method of horizontal lines.

Each time layer replaces the time derivative by a backward difference and
solves two boundary value problems in space: moisture first, then heat with
the fresh moisture field frozen in its coefficients.  No sub-iteration
between the two is performed.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .bvp import BVPError, CollocationSolution, SolverOptions, solve_bvp
from .physics import (
    BoundaryDriver,
    DimensionlessModel,
    build_boundary_residuals,
    build_heat_system,
    build_moisture_system,
)

__all__ = [
    "InsufficientHistory",
    "StepFailure",
    "TimeGrid",
    "PolynomialField",
    "FunctionField",
    "SimulationState",
    "BdfDerivative",
    "bdf_time_derivative",
    "initial_state",
    "advance_step",
    "SimulationResult",
    "run_simulation",
    "BDF_COEFFICIENTS",
]

# u_t ~ (sum_i alpha_i u^{n-i}) / dt
BDF_COEFFICIENTS = {1: (1.0, -1.0), 2: (1.5, -2.0, 0.5)}


class InsufficientHistory(ValueError):
    pass


class StepFailure(RuntimeError):
    """A boundary value solve failed; records the time layer and the field."""

    def __init__(self, step: int, t_star: float, field_name: str, cause: Exception):
        super().__init__(f"{field_name} solve failed at time layer {step} (t* = {t_star:.6g}): {cause}")
        self.step = step
        self.t_star = t_star
        self.field_name = field_name
        self.cause = cause


@dataclass(frozen=True)
class TimeGrid:
    dt_star: float
    tau_star: float

    def __post_init__(self):
        if not self.dt_star > 0:
            raise ValueError("dt_star must be positive")
        if self.tau_star < 0:
            raise ValueError("tau_star must be nonnegative")

    @property
    def steps(self) -> int:
        return int(round(self.tau_star / self.dt_star))

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.steps + 1) * self.dt_star


@dataclass(frozen=True)
class PolynomialField:
    """Scalar polynomial profile (descending coefficients) in solution form.

    ``evaluate`` mirrors :meth:`CollocationSolution.evaluate` for a
    two-component field ``(p, p')``.
    """

    coefficients: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "coefficients", tuple(float(c) for c in self.coefficients))

    @classmethod
    def uniform(cls, value: float) -> "PolynomialField":
        return cls((value,))

    def evaluate(self, x, side: str = "right"):
        c = np.array(self.coefficients)
        d1 = np.polyder(c) if c.size > 1 else np.zeros(1)
        d2 = np.polyder(d1) if d1.size > 1 else np.zeros(1)
        x = np.asarray(x, dtype=float)
        val = np.stack([np.polyval(c, x), np.polyval(d1, x)])
        der = np.stack([np.polyval(d1, x), np.polyval(d2, x)])
        return val, der

    def __call__(self, x):
        return self.evaluate(x)[0]


class FunctionField:
    """Scalar profile given by callables for the value and its first two derivatives."""

    def __init__(self, value, slope, curvature):
        self.value = value
        self.slope = slope
        self.curvature = curvature

    def evaluate(self, x, side: str = "right"):
        x = np.asarray(x, dtype=float)
        p, dp, ddp = (np.broadcast_to(f(x), x.shape).astype(float) for f in (self.value, self.slope, self.curvature))
        return np.stack([p, dp]), np.stack([dp, ddp])

    def __call__(self, x):
        return self.evaluate(x)[0]


def bdf_time_derivative(history: Sequence[np.ndarray], current, dt_star: float, order: int):
    """Backward-difference time derivative.

    ``history[0]`` is the field one step back, ``history[1]`` two steps back.
    """
    if order not in BDF_COEFFICIENTS:
        raise ValueError("order must be 1 or 2")
    if len(history) < order:
        raise InsufficientHistory(f"order {order} needs {order} previous layers, got {len(history)}")
    coef = BDF_COEFFICIENTS[order]
    out = coef[0] * np.asarray(current, dtype=float)
    for a, h in zip(coef[1:], history):
        out = out + a * np.asarray(h, dtype=float)
    return out / dt_star


class BdfDerivative:
    """Callable ``(x, value) -> time derivative`` built from previous layers.

    The history part is evaluated from the previous layers' solutions at the
    query points and cached per query array.
    """

    def __init__(self, history, dt_star: float, order: int):
        if len(history) < order:
            raise InsufficientHistory(f"order {order} needs {order} previous layers, got {len(history)}")
        self.order = order
        self.dt = dt_star
        self.coef = BDF_COEFFICIENTS[order]
        self.history = tuple(history[:order])
        self.value_coefficient = self.coef[0] / dt_star
        self._cache: dict[bytes, np.ndarray] = {}

    def history_term(self, x):
        key = x.tobytes()
        hit = self._cache.get(key)
        if hit is None:
            hit = np.zeros(x.shape)
            for a, sol in zip(self.coef[1:], self.history):
                hit = hit + a * sol.evaluate(x)[0][0]
            hit = hit / self.dt
            if len(self._cache) > 16:
                self._cache.clear()
            self._cache[key] = hit
        return hit

    def __call__(self, x, value):
        return self.value_coefficient * value + self.history_term(x)


@dataclass
class SimulationState:
    """Fields at ``t_star`` plus the previous layer for the second-order formula.

    ``history_v[0]`` is ``v_solution``; ``history_v[1]``, when present, is the
    layer before.  Initial fields may be :class:`PolynomialField` objects.
    """

    t_star: float
    step: int
    v_solution: object
    u_solution: object
    history_v: tuple = ()
    history_u: tuple = ()
    newton_iterations: tuple[int, int] = (0, 0)


def initial_state(v0, u0) -> SimulationState:
    return SimulationState(0.0, 0, v0, u0, (v0,), (u0,))


def _guess(sol, nodes: int, pinned: np.ndarray):
    if isinstance(sol, CollocationSolution):
        return sol
    x = np.union1d(np.linspace(0.0, 1.0, nodes), pinned)
    return (x, sol.evaluate(x)[0])


@dataclass(frozen=True)
class LayerOptions:
    moisture: SolverOptions
    heat: SolverOptions
    initial_nodes: int = 10


def advance_step(state: SimulationState, model: DimensionlessModel, drivers: Sequence[BoundaryDriver],
                 options: LayerOptions, dt_star: float, max_order: int = 2) -> SimulationState:
    """Advance one time layer: solve for ``v``, then for ``u`` with ``v`` frozen."""
    t_new = state.t_star + dt_star
    step = state.step + 1
    order = min(max_order, len(state.history_v))
    pinned = model.interfaces
    v_t = BdfDerivative(state.history_v, dt_star, order)
    moisture = build_moisture_system(model, v_t)
    bc_v, _ = build_boundary_residuals(model, drivers, t_new)
    try:
        v_sol = solve_bvp(moisture, bc_v, _guess(state.v_solution, options.initial_nodes, pinned),
                          options.moisture, pinned=tuple(pinned))
    except BVPError as exc:
        raise StepFailure(step, t_new, "moisture", exc) from exc
    u_t = BdfDerivative(state.history_u, dt_star, order)
    heat = build_heat_system(model, u_t, moisture, v_sol)
    _, bc_u = build_boundary_residuals(model, drivers, t_new, frozen_v=v_sol)
    try:
        u_sol = solve_bvp(heat, bc_u, _guess(state.u_solution, options.initial_nodes, pinned),
                          options.heat, pinned=tuple(pinned))
    except BVPError as exc:
        raise StepFailure(step, t_new, "heat", exc) from exc
    return SimulationState(
        t_star=t_new,
        step=step,
        v_solution=v_sol,
        u_solution=u_sol,
        history_v=(v_sol,) + state.history_v[:1],
        history_u=(u_sol,) + state.history_u[:1],
        newton_iterations=(v_sol.stats.newton_iterations, u_sol.stats.newton_iterations),
    )


@dataclass
class SimulationResult:
    """Snapshots on a fixed output grid.

    Arrays ``v``, ``u``, ``theta``, ``mu`` have shape ``(len(times), len(x))``.
    ``mesh_v``/``mesh_u`` and ``iterations_v``/``iterations_u`` hold one entry
    per solved time layer.  ``error`` is set when the run stopped early; the
    arrays then cover the layers completed before the failure.
    """

    times: np.ndarray
    x: np.ndarray
    v: np.ndarray
    u: np.ndarray
    theta: np.ndarray
    mu: np.ndarray
    mesh_v: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    mesh_u: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    iterations_v: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    iterations_u: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    wall_seconds: float = 0.0
    method: str = "mohl"
    error: Exception | None = None
    solutions: list | None = None
    meta: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.error is None


def _sample(sol, x):
    val, _ = sol.evaluate(x)
    return val


def run_simulation(case, output_points: int = 201, keep_solutions: bool = False,
                   options: LayerOptions | None = None, max_order: int = 2) -> SimulationResult:
    """Run the method of horizontal lines for a case.

    ``case`` needs ``model``, ``drivers``, ``v0``, ``u0``, ``time_grid`` and
    ``layer_options()`` (see :class:`mohl.cases.CaseConfig`).  Solver
    failures stop the run; the completed layers are returned with
    ``error`` set.
    """
    options = options or case.layer_options()
    grid = case.time_grid
    x = np.linspace(0.0, 1.0, output_points)
    nt = grid.steps + 1
    v = np.empty((nt, x.size))
    u = np.empty_like(v)
    th = np.empty_like(v)
    mu = np.empty_like(v)
    state = initial_state(case.v0, case.u0)
    v[0], th[0] = _sample(case.v0, x)
    u[0], mu[0] = _sample(case.u0, x)
    mesh_v, mesh_u, it_v, it_u = [], [], [], []
    sols = [(case.v0, case.u0)] if keep_solutions else None
    error = None
    done = 1
    t0 = time.perf_counter()
    for n in range(1, nt):
        try:
            state = advance_step(state, case.model, case.drivers, options, grid.dt_star, max_order)
        except (StepFailure, ValueError, FloatingPointError) as exc:
            error = exc
            break
        v[n], th[n] = _sample(state.v_solution, x)
        u[n], mu[n] = _sample(state.u_solution, x)
        mesh_v.append(state.v_solution.mesh.size)
        mesh_u.append(state.u_solution.mesh.size)
        it_v.append(state.newton_iterations[0])
        it_u.append(state.newton_iterations[1])
        if keep_solutions:
            sols.append((state.v_solution, state.u_solution))
        done = n + 1
    wall = time.perf_counter() - t0
    return SimulationResult(
        times=grid.times[:done], x=x, v=v[:done], u=u[:done], theta=th[:done], mu=mu[:done],
        mesh_v=np.array(mesh_v, dtype=int), mesh_u=np.array(mesh_u, dtype=int),
        iterations_v=np.array(it_v, dtype=int), iterations_u=np.array(it_u, dtype=int),
        wall_seconds=wall, method="mohl", error=error, solutions=sols,
        meta={"moisture_tol": options.moisture.rel_tol, "heat_tol": options.heat.rel_tol,
              "dt_star": grid.dt_star, "initial_nodes": options.initial_nodes},
    )
