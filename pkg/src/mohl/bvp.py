"""Adaptive fourth-order collocation solver for two-point boundary value problems.

Solves ``y'(x) = f(x, y)`` on ``[a, b]`` subject to ``psi(y(a), y(b)) = 0``.
Each mesh interval carries the cubic of the three-point Lobatto IIIA
collocation method (nodes, midpoint), condensed to a nonlinear system in the
nodal values.  The cubic interpolates value and slope at both ends, so the
piecewise solution is C1.  Mesh adaptation is driven by the integrated
defect ``S'(x) - f(x, S(x))`` of that continuous interpolant.

Callables follow the vectorised convention: ``rhs(x, y)`` receives ``x`` of
shape ``(m,)`` and ``y`` of shape ``(n, m)`` and returns ``(n, m)``.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np
import scipy.linalg
import scipy.sparse
import scipy.sparse.linalg

from . import _kernels

__all__ = [
    "BVPError",
    "NonConvergence",
    "MeshOverflow",
    "SingularJacobian",
    "OutOfDomain",
    "OdeSystem",
    "BoundarySpec",
    "Mesh",
    "SolverOptions",
    "CollocationSolution",
    "ResidualEstimate",
    "solve_bvp",
    "evaluate_solution",
    "estimate_residuals",
    "adapt_mesh",
]

_EPS = np.finfo(float).eps
_SQRT_EPS = np.sqrt(_EPS)

# 5-point Lobatto rule on [0, 1]
_LOB_S = 0.5 * (1.0 + np.array([-1.0, -np.sqrt(3.0 / 7.0), 0.0, np.sqrt(3.0 / 7.0), 1.0]))
_LOB_W = 0.5 * np.array([1.0 / 10.0, 49.0 / 90.0, 32.0 / 45.0, 49.0 / 90.0, 1.0 / 10.0])

_COARSEN_RATIO = 1e-2


class BVPError(RuntimeError):
    """Base class for solver failures."""


class NonConvergence(BVPError):
    pass


class MeshOverflow(BVPError):
    pass


class SingularJacobian(BVPError):
    pass


class OutOfDomain(ValueError):
    pass


@dataclass(frozen=True)
class OdeSystem:
    """First-order system ``y' = rhs(x, y)``.

    ``jac``, when given, returns ``d rhs / d y`` with shape ``(n, n, m)``.
    Without it the solver differences ``rhs`` centrally, one component at a
    time but vectorised over all points.
    """

    dimension: int
    rhs: Callable[[np.ndarray, np.ndarray], np.ndarray]
    jac: Callable[[np.ndarray, np.ndarray], np.ndarray] | None = None

    def __post_init__(self):
        if self.dimension < 1:
            raise ValueError("dimension must be positive")


@dataclass(frozen=True)
class BoundarySpec:
    """Boundary residual ``psi(y_left, y_right)`` of length ``dimension``."""

    residual: Callable[[np.ndarray, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class Mesh:
    nodes: np.ndarray
    pinned: tuple[float, ...] = ()

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float)
        if nodes.ndim != 1 or nodes.size < 2:
            raise ValueError("a mesh needs at least two nodes")
        if not np.all(np.diff(nodes) > 0):
            raise ValueError("mesh nodes must be strictly increasing")
        for p in self.pinned:
            if not np.any(nodes == p):
                raise ValueError(f"pinned coordinate {p} is not a mesh node")
        object.__setattr__(self, "nodes", nodes)

    @property
    def a(self) -> float:
        return float(self.nodes[0])

    @property
    def b(self) -> float:
        return float(self.nodes[-1])

    @property
    def size(self) -> int:
        return self.nodes.size

    @classmethod
    def uniform(cls, a: float, b: float, n: int, pinned: Sequence[float] = ()) -> "Mesh":
        nodes = np.union1d(np.linspace(a, b, n), np.asarray(pinned, dtype=float))
        return cls(nodes, tuple(float(p) for p in pinned))


@dataclass(frozen=True)
class SolverOptions:
    """Tolerances and limits for :func:`solve_bvp`.

    ``min_nodes=None`` means coarsening never goes below the node count of
    the guess handed to the solver.  With ``adapt=False`` the mesh is fixed
    and the converged collocation solution is returned even if its residual
    exceeds the tolerance (``stats.max_residual`` reports it).
    """

    rel_tol: float = 1e-3
    abs_tol: float = 1e-6
    max_nodes: int = 5000
    newton_max_iter: int = 12
    newton_damping: float = 1.0
    max_refinements: int = 60
    adapt: bool = True
    coarsen: bool = True
    min_nodes: int | None = None

    def __post_init__(self):
        if self.rel_tol <= 0 or self.abs_tol <= 0:
            raise ValueError("tolerances must be positive")
        if not 0 < self.newton_damping <= 1:
            raise ValueError("newton_damping must lie in (0, 1]")
        if self.max_nodes < 2 or self.newton_max_iter < 1:
            raise ValueError("max_nodes and newton_max_iter must be positive")


@dataclass
class SolveStats:
    newton_iterations: int = 0
    newton_solves: int = 0
    refinements: int = 0
    max_residual: float = np.nan
    bc_residual: float = np.nan


class CollocationSolution:
    """C1 piecewise-cubic solution on a mesh.

    The derivative is continuous at every node except interior pinned nodes
    where the right-hand side itself jumps; there each side carries its own
    one-sided slope while the values stay continuous.

    Per interval ``[x_i, x_{i+1}]`` with local ``s = (x - x_i)/h_i`` the
    polynomial is ``c0 + c1 s + c2 s^2 + c3 s^3`` (``coeffs[k, i, :]`` for
    component ``k``).
    """

    def __init__(self, mesh: Mesh, coeffs: np.ndarray, stats: SolveStats | None = None):
        coeffs = np.asarray(coeffs, dtype=float)
        if coeffs.ndim != 3 or coeffs.shape[1] != mesh.size - 1 or coeffs.shape[2] != 4:
            raise ValueError("coeffs must have shape (n, intervals, 4)")
        self.mesh = mesh
        self.coeffs = coeffs
        self.stats = stats if stats is not None else SolveStats()

    @classmethod
    def from_hermite(cls, x, y, yp, pinned: Sequence[float] = (), stats=None, yp_end=None):
        """Cubic Hermite interpolant of nodal values and slopes.

        ``yp_end`` (shape ``(n, N-1)``) overrides the slope at the right end
        of each interval; it differs from ``yp[:, 1:]`` only where the
        derivative jumps (interior pinned nodes with a one-sided ``f``).
        """
        mesh = x if isinstance(x, Mesh) else Mesh(np.asarray(x, dtype=float), tuple(pinned))
        y = np.atleast_2d(np.asarray(y, dtype=float))
        yp = np.atleast_2d(np.asarray(yp, dtype=float))
        h = np.diff(mesh.nodes)
        y0, y1 = y[:, :-1], y[:, 1:]
        end = yp[:, 1:] if yp_end is None else np.atleast_2d(np.asarray(yp_end, dtype=float))
        d0, d1 = yp[:, :-1] * h, end * h
        coeffs = np.stack(
            [y0, d0, 3.0 * (y1 - y0) - 2.0 * d0 - d1, 2.0 * (y0 - y1) + d0 + d1], axis=-1
        )
        return cls(mesh, coeffs, stats)

    @property
    def x(self) -> np.ndarray:
        return self.mesh.nodes

    @property
    def dimension(self) -> int:
        return self.coeffs.shape[0]

    @property
    def y(self) -> np.ndarray:
        """Nodal values, shape ``(n, N)``."""
        c = self.coeffs
        return np.concatenate([c[:, :, 0], c[:, -1:, :].sum(axis=2)], axis=1)

    @property
    def yp(self) -> np.ndarray:
        """Nodal slopes, shape ``(n, N)``."""
        c = self.coeffs
        h = np.diff(self.x)
        left = c[:, :, 1] / h
        last = (c[:, -1, 1] + 2.0 * c[:, -1, 2] + 3.0 * c[:, -1, 3]) / h[-1]
        return np.concatenate([left, last[:, None]], axis=1)

    def evaluate(self, x, side: str = "right") -> tuple[np.ndarray, np.ndarray]:
        """Value and first derivative at ``x``.

        At an interior node, ``side="right"`` uses the interval starting
        there and ``side="left"`` the interval ending there.
        """
        xa = np.asarray(x, dtype=float)
        scalar = xa.ndim == 0
        flat = np.ascontiguousarray(xa.ravel())
        nodes = self.x
        val, der, ok = _kernels.cubic_eval(nodes, self.coeffs, flat, side == "right")
        if not ok:
            raise OutOfDomain(f"evaluation point outside [{nodes[0]}, {nodes[-1]}]")
        if scalar:
            return val[:, 0], der[:, 0]
        if xa.ndim > 1:
            return val.reshape((-1,) + xa.shape), der.reshape((-1,) + xa.shape)
        return val, der

    def __call__(self, x) -> np.ndarray:
        return self.evaluate(x)[0]

    def __repr__(self):
        return f"CollocationSolution(n={self.dimension}, nodes={self.mesh.size})"


def evaluate_solution(sol: CollocationSolution, x, side: str = "right"):
    """Return ``(value, derivative)`` of ``sol`` at ``x``."""
    return sol.evaluate(x, side)


@dataclass
class ResidualEstimate:
    intervals: np.ndarray
    per_component: np.ndarray
    boundary: float

    @property
    def max_interval(self) -> float:
        return float(self.intervals.max()) if self.intervals.size else 0.0


def estimate_residuals(sol: CollocationSolution, system: OdeSystem, bc: BoundarySpec,
                       weights=None) -> ResidualEstimate:
    """Integrated defect of ``sol`` per interval plus the boundary residual.

    ``per_component[k, i]`` approximates ``int |S_k' - f_k(x, S)| dx`` over
    interval ``i`` with 5-point Lobatto quadrature, divided by ``weights[k]``
    when given.  ``intervals`` is the maximum over components.
    """
    c = sol.coeffs
    nodes = sol.x
    h = np.diff(nodes)
    n, nint = c.shape[0], c.shape[1]
    s = _LOB_S
    xq = nodes[:-1, None] + h[:, None] * s[None, :]
    xq[:, 0] = nodes[:-1]
    # right ends as left limits, so right-continuous piecewise f is read one-sidedly
    xq[:, -1] = np.nextafter(nodes[1:], -np.inf)
    val = c[..., 0:1] + s * (c[..., 1:2] + s * (c[..., 2:3] + s * c[..., 3:4]))
    der = (c[..., 1:2] + s * (2.0 * c[..., 2:3] + 3.0 * s * c[..., 3:4])) / h[None, :, None]
    f = np.asarray(system.rhs(xq.ravel(), val.reshape(n, -1))).reshape(n, nint, s.size)
    defect = np.abs(der - f)
    integ = (defect @ _LOB_W) * h
    if weights is not None:
        integ = integ / np.asarray(weights, dtype=float)[:, None]
    psi = np.asarray(bc.residual(val[:, 0, 0], val[:, -1, -1]), dtype=float)
    return ResidualEstimate(integ.max(axis=0), integ, float(np.max(np.abs(psi))))


def adapt_mesh(mesh: Mesh, residuals, options: SolverOptions,
               pinned: Sequence[float] = (), min_nodes: int = 2) -> Mesh:
    """Split intervals whose normalised residual exceeds 1, merge quiet pairs.

    ``residuals`` are already divided by the tolerance.  A node is removed
    only if both adjacent intervals sit below 1/100, it is not pinned, and
    no neighbouring node was removed in the same pass.
    """
    res = np.asarray(residuals, dtype=float)
    nodes = mesh.nodes
    if res.size != nodes.size - 1:
        raise ValueError("one residual per interval is required")
    keep_pinned = set(mesh.pinned) | {float(p) for p in pinned}
    remove = np.zeros(nodes.size, dtype=bool)
    if options.coarsen:
        budget = nodes.size + int(np.count_nonzero(res > 1.0)) - max(min_nodes, 2)
        quiet = res < _COARSEN_RATIO
        j = 1
        while j < nodes.size - 1 and budget > 0:
            if quiet[j - 1] and quiet[j] and float(nodes[j]) not in keep_pinned:
                remove[j] = True
                budget -= 1
                j += 2
            else:
                j += 1
    out = []
    for i in range(nodes.size - 1):
        if not remove[i]:
            out.append(nodes[i])
        if res[i] > 1.0:
            out.append(0.5 * (nodes[i] + nodes[i + 1]))
    out.append(nodes[-1])
    if len(out) > options.max_nodes:
        raise MeshOverflow(f"mesh needs {len(out)} nodes, limit is {options.max_nodes}")
    return Mesh(np.array(out), tuple(sorted(keep_pinned)))


# ---------------------------------------------------------------------------
# collocation system


class _Collocation:
    def __init__(self, system: OdeSystem, bc: BoundarySpec, x: np.ndarray, pinned=()):
        self.system = system
        self.bc = bc
        self.x = x
        self.h = np.diff(x)
        self.xm = x[:-1] + 0.5 * self.h
        self.n = system.dimension
        self.layout = None  # (left_rows, right_rows) when boundary conditions separate
        # interior pinned nodes: the interval ending there sees f from the left
        pins = np.asarray(sorted(pinned), dtype=float)
        inner = np.flatnonzero(np.isin(x[1:-1], pins)) + 1
        self.split = inner
        self.x_left = np.nextafter(x[inner], -np.inf)

    def _nodal(self, fun, y):
        """``fun`` at the nodes plus left limits at split nodes; returns (at nodes, at interval ends)."""
        k = self.split
        if not k.size:
            out = fun(self.x, y)
            return out, out[..., 1:]
        both = fun(np.concatenate([self.x, self.x_left]), np.concatenate([y, y[:, k]], axis=1))
        at = both[..., : self.x.size]
        ends = at[..., 1:].copy()
        ends[..., k - 1] = both[..., self.x.size:]
        return at, ends

    def _rhs(self, x, y):
        f = np.asarray(self.system.rhs(x, y), dtype=float)
        if f.shape != y.shape:
            raise ValueError(f"rhs returned shape {f.shape}, expected {y.shape}")
        return f

    def evaluate(self, y):
        h = self.h
        f, f_end = self._nodal(self._rhs, y)
        ym = 0.5 * (y[:, :-1] + y[:, 1:]) - 0.125 * h * (f_end - f[:, :-1])
        fm = self._rhs(self.xm, ym)
        phi = y[:, 1:] - y[:, :-1] - h / 6.0 * (f[:, :-1] + 4.0 * fm + f_end)
        psi = np.asarray(self.bc.residual(y[:, 0], y[:, -1]), dtype=float)
        if psi.shape != (self.n,):
            raise ValueError(f"boundary residual must have length {self.n}")
        return phi, psi, f, ym

    def _rhs_jac(self, x, y):
        if self.system.jac is not None:
            return np.asarray(self.system.jac(x, y), dtype=float)
        # central differences, all 2n perturbations in one vectorised call
        n, m = self.n, x.size
        d = _SQRT_EPS * np.maximum(np.abs(y), 1.0)
        ys = np.tile(y, (1, 2 * n)).reshape(n, 2 * n, m)
        for k in range(n):
            ys[k, 2 * k] += d[k]
            ys[k, 2 * k + 1] -= d[k]
        f = self._rhs(np.tile(x, 2 * n), ys.reshape(n, -1)).reshape(n, 2 * n, m)
        return (f[:, 0::2] - f[:, 1::2]) / (2.0 * d[None, :, :])

    def _bc_jac(self, ya, yb):
        n = self.n
        ja = np.empty((n, n))
        jb = np.empty((n, n))
        res = self.bc.residual
        for k in range(n):
            for y0, out, other in ((ya, ja, yb), (yb, jb, ya)):
                d = _SQRT_EPS * max(abs(y0[k]), 1.0)
                p = y0.copy()
                m = y0.copy()
                p[k] += d
                m[k] -= d
                if out is ja:
                    out[:, k] = (np.asarray(res(p, other)) - np.asarray(res(m, other))) / (2 * d)
                else:
                    out[:, k] = (np.asarray(res(other, p)) - np.asarray(res(other, m))) / (2 * d)
        return ja, jb

    def assemble(self, y, f, ym):
        n = self.n
        nint = self.h.size
        h = self.h[:, None, None]
        # one Jacobian call for nodes, left limits at split nodes and midpoints
        N, k = self.x.size, self.split
        jall = self._rhs_jac(np.concatenate([self.x, self.x_left, self.xm]),
                             np.concatenate([y, y[:, k], ym], axis=1))
        jall = np.moveaxis(jall, -1, 0)
        jn = jall[:N]  # (N, n, n)
        je = jn[1:].copy()  # (N-1, n, n), right ends of the intervals
        je[k - 1] = jall[N:N + k.size]
        jm = jall[N + k.size:]  # (N-1, n, n)
        eye = np.eye(n)
        a_blk = -eye - h / 6.0 * (jn[:-1] + 4.0 * jm @ (0.5 * eye + 0.125 * h * jn[:-1]))
        b_blk = eye - h / 6.0 * (je + 4.0 * jm @ (0.5 * eye - 0.125 * h * je))
        ja, jb = self._bc_jac(y[:, 0], y[:, -1])

        left = [r for r in range(n) if not np.any(jb[r])]
        right = [r for r in range(n) if r not in left and not np.any(ja[r])]
        if len(left) + len(right) == n:
            self.layout = (left, right)
            p = len(left)
        else:
            self.layout = None
            p = n
        i = np.arange(nint)[:, None, None]
        k = np.arange(n)[None, :, None]
        m = np.arange(n)[None, None, :]
        rows_c = np.broadcast_to(p + i * n + k, (nint, n, n))
        rows = [rows_c.ravel(), rows_c.ravel()]
        cols = [np.broadcast_to(i * n + m, (nint, n, n)).ravel(),
                np.broadcast_to((i + 1) * n + m, (nint, n, n)).ravel()]
        vals = [a_blk.ravel(), b_blk.ravel()]
        last = (nint) * n
        if self.layout is not None:
            left, right = self.layout
            for r, bc_row in enumerate(left):
                rows.append(np.full(n, r))
                cols.append(np.arange(n))
                vals.append(ja[bc_row])
            for r, bc_row in enumerate(right):
                rows.append(np.full(n, p + nint * n + r))
                cols.append(last + np.arange(n))
                vals.append(jb[bc_row])
        else:
            for r in range(n):
                rows.extend([np.full(n, r), np.full(n, r)])
                cols.extend([np.arange(n), last + np.arange(n)])
                vals.extend([ja[r], jb[r]])
        return np.concatenate(rows), np.concatenate(cols), np.concatenate(vals)

    def stack(self, phi, psi):
        body = phi.T.ravel()
        if self.layout is not None:
            left, right = self.layout
            return np.concatenate([psi[left], body, psi[right]])
        return np.concatenate([psi, body])

    def solve_linear(self, trip, rhs):
        rows, cols, vals = trip
        size = rhs.size
        try:
            if self.layout is not None:
                lo = int(np.max(rows - cols))
                up = int(np.max(cols - rows))
                ab = np.zeros((lo + up + 1, size))
                np.add.at(ab, (up + rows - cols, cols), vals)
                sol = scipy.linalg.solve_banded((lo, up), ab, rhs, check_finite=False)
            else:
                mat = scipy.sparse.csc_matrix((vals, (rows, cols)), shape=(size, size))
                sol = scipy.sparse.linalg.splu(mat).solve(rhs)
        except (np.linalg.LinAlgError, RuntimeError, ValueError) as exc:
            raise SingularJacobian(str(exc)) from exc
        if not np.all(np.isfinite(sol)):
            raise SingularJacobian("collocation Jacobian is singular")
        return sol


def _weighted_norms(phi, psi, w, w_bc):
    wf = np.abs(phi) / w[:, None]
    wb = np.abs(psi) / w_bc
    mx = max(float(wf.max(initial=0.0)), float(wb.max(initial=0.0)))
    l2 = float(np.sqrt(np.sum(wf * wf) + np.sum(wb * wb)))
    return mx, l2


_NEWTON_TOL = 1e-3


def _newton(col: _Collocation, y: np.ndarray, options: SolverOptions, w, w_bc):
    """Damped Newton on the condensed collocation equations.

    Returns ``(y, iterations, converged)``.
    """
    phi, psi, f, ym = col.evaluate(y)
    mx, l2 = _weighted_norms(phi, psi, w, w_bc)
    if not np.isfinite(l2):
        return y, 0, False
    for it in range(options.newton_max_iter + 1):
        if mx <= _NEWTON_TOL:
            return y, it, True
        if it == options.newton_max_iter:
            break
        trip = col.assemble(y, f, ym)
        step = col.solve_linear(trip, -col.stack(phi, psi)).reshape(-1, col.n).T
        lam = options.newton_damping
        while True:
            y_try = y + lam * step
            phi_t, psi_t, f_t, ym_t = col.evaluate(y_try)
            mx_t, l2_t = _weighted_norms(phi_t, psi_t, w, w_bc)
            if np.isfinite(l2_t) and l2_t <= (1.0 - 0.05 * lam) * l2:
                break
            lam *= 0.5
            if lam < 1.0 / 128:
                return y, it + 1, False
        y, phi, psi, f, ym, mx, l2 = y_try, phi_t, psi_t, f_t, ym_t, mx_t, l2_t
    return y, options.newton_max_iter, False


def _as_guess(guess, pinned):
    if isinstance(guess, CollocationSolution):
        mesh = guess.mesh
        if pinned:
            mesh = Mesh(mesh.nodes, tuple(sorted(set(mesh.pinned) | set(pinned))))
        return mesh, guess.y.copy()
    x, y = guess
    x = np.asarray(x, dtype=float)
    y = np.atleast_2d(np.asarray(y, dtype=float))
    if y.shape[1] != x.size:
        raise ValueError("guess values must have shape (n, len(x))")
    return Mesh(x, tuple(pinned)), y.copy()


def solve_bvp(system: OdeSystem, bc: BoundarySpec, guess, options: SolverOptions | None = None,
              pinned: Sequence[float] = ()) -> CollocationSolution:
    """Solve ``y' = f(x, y)``, ``psi(y(a), y(b)) = 0`` by adaptive collocation.

    Parameters
    ----------
    system, bc
        Differential equations and boundary residual.
    guess
        A :class:`CollocationSolution` (typically the previous time layer) or
        a tuple ``(x, y)`` of nodes and nodal values of shape ``(n, len(x))``.
    options
        Tolerances and limits; defaults to :class:`SolverOptions()`.
    pinned
        Coordinates that must stay mesh nodes (material interfaces).  At an
        interior pinned node the interval ending there evaluates ``f`` at
        ``nextafter(x, -inf)``, so a right-hand side that switches
        coefficients at ``x`` (right-continuous lookup) is used one-sidedly.

    Returns
    -------
    CollocationSolution
        With ``stats`` recording Newton iterations and refinements.  Every
        interval's integrated defect is at most ``rel_tol * scale + abs_tol``
        per component, ``scale = max(|y|, 1)`` over the nodes.
    """
    options = options or SolverOptions()
    mesh, y = _as_guess(guess, pinned)
    if y.shape[0] != system.dimension:
        raise ValueError("guess dimension does not match the system")
    floor = mesh.size if options.min_nodes is None else options.min_nodes
    stats = SolveStats()
    failures = 0
    tried_coarse = False
    accepted = None
    while True:
        col = _Collocation(system, bc, mesh.nodes, mesh.pinned)
        scale = np.maximum(np.abs(y).max(axis=1), 1.0)
        w = options.rel_tol * scale + options.abs_tol
        w_bc = options.rel_tol + options.abs_tol
        y_new, its, ok = _newton(col, y, options, w, w_bc)
        stats.newton_iterations += its
        stats.newton_solves += 1
        if not ok:
            if accepted is not None:
                return accepted
            failures += 1
            if failures > 3 or 2 * mesh.size - 1 > options.max_nodes or not options.adapt:
                raise NonConvergence(
                    f"Newton iteration failed on a mesh of {mesh.size} nodes")
            f, f_end = col._nodal(col._rhs, y)
            sol = CollocationSolution.from_hermite(mesh, y, f, yp_end=f_end)
            mesh = adapt_mesh(mesh, np.full(mesh.size - 1, 2.0), replace(options, coarsen=False))
            y = sol(mesh.nodes)
            stats.refinements += 1
            continue
        y = y_new
        f, f_end = col._nodal(col._rhs, y)
        sol = CollocationSolution.from_hermite(mesh, y, f, stats=stats, yp_end=f_end)
        scale = np.maximum(np.abs(y).max(axis=1), 1.0)
        w = options.rel_tol * scale + options.abs_tol
        est = estimate_residuals(sol, system, bc, weights=w)
        stats.max_residual = est.max_interval
        stats.bc_residual = est.boundary
        passed = est.max_interval <= 1.0 and est.boundary <= w_bc
        if passed:
            if accepted is not None:
                # coarse attempt succeeded
                return sol
            quiet = est.intervals < _COARSEN_RATIO
            can_coarsen = (options.adapt and options.coarsen and not tried_coarse
                           and mesh.size > floor and np.any(quiet[:-1] & quiet[1:]))
            if not can_coarsen:
                return sol
            tried_coarse = True
            accepted = CollocationSolution.from_hermite(
                mesh, y, f, stats=replace(stats), yp_end=f_end)
            new_mesh = adapt_mesh(mesh, est.intervals, options, min_nodes=floor)
            if new_mesh.size == mesh.size:
                return accepted
            mesh = new_mesh
            y = sol(mesh.nodes)
            continue
        if accepted is not None:
            return accepted
        if not options.adapt:
            # fixed mesh: the caller asked for the collocation solution on this mesh
            return sol
        if stats.refinements >= options.max_refinements:
            raise NonConvergence(
                f"residual {est.max_interval:.3g} above tolerance after "
                f"{stats.refinements} refinements")
        mesh = adapt_mesh(mesh, est.intervals, options, min_nodes=floor)
        y = sol(mesh.nodes)
        stats.refinements += 1
