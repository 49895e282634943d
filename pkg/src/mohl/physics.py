"""Material models, dimensionless scaling and the coupled heat-moisture equations.

Fields are the dimensionless vapour pressure ``v = P_v / Pv0`` and temperature
``u = T / T0``.  The moisture balance is

    c_M(v) v_t = Fo_M (k_M(v) v_x)_x

and the energy balance

    c_T(v) u_t + gamma1 c_TM(v) v_t = Fo_T (k_T(v) u_x + gamma2 k_TM(v) v_x)_x

with all coefficients functions of ``v`` only and piecewise in ``x`` for
layered walls.  For the boundary value problem at each time layer both are
written as first-order systems in ``(v, theta = v_x)`` and ``(u, mu = u_x)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Protocol, Sequence

import numpy as np

from . import _kernels
from .bvp import BoundarySpec, CollocationSolution, OdeSystem, OutOfDomain
from .signals import Constant, Signal

__all__ = [
    "OutOfRange",
    "NonPositivePressure",
    "InvalidReference",
    "MissingMoistureSolution",
    "NonPositiveClosure",
    "OutOfDomain",
    "saturation_pressure",
    "saturation_pressure_derivative",
    "PhysicalMaterial",
    "load_bearing_material",
    "finishing_material",
    "wood_fibre_material",
    "total_moisture_transfer_coefficient",
    "DimensionalCoefficients",
    "dimensional_coefficients",
    "Closure",
    "CoefficientClosure",
    "MaterialClosure",
    "Layer",
    "References",
    "DimensionlessModel",
    "build_dimensionless_model",
    "CoefficientValues",
    "eval_coefficients",
    "CoupledRhsCoefficients",
    "coupled_rhs_coefficients",
    "BoundaryDriver",
    "Radiation",
    "build_moisture_system",
    "build_heat_system",
    "build_ode_systems",
    "build_boundary_residuals",
]

WATER_HEAT_CAPACITY = 4180.0  # J/(kg K)
LATENT_HEAT = 2.5e6  # J/kg
VAPOUR_GAS_CONSTANT = 461.5  # J/(kg K)
WATER_DENSITY = 1000.0  # kg/m^3
STEFAN_BOLTZMANN = 5.670374419e-8


class OutOfRange(ValueError):
    pass


class NonPositivePressure(ValueError):
    pass


class InvalidReference(ValueError):
    pass


class MissingMoistureSolution(ValueError):
    pass


class NonPositiveClosure(ValueError):
    pass


# ---------------------------------------------------------------------------
# dimensional material description


def saturation_pressure(T):
    """Saturation vapour pressure over liquid water (Pa), Tetens form.

    ``P_s = 610.78 exp(17.27 t / (t + 237.3))`` with ``t`` in degrees Celsius,
    valid for ``T`` in [253, 333] K.
    """
    T = np.asarray(T, dtype=float)
    if np.any(T < 253.0) or np.any(T > 333.0) or np.any(np.isnan(T)):
        raise OutOfRange(f"temperature outside [253, 333] K: {T}")
    tc = T - 273.15
    out = 610.78 * np.exp(17.27 * tc / (tc + 237.3))
    return float(out) if out.ndim == 0 else out


def saturation_pressure_derivative(T):
    """``dP_s/dT`` in Pa/K for the Tetens form."""
    T = np.asarray(T, dtype=float)
    tc = T - 273.15
    out = saturation_pressure(T) * 17.27 * 237.3 / (tc + 237.3) ** 2
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class PhysicalMaterial:
    """Hygrothermal properties as functions of relative humidity ``phi``.

    ``conductivity`` takes ``(phi, T)``.  Constants default to the usual
    values for liquid water and vapour.
    """

    name: str
    rho0_c0: float
    sorption: Callable[[np.ndarray], np.ndarray]
    sorption_derivative: Callable[[np.ndarray], np.ndarray]
    vapour_permeability: Callable[[np.ndarray], np.ndarray]
    liquid_permeability: Callable[[np.ndarray], np.ndarray]
    conductivity: Callable[[np.ndarray, np.ndarray], np.ndarray]
    c_w: float = WATER_HEAT_CAPACITY
    L_v: float = LATENT_HEAT
    R_v: float = VAPOUR_GAS_CONSTANT
    rho_l: float = WATER_DENSITY


def _vg_term(a, b, n, m):
    """``a [1 + (-b ln phi)^n]^(-m)`` and its phi-derivative."""

    def val(phi):
        z = -b * np.log(phi)
        return a * (1.0 + z**n) ** (-m)

    def der(phi):
        z = -b * np.log(phi)
        return a * m * n * b * z ** (n - 1.0) * (1.0 + z**n) ** (-m - 1.0) / phi

    return val, der


def _permeability_ratio(dv0, wsat, sorption):
    def delta(phi):
        r = 1.0 - sorption(phi) / wsat
        return dv0 * r / (0.503 * r * r + 0.497)

    return delta


def load_bearing_material() -> PhysicalMaterial:
    w1, d1 = _vg_term(47.1, 1692.94, 1.65, 0.39)
    w2, d2 = _vg_term(109.9, 2437.83, 6.0, 0.83)

    def w(phi):
        return w1(phi) + w2(phi)

    def dw(phi):
        return d1(phi) + d2(phi)

    return PhysicalMaterial(
        name="load_bearing",
        rho0_c0=2005.0 * 840.0,
        sorption=w,
        sorption_derivative=dw,
        vapour_permeability=_permeability_ratio(6.413e-9, 157.0, w),
        liquid_permeability=lambda phi: 2.52e-4 * np.exp(-1.55e6 * np.asarray(phi, dtype=float)),
        conductivity=lambda phi, T=None: 0.5 + 0.0045 * w(phi),
    )


def finishing_material() -> PhysicalMaterial:
    w, dw = _vg_term(209.0, 2.7e14, 1.27, 0.21)

    def kl(phi):
        s = w(phi) - 120.0
        return np.exp(-33.0 + 0.0704 * s - 1.742e-4 * s**2 - 2.795e-6 * s**3
                      - 1.157e-7 * s**4 + 2.597e-9 * s**5)

    return PhysicalMaterial(
        name="finishing",
        rho0_c0=790.0 * 870.0,
        sorption=w,
        sorption_derivative=dw,
        vapour_permeability=_permeability_ratio(6.413e-9, 209.0, w),
        liquid_permeability=kl,
        conductivity=lambda phi, T=None: 0.2 + 0.0045 * w(phi),
    )


def wood_fibre_material() -> PhysicalMaterial:
    """Wood fibre board; liquid transport is neglected (``k_l = 0``)."""
    coeffs = np.array([7.063e-5, -0.00736, 0.4105, 0.2688])
    rho_l = WATER_DENSITY

    def w(phi):
        return np.polyval(coeffs, phi)

    return PhysicalMaterial(
        name="wood_fibre",
        rho0_c0=1103.0 * 146.0,
        sorption=w,
        sorption_derivative=lambda phi: np.polyval(np.polyder(coeffs), phi),
        vapour_permeability=lambda phi: 4.85e-13 * np.asarray(phi, dtype=float) + 3.28e-11,
        liquid_permeability=lambda phi: np.zeros_like(np.asarray(phi, dtype=float)),
        conductivity=lambda phi, T=293.15: 0.038 + 0.192 * w(phi) / rho_l + 1.08e-4 * np.asarray(T),
    )


def total_moisture_transfer_coefficient(mat: PhysicalMaterial, T, P_v, phi):
    """``k_M = k_l rho_l R_v T / P_v + delta_v`` in seconds."""
    P_v = np.asarray(P_v, dtype=float)
    if np.any(P_v <= 0):
        raise NonPositivePressure("vapour pressure must be positive")
    phi = np.asarray(phi, dtype=float)
    if np.any(phi <= 0) or np.any(phi >= 1):
        raise OutOfRange("relative humidity must lie in (0, 1)")
    return (mat.liquid_permeability(phi) * mat.rho_l * mat.R_v * np.asarray(T) / P_v
            + mat.vapour_permeability(phi))


@dataclass(frozen=True)
class DimensionalCoefficients:
    k_M: np.ndarray
    k_T: np.ndarray
    k_TM: np.ndarray
    c_M: np.ndarray
    c_T: np.ndarray
    c_TM: np.ndarray


def dimensional_coefficients(mat: PhysicalMaterial, T, P_v) -> DimensionalCoefficients:
    """Storage and transfer coefficients of the dimensional balance equations."""
    T = np.asarray(T, dtype=float)
    ps = saturation_pressure(T)
    phi = np.asarray(P_v, dtype=float) / ps
    dw = mat.sorption_derivative(phi)
    return DimensionalCoefficients(
        k_M=total_moisture_transfer_coefficient(mat, T, P_v, phi),
        k_T=mat.conductivity(phi, T),
        k_TM=mat.L_v * mat.vapour_permeability(phi),
        c_M=dw / ps,
        c_T=mat.rho0_c0 + mat.sorption(phi) * mat.c_w,
        c_TM=mat.c_w * T * dw / ps,
    )


# ---------------------------------------------------------------------------
# dimensionless closures


class ScalarClosure(Protocol):
    def value_and_derivative(self, v: np.ndarray) -> tuple[np.ndarray, np.ndarray]: ...


def _floats(seq):
    return tuple(float(e) for e in seq)


@dataclass(frozen=True)
class Closure:
    """``P(v)/Q(v) + power_coef * v**power_exp`` with descending coefficients."""

    numerator: tuple[float, ...] = (1.0,)
    denominator: tuple[float, ...] = (1.0,)
    power_coef: float = 0.0
    power_exp: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "numerator", _floats(self.numerator))
        object.__setattr__(self, "denominator", _floats(self.denominator))
        if not self.numerator or not self.denominator:
            raise ValueError("closure polynomials need at least one coefficient")
        object.__setattr__(self, "_num", np.array(self.numerator))
        object.__setattr__(self, "_den", np.array(self.denominator))

    @classmethod
    def constant(cls, value: float = 1.0) -> "Closure":
        return cls((value,), (1.0,))

    @classmethod
    def polynomial(cls, coeffs: Sequence[float]) -> "Closure":
        return cls(tuple(coeffs), (1.0,))

    def value_and_derivative(self, v):
        return _kernels.closure_eval(self._num, self._den, self.power_coef, self.power_exp, v)

    def __call__(self, v):
        return self.value_and_derivative(v)[0]

    def derivative(self, v):
        return self.value_and_derivative(v)[1]

    def to_dict(self) -> dict:
        return {"numerator": list(self.numerator), "denominator": list(self.denominator),
                "power_coef": self.power_coef, "power_exp": self.power_exp}

    @classmethod
    def from_dict(cls, data: dict) -> "Closure":
        extra = set(data) - {"numerator", "denominator", "power_coef", "power_exp"}
        if extra:
            raise ValueError(f"unknown closure keys {sorted(extra)}")
        return cls(**data)


SLOTS = ("c_M", "c_T", "c_TM", "k_M", "k_T", "k_TM")


@dataclass(frozen=True)
class CoefficientClosure:
    """The six dimensionless coefficient functions of one material layer."""

    c_M: ScalarClosure
    c_T: ScalarClosure
    c_TM: ScalarClosure
    k_M: ScalarClosure
    k_T: ScalarClosure
    k_TM: ScalarClosure

    @classmethod
    def constant(cls, c_M=1.0, c_T=1.0, c_TM=1.0, k_M=1.0, k_T=1.0, k_TM=1.0):
        return cls(*(Closure.constant(x) for x in (c_M, c_T, c_TM, k_M, k_T, k_TM)))

    def slot(self, index: int) -> ScalarClosure:
        return getattr(self, SLOTS[index])

    @property
    def is_rational(self) -> bool:
        return all(isinstance(self.slot(i), Closure) for i in range(6))

    def to_dict(self) -> dict:
        if not self.is_rational:
            raise TypeError("only rational closures serialise")
        return {name: getattr(self, name).to_dict() for name in SLOTS}

    @classmethod
    def from_dict(cls, data: dict) -> "CoefficientClosure":
        if set(data) != set(SLOTS):
            raise ValueError(f"closure set needs exactly the keys {SLOTS}")
        return cls(**{k: Closure.from_dict(v) for k, v in data.items()})


@dataclass(frozen=True)
class MaterialClosure:
    """Dimensionless coefficient taken directly from a dimensional material.

    Evaluated at the reference temperature with ``P_v = v Pv0``; the
    derivative is a central difference.
    """

    material: PhysicalMaterial
    slot_name: str
    T0: float
    Pv0: float
    reference: float

    def __call__(self, v):
        coeffs = dimensional_coefficients(self.material, self.T0, np.asarray(v, dtype=float) * self.Pv0)
        return getattr(coeffs, self.slot_name) / self.reference

    def value_and_derivative(self, v):
        v = np.asarray(v, dtype=float)
        h = 1e-6 * np.maximum(np.abs(v), 1.0)
        return self(v), (self(v + h) - self(v - h)) / (2.0 * h)


@dataclass(frozen=True)
class Layer:
    start: float
    stop: float
    closure: CoefficientClosure


@dataclass(frozen=True)
class References:
    """Reference scales used to build the dimensionless variables."""

    T0: float
    Pv0: float
    t0: float
    L: float
    c_M0: float
    c_T0: float
    c_TM0: float
    k_M0: float
    k_T0: float
    k_TM0: float

    def __post_init__(self):
        for name, val in self.__dict__.items():
            if not np.isfinite(val) or val <= 0:
                raise InvalidReference(f"reference {name} must be positive, got {val}")


def _pair(value) -> tuple[float, float]:
    if np.ndim(value) == 0:
        return (float(value), float(value))
    a, b = value
    return (float(a), float(b))


@dataclass(frozen=True)
class DimensionlessModel:
    """Scaling numbers, reference values and per-layer closures.

    Biot numbers are ``(left, right)`` pairs.  ``heat_bc_fourier_factor``
    multiplies the conductive flux in the heat boundary residual by
    ``Fo_T``; both the collocation and finite-difference solvers honour it.
    """

    Fo_M: float
    Fo_T: float
    gamma1: float
    gamma2: float
    Bi_M: tuple[float, float]
    Bi_T: tuple[float, float]
    Bi_TM: tuple[float, float]
    references: References
    layers: tuple[Layer, ...]
    heat_bc_fourier_factor: bool = True

    def __post_init__(self):
        for name in ("Bi_M", "Bi_T", "Bi_TM"):
            object.__setattr__(self, name, _pair(getattr(self, name)))
        object.__setattr__(self, "layers", tuple(self.layers))
        for name in ("Fo_M", "Fo_T", "gamma1", "gamma2"):
            if not getattr(self, name) > 0:
                raise InvalidReference(f"{name} must be positive")
        for name in ("Bi_M", "Bi_T", "Bi_TM"):
            if min(getattr(self, name)) < 0:
                raise InvalidReference(f"{name} must be nonnegative")
        if not self.layers:
            raise ValueError("at least one layer is required")
        if self.layers[0].start != 0.0 or self.layers[-1].stop != 1.0:
            raise ValueError("layers must cover [0, 1]")
        for a, b in zip(self.layers[:-1], self.layers[1:]):
            if a.stop != b.start or not a.start < a.stop:
                raise ValueError("layers must partition [0, 1] without gaps or overlaps")
        object.__setattr__(self, "_interfaces", np.array([l.start for l in self.layers[1:]]))
        packed = None
        if all(layer.closure.is_rational for layer in self.layers):
            num, den, pw = self.packed_closures()
            packed = [(num[i], den[i], pw[i]) for i in range(len(self.layers))]
        object.__setattr__(self, "_packed", packed)

    @property
    def interfaces(self) -> np.ndarray:
        return self._interfaces

    @property
    def heat_factor(self) -> float:
        return self.Fo_T if self.heat_bc_fourier_factor else 1.0

    def layer_index(self, x) -> np.ndarray:
        """Half-open lookup: ``x >= interface`` belongs to the layer on the right."""
        x = np.asarray(x, dtype=float)
        if x.size and not (x.min() >= 0.0 and x.max() <= 1.0):  # NaN fails too
            raise OutOfDomain("coordinate outside [0, 1]")
        if not self._interfaces.size:
            return np.zeros(x.shape, dtype=np.intp)
        return np.searchsorted(self._interfaces, x, side="right")

    def check_positivity(self, v_min: float, v_max: float, samples: int = 200):
        """Raise :class:`NonPositiveClosure` unless every closure is positive on the range."""
        v = np.linspace(v_min, v_max, samples)
        for i, layer in enumerate(self.layers):
            for s, name in enumerate(SLOTS):
                vals = layer.closure.slot(s).value_and_derivative(v)[0]
                if not np.all(vals > 0):
                    bad = v[np.argmax(~(vals > 0))]
                    raise NonPositiveClosure(
                        f"layer {i} closure {name} is not positive at v = {bad:.4g}")

    # unit conversion
    def nondimensionalize(self, T=None, P_v=None, x=None, t=None) -> dict:
        r = self.references
        out = {}
        for key, val, scale in (("u", T, r.T0), ("v", P_v, r.Pv0), ("x", x, r.L), ("t", t, r.t0)):
            if val is not None:
                out[key] = np.asarray(val, dtype=float) / scale
        return out

    def dimensionalize(self, u=None, v=None, x=None, t=None) -> dict:
        r = self.references
        out = {}
        for key, val, scale in (("T", u, r.T0), ("P_v", v, r.Pv0), ("x", x, r.L), ("t", t, r.t0)):
            if val is not None:
                out[key] = np.asarray(val, dtype=float) * scale
        return out

    def packed_closures(self, width: int | None = None):
        """Closures as dense arrays for the compiled kernels.

        Returns ``num[L, 6, K]``, ``den[L, 6, K]`` (descending, zero padded at
        the front) and ``pw[L, 6, 2]`` with the power term.
        """
        closures = [[layer.closure.slot(s) for s in range(6)] for layer in self.layers]
        for row in closures:
            for c in row:
                if not isinstance(c, Closure):
                    raise TypeError("compiled kernels need rational closures")
        k = max(max(len(c.numerator), len(c.denominator)) for row in closures for c in row)
        k = max(k, width or 0)
        nl = len(self.layers)
        num = np.zeros((nl, 6, k))
        den = np.zeros((nl, 6, k))
        pw = np.zeros((nl, 6, 2))
        for i, row in enumerate(closures):
            for s, c in enumerate(row):
                num[i, s, k - len(c.numerator):] = c.numerator
                den[i, s, k - len(c.denominator):] = c.denominator
                pw[i, s] = (c.power_coef, c.power_exp)
        return num, den, pw


def build_dimensionless_model(layers: Sequence[tuple[PhysicalMaterial, float]], h_M, h_T,
                              references: References, closures: Sequence[CoefficientClosure] | None = None,
                              heat_bc_fourier_factor: bool = True) -> DimensionlessModel:
    """Scaling numbers from dimensional data.

    Parameters
    ----------
    layers
        ``(material, thickness in m)`` from the left surface.
    h_M, h_T
        Convective vapour (s/m) and heat (W/m^2/K) coefficients, scalars or
        ``(left, right)`` pairs.
    references
        Reference scales.  ``references.L`` must equal the total thickness.
    closures
        Dimensionless closures per layer.  When omitted each layer uses
        :class:`MaterialClosure` built from its material.
    """
    if not layers:
        raise ValueError("at least one layer is required")
    thick = np.array([t for _, t in layers], dtype=float)
    if np.any(thick <= 0):
        raise InvalidReference("layer thicknesses must be positive")
    r = references
    total = float(thick.sum())
    if not np.isclose(total, r.L, rtol=1e-12):
        raise InvalidReference(f"reference length {r.L} differs from wall thickness {total}")
    hm = np.array(_pair(h_M))
    ht = np.array(_pair(h_T))
    if np.any(hm < 0) or np.any(ht < 0):
        raise InvalidReference("convective coefficients must be nonnegative")
    L_v = layers[0][0].L_v
    bounds = np.concatenate([[0.0], np.cumsum(thick) / total])
    bounds[-1] = 1.0
    built = []
    for i, (mat, _) in enumerate(layers):
        if closures is not None:
            cl = closures[i]
        else:
            refs = (r.c_M0, r.c_T0, r.c_TM0, r.k_M0, r.k_T0, r.k_TM0)
            cl = CoefficientClosure(*(MaterialClosure(mat, SLOTS[s], r.T0, r.Pv0, refs[s]) for s in range(6)))
        built.append(Layer(float(bounds[i]), float(bounds[i + 1]), cl))
    return DimensionlessModel(
        Fo_M=r.t0 * r.k_M0 / (r.L**2 * r.c_M0),
        Fo_T=r.t0 * r.k_T0 / (r.L**2 * r.c_T0),
        gamma1=r.c_TM0 * r.Pv0 / (r.c_T0 * r.T0),
        gamma2=r.k_TM0 * r.Pv0 / (r.k_T0 * r.T0),
        Bi_M=tuple(hm * r.L / r.k_M0),
        Bi_T=tuple(ht * r.L / r.k_T0),
        Bi_TM=tuple(hm * r.L * L_v / r.k_TM0),
        references=r,
        layers=tuple(built),
        heat_bc_fourier_factor=heat_bc_fourier_factor,
    )


# ---------------------------------------------------------------------------
# coefficient evaluation


@dataclass(frozen=True)
class CoefficientValues:
    c_M: np.ndarray
    c_T: np.ndarray
    c_TM: np.ndarray
    k_M: np.ndarray
    k_T: np.ndarray
    k_TM: np.ndarray
    dk_M: np.ndarray
    dk_T: np.ndarray
    dk_TM: np.ndarray


def _eval_slots(model: DimensionlessModel, v, x, slots):
    v = np.asarray(v, dtype=float)
    x = np.asarray(x, dtype=float)
    v, x = np.broadcast_arrays(v, x)
    slots = tuple(slots)
    packed = model._packed
    if len(model.layers) == 1:
        idx = None
        model.layer_index(x)  # domain check
    else:
        idx = model.layer_index(x)
    vals = {s: np.empty(v.shape) for s in slots}
    ders = {s: np.empty(v.shape) for s in slots}
    if packed is not None:
        sl = np.array(slots, dtype=np.intp)
        for li in range(len(model.layers)):
            m = None if idx is None else idx == li
            if m is not None and not m.any():
                continue
            vv = np.ascontiguousarray(v.ravel() if m is None else v[m])
            a, b = _kernels.closures_eval(*packed[li], sl, vv)
            for j, s in enumerate(slots):
                if m is None:
                    vals[s][...] = a[j].reshape(v.shape)
                    ders[s][...] = b[j].reshape(v.shape)
                else:
                    vals[s][m] = a[j]
                    ders[s][m] = b[j]
        return vals, ders
    for li, layer in enumerate(model.layers):
        m = ... if idx is None else idx == li
        if idx is not None and not m.any():
            continue
        for s in slots:
            a, b = layer.closure.slot(s).value_and_derivative(v[m])
            vals[s][m] = a
            ders[s][m] = b
    return vals, ders


def eval_coefficients(model: DimensionlessModel, v, x_star) -> CoefficientValues:
    """All six closures and the three transfer-coefficient derivatives at ``(v, x*)``."""
    vals, ders = _eval_slots(model, v, x_star, range(6))
    return CoefficientValues(vals[0], vals[1], vals[2], vals[3], vals[4], vals[5],
                             ders[3], ders[4], ders[5])


@dataclass(frozen=True)
class CoupledRhsCoefficients:
    a_bar: np.ndarray
    b_bar: np.ndarray
    c_bar: np.ndarray
    d_bar: np.ndarray
    e_bar: np.ndarray
    f_bar: np.ndarray
    g_bar: np.ndarray
    h_bar: np.ndarray


def coupled_rhs_coefficients(model: DimensionlessModel, v, theta, x_star) -> CoupledRhsCoefficients:
    """Coefficients of the first-order moisture and heat systems.

    ``theta' = (v_t - a theta) / d`` and
    ``mu' = (u_t + (c - f) theta' + (h - g) theta - e mu) / b``.
    """
    k = eval_coefficients(model, v, x_star)
    theta = np.asarray(theta, dtype=float)
    fm, ft, g1, g2 = model.Fo_M, model.Fo_T, model.gamma1, model.gamma2
    return CoupledRhsCoefficients(
        a_bar=fm * k.dk_M * theta / k.c_M,
        b_bar=ft * k.k_T / k.c_T,
        c_bar=fm * g1 * k.k_M * k.c_TM / (k.c_T * k.c_M),
        d_bar=fm * k.k_M / k.c_M,
        e_bar=ft * k.dk_T * theta / k.c_T,
        f_bar=ft * g2 * k.k_TM / k.c_T,
        g_bar=ft * g2 * k.dk_TM * theta / k.c_T,
        h_bar=fm * g1 * k.c_TM * k.dk_M * theta / (k.c_T * k.c_M),
    )


# ---------------------------------------------------------------------------
# first-order systems


TimeDerivative = Callable[[np.ndarray, np.ndarray], np.ndarray]


def build_moisture_system(model: DimensionlessModel, v_t: TimeDerivative) -> OdeSystem:
    """``v' = theta``, ``theta' = (v_t - a theta) / d``.

    ``v_t(x, v)`` approximates the time derivative at the new time layer; it
    may depend on the unknown ``v`` (backward differences do).
    """
    fm = model.Fo_M

    def rhs(x, y):
        v, theta = y[0], y[1]
        vals, ders = _eval_slots(model, v, x, (0, 3))
        c_m, k_m, dk_m = vals[0], vals[3], ders[3]
        # theta' = (c_M v_t / Fo_M - k_M' theta^2) / k_M
        dtheta = (c_m * v_t(x, v) / fm - dk_m * theta * theta) / k_m
        return np.vstack([theta, dtheta])

    return OdeSystem(2, rhs)


class _FrozenField:
    """Value and slope of a solved field with a single-entry cache keyed by ``x``."""

    def __init__(self, sol: CollocationSolution):
        self.sol = sol
        self._key = None
        self._val = None

    def __call__(self, x):
        key = x.tobytes()
        if key != self._key:
            self._val = self.sol.evaluate(x)
            self._key = key
        return self._val


def build_heat_system(model: DimensionlessModel, u_t: TimeDerivative, moisture: OdeSystem,
                      frozen_v: CollocationSolution | None) -> OdeSystem:
    """``u' = mu``, ``mu' = (u_t + (c - f) theta' + (h - g) theta - e mu) / b``.

    ``v`` and ``theta`` come from ``frozen_v``; ``theta'`` is the moisture
    right-hand side evaluated there.  ``u_t(x, u)`` is the time derivative.
    If it exposes ``value_coefficient`` (``d u_t / d u``) the system carries
    an analytic Jacobian, since it is linear in ``(u, mu)``.
    """
    if frozen_v is None:
        raise MissingMoistureSolution("the heat system needs the solved moisture field")
    field_v = _FrozenField(frozen_v)
    ft, fm, g1, g2 = model.Fo_T, model.Fo_M, model.gamma1, model.gamma2
    cache: dict = {}

    def moisture_terms(x):
        key = x.tobytes()
        if cache.get("key") != key:
            val, der = field_v(x)
            v, theta = val[0], val[1]
            dtheta = moisture.rhs(x, val)[1]
            vals, ders = _eval_slots(model, v, x, range(6))
            c_t = vals[1]
            b = ft * vals[4] / c_t
            e_coef = ft * ders[4] / c_t  # e = e_coef * theta
            c_bar = fm * g1 * vals[3] * vals[2] / (c_t * vals[0])
            f_bar = ft * g2 * vals[5] / c_t
            h_bar = fm * g1 * vals[2] * ders[3] * theta / (c_t * vals[0])
            g_bar = ft * g2 * ders[5] * theta / c_t
            src = (c_bar - f_bar) * dtheta + (h_bar - g_bar) * theta
            cache.update(key=key, b=b, e=e_coef * theta, src=src)
        return cache["b"], cache["e"], cache["src"]

    def rhs(x, y):
        b, e, src = moisture_terms(x)
        mu = y[1]
        return np.vstack([mu, (u_t(x, y[0]) + src - e * mu) / b])

    jac = None
    alpha = getattr(u_t, "value_coefficient", None)
    if alpha is not None:
        def jac(x, y):
            b, e, _ = moisture_terms(x)
            out = np.zeros((2, 2, x.size))
            out[0, 1] = 1.0
            out[1, 0] = alpha / b
            out[1, 1] = -e / b
            return out

    return OdeSystem(2, rhs, jac)


def build_ode_systems(model: DimensionlessModel, v_t: TimeDerivative, u_t: TimeDerivative,
                      frozen_v: CollocationSolution | None):
    """Moisture and heat systems of one time layer."""
    moisture = build_moisture_system(model, v_t)
    return moisture, build_heat_system(model, u_t, moisture, frozen_v)


# ---------------------------------------------------------------------------
# boundary conditions


@dataclass(frozen=True)
class Radiation:
    """Long-wave exchange ``q* = coefficient * sum_j (u_j^4 - u^4)``.

    ``coefficient = s xi sigma T0^3 L / k_T0`` in dimensionless form.
    """

    coefficient: float
    surfaces: tuple[Signal, ...]

    def __call__(self, t, u):
        return self.coefficient * sum(s(t) ** 4 - u**4 for s in self.surfaces)


@dataclass(frozen=True)
class BoundaryDriver:
    """Ambient conditions on one side of the wall."""

    side: str
    u_inf: Signal
    v_inf: Signal
    g_inf: Signal = field(default_factory=lambda: Constant(0.0))
    q_inf: Signal = field(default_factory=lambda: Constant(0.0))
    mode: str = "robin"
    radiation: Radiation | None = None

    def __post_init__(self):
        if self.side not in ("left", "right"):
            raise ValueError("side must be 'left' or 'right'")
        if self.mode not in ("robin", "dirichlet"):
            raise ValueError("mode must be 'robin' or 'dirichlet'")

    @property
    def normal(self) -> float:
        return 1.0 if self.side == "left" else -1.0

    def heat_source(self, t, u) -> float:
        q = float(self.q_inf(t))
        if self.radiation is not None:
            q += float(self.radiation(t, u))
        return q


def _closure_at(model, slot, v, x):
    cl = model.layers[int(model.layer_index(x))].closure.slot(slot)
    return float(cl.value_and_derivative(np.array([v]))[0][0])


def _end_closures(model, slot):
    return tuple(model.layers[int(model.layer_index(x))].closure.slot(slot) for x in (0.0, 1.0))


def build_boundary_residuals(model: DimensionlessModel, drivers: Sequence[BoundaryDriver], t_star: float,
                             frozen_v: CollocationSolution | None = None):
    """Boundary residuals of the moisture and heat systems at ``t_star``.

    Returns ``(moisture_bc, heat_bc)``; ``heat_bc`` is ``None`` when no
    moisture solution is given, since the heat conditions contain ``v`` and
    ``theta`` at the surfaces.
    """
    left, right = drivers
    if left.side != "left" or right.side != "right":
        raise ValueError("drivers must be ordered (left, right)")
    t = float(t_star)
    vinf = (float(left.v_inf(t)), float(right.v_inf(t)))
    uinf = (float(left.u_inf(t)), float(right.u_inf(t)))
    ginf = (float(left.g_inf(t)), float(right.g_inf(t)))
    bim, bit, bitm = model.Bi_M, model.Bi_T, model.Bi_TM
    g2 = model.gamma2
    heat_factor = model.heat_factor
    ends = (0.0, 1.0)
    k_m_ends = _end_closures(model, 3)

    def moisture(ya, yb):
        out = np.empty(2)
        for i, (drv, y) in enumerate(((left, ya), (right, yb))):
            if drv.mode == "dirichlet":
                out[i] = y[0] - vinf[i]
                continue
            km = float(k_m_ends[i].value_and_derivative(np.array([y[0]]))[0][0])
            out[i] = km * y[1] - drv.normal * (bim[i] * (y[0] - vinf[i]) - ginf[i])
        return out

    if frozen_v is None:
        return BoundarySpec(moisture), None

    vb, _ = frozen_v.evaluate(np.array(ends))
    ktb = [_closure_at(model, 4, vb[0, i], ends[i]) for i in range(2)]
    ktmb = [_closure_at(model, 5, vb[0, i], ends[i]) for i in range(2)]

    def heat(ya, yb):
        out = np.empty(2)
        for i, (drv, y) in enumerate(((left, ya), (right, yb))):
            if drv.mode == "dirichlet":
                out[i] = y[0] - uinf[i]
                continue
            flux = heat_factor * (ktb[i] * y[1] + g2 * ktmb[i] * vb[1, i])
            conv = bit[i] * (y[0] - uinf[i]) + bitm[i] * g2 * (vb[0, i] - vinf[i])
            out[i] = flux - drv.normal * (conv - drv.heat_source(t, y[0]))
        return out

    return BoundarySpec(moisture), BoundarySpec(heat)
