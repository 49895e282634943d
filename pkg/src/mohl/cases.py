"""Built-in cases, the two-material interface benchmark and sensor-data input."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .bvp import BoundarySpec, CollocationSolution, OdeSystem, OutOfDomain, SolverOptions, solve_bvp
from .physics import (
    BoundaryDriver,
    Closure,
    CoefficientClosure,
    DimensionlessModel,
    Layer,
    Radiation,
    References,
    saturation_pressure,
)
from .signals import (
    Constant,
    RainHeat,
    RelativeHumidityVapour,
    Series,
    Sinusoid,
    Tanh,
    Window,
    signal_from_dict,
)
from .stepper import LayerOptions, PolynomialField, TimeGrid

__all__ = [
    "UnknownPreset",
    "MissingData",
    "SchemaViolation",
    "NonMonotoneTime",
    "ConfigError",
    "CaseConfig",
    "SensorData",
    "InterfaceBenchmark",
    "interface_analytic_solution",
    "solve_interface_benchmark",
    "preset",
    "single_layer",
    "constant_coefficient_case",
    "multilayer",
    "experimental",
    "load_sensor_csv",
    "write_synthetic_sensor_csv",
    "case_to_dict",
    "case_from_dict",
    "save_case",
    "load_case",
    "SENSOR_COLUMNS",
    "PRESETS",
]


class UnknownPreset(KeyError):
    pass


class MissingData(ValueError):
    pass


class SchemaViolation(ValueError):
    pass


class NonMonotoneTime(ValueError):
    pass


class ConfigError(ValueError):
    pass


SENSOR_COLUMNS = ("t_hours", "T_x0", "RH_x0", "T_x16", "RH_x16", "T_x4", "RH_x4",
                  "T_x8", "RH_x8", "T_x12", "RH_x12")


@dataclass(frozen=True)
class SensorData:
    """Sensor records: temperatures in degrees Celsius, relative humidity as a fraction.

    ``positions_cm`` lists the interior sensor positions; ``temperature``
    and ``humidity`` map every position (including the surfaces) to a series.
    """

    t_hours: np.ndarray
    temperature: dict
    humidity: dict
    source: str = ""

    @property
    def interior_positions_cm(self) -> tuple[float, ...]:
        return tuple(p for p in sorted(self.temperature) if p not in (0.0, 16.0))


@dataclass(frozen=True)
class CaseConfig:
    """A complete simulation setup in dimensionless form."""

    name: str
    model: DimensionlessModel
    drivers: tuple[BoundaryDriver, BoundaryDriver]
    v0: PolynomialField
    u0: PolynomialField
    dt_star: float
    tau_star: float
    moisture_tol: float = 1e-5
    heat_tol: float = 1e-6
    initial_nodes: int = 10
    max_nodes: int = 5000
    min_nodes: int = 3
    operating_range: tuple[float, float] | None = None
    sensors: SensorData | None = field(default=None, compare=False, repr=False)
    sensor_csv: str | None = None

    def __post_init__(self):
        if not self.dt_star > 0 or self.tau_star < 0:
            raise ConfigError("dt_star must be positive and tau_star nonnegative")
        if self.moisture_tol <= 0 or self.heat_tol <= 0:
            raise ConfigError("tolerances must be positive")
        if self.initial_nodes < 2 or self.min_nodes < 2:
            raise ConfigError("initial_nodes and min_nodes must be at least 2")
        if self.operating_range is not None:
            lo, hi = self.operating_range
            object.__setattr__(self, "operating_range", (float(lo), float(hi)))
            self.model.check_positivity(lo, hi)

    @property
    def time_grid(self) -> TimeGrid:
        return TimeGrid(self.dt_star, self.tau_star)

    def layer_options(self, moisture_tol: float | None = None, heat_tol: float | None = None) -> LayerOptions:
        # coarsening floor; interfaces are pinned nodes on top of it
        floor = self.min_nodes + len(self.model.interfaces)
        mt = moisture_tol if moisture_tol is not None else self.moisture_tol
        ht = heat_tol if heat_tol is not None else self.heat_tol
        return LayerOptions(
            moisture=SolverOptions(rel_tol=mt, abs_tol=mt, max_nodes=self.max_nodes, min_nodes=floor),
            heat=SolverOptions(rel_tol=ht, abs_tol=ht, max_nodes=self.max_nodes, min_nodes=floor),
            initial_nodes=self.initial_nodes,
        )

    def replace(self, **changes) -> "CaseConfig":
        from dataclasses import replace

        return replace(self, **changes)


def driver_range(drivers, tau_star: float, extra=(), samples: int = 4001) -> tuple[float, float]:
    """Extremes of the ambient vapour pressure over ``[0, tau_star]``."""
    t = np.linspace(0.0, max(tau_star, 1e-12), samples)
    vals = [np.atleast_1d(d.v_inf(t)) for d in drivers] + [np.atleast_1d(e) for e in extra]
    allv = np.concatenate(vals)
    return float(allv.min()), float(allv.max())


# ---------------------------------------------------------------------------
# presets

_T_REF = 293.15


def _rational(num, den, a=0.0, p=0.0) -> Closure:
    return Closure(tuple(num), tuple(den), a, p)


def single_layer() -> CaseConfig:
    """10 cm load-bearing wall, sinusoidal climate on both sides, no rain."""
    refs = References(T0=_T_REF, Pv0=1636.53, t0=3600.0, L=0.1, c_M0=0.061, c_T0=8.6125e5,
                      c_TM0=5.0963e3, k_M0=5.4712e-9, k_T0=0.3873, k_TM0=0.0154)
    closure = CoefficientClosure(
        c_M=_rational([169.5, -814.2, 534.4, 2625, -4642, 2217],
                      [1, 2182, -12520, 27210, -26680, 10050]),
        c_T=_rational([246.6, -778.9, 656.9], [1, -41.37, 395.2, -985.6, 760.7]),
        c_TM=_rational([4207, -24860, 50920, -43030, 14570], [1, 8614, -28190, 23480]),
        k_M=_rational([16.23], [1.0], 4.045, 6.448),
        k_T=_rational([15.3, -46.53, 38.04], [1, -10.46, 46.24, -85.34, 56.1]),
        k_TM=_rational([1.644, -7.013, 7.505], [1, -3.133, 4.859, -8.003, 7.408]),
    )
    model = DimensionlessModel(
        Fo_M=0.032, Fo_T=0.16, gamma1=0.023, gamma2=0.158,
        Bi_M=(3.65, 0.55), Bi_T=(6.45, 2.06), Bi_TM=(0.13, 0.02),
        references=refs, layers=(Layer(0.0, 1.0, closure),),
    )
    u_l = Sinusoid(1.0, 0.02, 48.0, 2)
    u_r = Sinusoid(1.0, 0.005, 24.0, 2)
    drivers = (
        BoundaryDriver("left", u_l, RelativeHumidityVapour(Sinusoid(0.7, 0.25, 24.0, 2), u_l, refs.T0, refs.Pv0)),
        BoundaryDriver("right", u_r, RelativeHumidityVapour(Tanh(0.825, 0.125, 36.0), u_r, refs.T0, refs.Pv0)),
    )
    tau = 72.0
    return CaseConfig(
        name="single_layer", model=model, drivers=drivers,
        v0=PolynomialField.uniform(1.0), u0=PolynomialField.uniform(1.0),
        dt_star=0.1, tau_star=tau, moisture_tol=1e-5, heat_tol=1e-6, initial_nodes=10,
        operating_range=driver_range(drivers, tau, extra=(1.0,)),
    )


def constant_coefficient_case(Fo_M: float = 0.1, Fo_T: float = 0.1, gamma1: float = 1e-3, gamma2: float = 1e-3,
                              drivers=None, v0=None, u0=None, dt_star: float = 0.1, tau_star: float = 1.0,
                              tol: float = 1e-6, initial_nodes: int = 10, name: str = "linear") -> CaseConfig:
    """Single layer with unit closures, i.e. linear coupled diffusion.

    Defaults: uniform unit initial fields and Dirichlet surfaces held at 1.
    """
    refs = References(T0=_T_REF, Pv0=1000.0, t0=3600.0, L=0.1, c_M0=1.0, c_T0=1.0, c_TM0=1.0,
                      k_M0=1.0, k_T0=1.0, k_TM0=1.0)
    model = DimensionlessModel(
        Fo_M=Fo_M, Fo_T=Fo_T, gamma1=gamma1, gamma2=gamma2, Bi_M=1.0, Bi_T=1.0, Bi_TM=0.0,
        references=refs, layers=(Layer(0.0, 1.0, CoefficientClosure.constant()),),
    )
    if drivers is None:
        drivers = tuple(BoundaryDriver(side, Constant(1.0), Constant(1.0), mode="dirichlet")
                        for side in ("left", "right"))
    return CaseConfig(
        name=name, model=model, drivers=tuple(drivers),
        v0=v0 if v0 is not None else PolynomialField.uniform(1.0),
        u0=u0 if u0 is not None else PolynomialField.uniform(1.0),
        dt_star=dt_star, tau_star=tau_star, moisture_tol=tol, heat_tol=tol, initial_nodes=initial_nodes,
    )


def _multilayer_closures():
    mat1 = CoefficientClosure(
        c_M=_rational([-0.1244, 0.4949, -0.6025, 0.1802, 0.06364], [1, -5.101, 9.802, -8.408, 2.713, 0.0055]),
        c_T=_rational([16330, -80020, 127900, -75310, 17920], [1, 16340, -80050, 127900, -75340, 17930]),
        c_TM=_rational([-0.124, 0.4937, -0.6015, 0.18, 0.0638], [1, -5.103, 9.812, -8.42, 2.719, 0.0055]),
        k_M=_rational([-0.8682, 6.371, -10.02, 1.842, 3.542], [1, -7.075, 18.65, -20.95, 6.635, 2.601]),
        k_T=_rational([4692, -17720, 16330, -3385, 8137], [1, 4678, -17650, 16210, -3336, 8152]),
        k_TM=_rational([-1002, 1727, -94.85, 253.6, 2091], [1, -1002, 1714, -70.93, 240.7, 2092]),
    )
    mat2 = CoefficientClosure(
        c_M=_rational([-11870, 36160, -27730, 11480, 878], [1, 223500, -212400, 172100, 41290, 14.34]),
        c_T=_rational([-372.3, 203.7, 344.9, 956, 1440], [1, -320, -975.6, 2050, 1061, 3012]),
        c_TM=_rational([-65880, 196800, -163100, 49850, 7210], [1, -105800, 583000, -146000, 336500, 119.1]),
        k_M=_rational([-7049, -8193, 36200, -10330, 55820], [1, -2888, 7947, -7103, 3269, 4471]),
        k_T=_rational([139.5, -668, -28.81, 1191, 974.1], [1, 333.6, -1308, 448.4, 943.6, 1468]),
        k_TM=_rational([-77400, 202700, -245700, 239400, 120600], [1, -8436, 22580, -26780, 25320, 12160]),
    )
    return mat1, mat2


MULTILAYER_V_MAX = 1.9


def multilayer() -> CaseConfig:
    """10 cm load-bearing layer plus 2 cm finishing layer, rain on the left face."""
    refs = References(T0=_T_REF, Pv0=1.16e3, t0=3600.0, L=0.12, c_M0=0.061, c_T0=1.6862e6,
                      c_TM0=5.0963e3, k_M0=5.4712e-9, k_T0=0.5021, k_TM0=0.0161)
    mat1, mat2 = _multilayer_closures()
    x_int = 10.0 / 12.0
    model = DimensionlessModel(
        Fo_M=0.07, Fo_T=0.02, gamma1=0.01, gamma2=0.13,
        Bi_M=(4.4, 0.6), Bi_T=(6.0, 2.0), Bi_TM=(0.1, 0.02),
        references=refs, layers=(Layer(0.0, x_int, mat1), Layer(x_int, 1.0, mat2)),
    )
    u_l = Sinusoid(1.0, -0.02, 24.0)
    u_r = Sinusoid(1.0, 0.01, 48.0)
    rain = Window(Sinusoid(0.0, 3.8, 210.0, 70), 40.0, 65.0)
    drivers = (
        BoundaryDriver("left", u_l, RelativeHumidityVapour(Sinusoid(0.5, 0.3, 48.0, 2), u_l, refs.T0, refs.Pv0),
                       g_inf=rain, q_inf=RainHeat(1.8e-4, rain, u_l, 1.0)),
        BoundaryDriver("right", u_r, RelativeHumidityVapour(Sinusoid(0.5, 0.2, 72.0, 2), u_r, refs.T0, refs.Pv0)),
    )
    tau = 120.0
    lo, _ = driver_range(drivers, tau, extra=(1.0,))
    return CaseConfig(
        name="multilayer", model=model, drivers=drivers,
        v0=PolynomialField.uniform(1.0), u0=PolynomialField.uniform(1.0),
        dt_star=0.1, tau_star=tau, moisture_tol=1e-5, heat_tol=1e-5, initial_nodes=20,
        # the fitted closures turn negative from v = 1.918 on, below the peak
        # ambient value; the solved fields are checked against this bound
        operating_range=(lo, MULTILAYER_V_MAX),
    )


WOOD_FIBRE_U0 = (-0.08806, 0.1688, -0.1143, -0.01621, 1.015)
WOOD_FIBRE_V0 = (-0.408, 1.188, -1.053, 0.08969, 1.092)
WOOD_FIBRE_REFS = dict(T0=_T_REF, Pv0=1166.91, t0=3600.0, L=0.16, c_M0=1.72e-4, c_T0=163073.8,
                       c_TM0=211.7, k_M0=3.31e-11, k_T0=6.98e-2, k_TM0=8.27e-5)
# measurement and position uncertainties of the sensors
SIGMA_T_MEAS = 0.3  # degrees
SIGMA_RH_MEAS = 0.018
SIGMA_POSITION_CM = {4.0: 1.0, 8.0: 0.5, 12.0: 1.0}


def experimental(sensor_csv: str | Path | None = None, sensors: SensorData | None = None) -> CaseConfig:
    """16 cm wood-fibre wall with measured surface temperature and humidity.

    Both surfaces are Dirichlet boundaries driven by the sensors at 0 and
    16 cm; the sensors at 4, 8 and 12 cm serve as references.
    """
    if sensors is None:
        if sensor_csv is None:
            raise MissingData("the experimental case needs a sensor CSV file")
        sensors = load_sensor_csv(sensor_csv)
    refs = References(**WOOD_FIBRE_REFS)
    closure = CoefficientClosure(
        c_M=Closure.polynomial([-0.01799, 1.018]),
        c_T=Closure.polynomial([0.005168, 0.9948]),
        c_TM=Closure.polynomial([-0.01799, 1.018]),
        k_M=Closure.polynomial([0.007343, 0.9927]),
        k_T=Closure.polynomial([7.343e-4, 0.9994]),
        k_TM=Closure.polynomial([0.007343, 0.9927]),
    )
    model = DimensionlessModel(
        Fo_M=0.02, Fo_T=0.06, gamma1=5.17e-3, gamma2=7.72e-3,
        Bi_M=(0.0, 0.0), Bi_T=(0.0, 0.0), Bi_TM=(0.0, 0.0),
        references=refs, layers=(Layer(0.0, 1.0, closure),),
    )
    drivers = sensor_drivers(sensors, refs.T0, refs.Pv0, refs.t0)
    t_end = float(sensors.t_hours[-1] * 3600.0 / refs.t0)
    tau = min(336.0, t_end)
    v0 = PolynomialField(WOOD_FIBRE_V0)
    x = np.linspace(0, 1, 101)
    return CaseConfig(
        name="experimental", model=model, drivers=drivers, v0=v0, u0=PolynomialField(WOOD_FIBRE_U0),
        dt_star=0.1, tau_star=tau, moisture_tol=1e-4, heat_tol=1e-4, initial_nodes=10,
        operating_range=driver_range(drivers, tau, extra=(v0(x)[0],)),
        sensors=sensors, sensor_csv=str(sensor_csv) if sensor_csv is not None else None,
    )


def sensor_drivers(sensors: SensorData, T0: float, Pv0: float, t0: float):
    t_star = tuple(np.asarray(sensors.t_hours, dtype=float) * 3600.0 / t0)
    out = []
    for side, pos in (("left", 0.0), ("right", 16.0)):
        T = np.asarray(sensors.temperature[pos]) + 273.15
        v = np.asarray(sensors.humidity[pos]) * saturation_pressure(T) / Pv0
        out.append(BoundaryDriver(side, Series(t_star, tuple(T / T0)), Series(t_star, tuple(v)),
                                  mode="dirichlet"))
    return tuple(out)


# ---------------------------------------------------------------------------
# interface benchmark


@dataclass(frozen=True)
class InterfaceBenchmark:
    """``-(k u')' = sin(pi x)`` on [-1, 1], ``u(-1) = -1``, ``u(1) = 1``.

    ``k = k1`` for ``x < 0`` and ``k2`` for ``x >= 0``.  The flux-continuous
    solution uses ``C_A``, the derivative-continuous one ``C_B``.
    """

    k1: float = 1.0
    k2: float = 5.0
    mode: str = "derivative-continuous"

    def __post_init__(self):
        if self.k1 <= 0 or self.k2 <= 0:
            raise ValueError("diffusivities must be positive")
        if self.mode not in ("flux-continuous", "derivative-continuous"):
            raise ValueError("mode must be 'flux-continuous' or 'derivative-continuous'")

    @property
    def C_A(self) -> float:
        return (self.k2 - self.k1) / (self.k2 + self.k1)

    @property
    def C_B(self) -> float:
        return (self.k1 - self.k2) / (2.0 * np.pi * self.k1 * self.k2)

    @property
    def constant(self) -> float:
        return self.C_A if self.mode == "flux-continuous" else self.C_B


def interface_analytic_solution(bench: InterfaceBenchmark, x, derivative: bool = False):
    """Closed-form solution (or its derivative) of the interface benchmark."""
    x = np.asarray(x, dtype=float)
    if np.any(x < -1.0) or np.any(x > 1.0) or np.any(np.isnan(x)):
        raise OutOfDomain("x must lie in [-1, 1]")
    C = bench.constant
    pi = np.pi
    if derivative:
        left = np.cos(pi * x) / (bench.k1 * pi) + 1.0 + C
        right = np.cos(pi * x) / (bench.k2 * pi) + 1.0 - C
    else:
        left = np.sin(pi * x) / (bench.k1 * pi**2) + x + C * (1.0 + x)
        right = np.sin(pi * x) / (bench.k2 * pi**2) + x + C * (1.0 - x)
    return np.where(x < 0.0, left, right)


def solve_interface_benchmark(bench: InterfaceBenchmark, tol: float = 1e-8,
                              initial_nodes: int = 11) -> CollocationSolution:
    """Solve the benchmark with the collocation solver, interface pinned at 0."""
    k1, k2 = bench.k1, bench.k2

    def rhs(x, y):
        k = np.where(x < 0.0, k1, k2)
        return np.vstack([y[1], -np.sin(np.pi * x) / k])

    def jac(x, y):
        out = np.zeros((2, 2, x.size))
        out[0, 1] = 1.0
        return out

    system = OdeSystem(2, rhs, jac)
    bc = BoundarySpec(lambda ya, yb: np.array([ya[0] + 1.0, yb[0] - 1.0]))
    x = np.union1d(np.linspace(-1.0, 1.0, initial_nodes), [0.0])
    guess = (x, np.vstack([x, np.ones_like(x)]))
    return solve_bvp(system, bc, guess, SolverOptions(rel_tol=tol, abs_tol=tol), pinned=(0.0,))


PRESETS = ("single_layer", "multilayer", "experimental", "appendix_c")


def preset(name: str, sensor_csv: str | Path | None = None):
    """Built-in case by name.

    ``appendix_c`` returns an :class:`InterfaceBenchmark` (``k1 = 1``,
    ``k2 = 5``); the others return a :class:`CaseConfig`.
    """
    if name == "single_layer":
        return single_layer()
    if name == "multilayer":
        return multilayer()
    if name == "experimental":
        return experimental(sensor_csv)
    if name == "appendix_c":
        return InterfaceBenchmark()
    raise UnknownPreset(name)


# ---------------------------------------------------------------------------
# sensor files


def load_sensor_csv(path: str | Path) -> SensorData:
    """Read a sensor file; see :data:`SENSOR_COLUMNS` for the required header."""
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        header = [h.strip() for h in (reader.fieldnames or [])]
        for col in SENSOR_COLUMNS:
            if col not in header:
                raise SchemaViolation(f"missing column {col!r} in {path}")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            row = {k.strip(): v for k, v in row.items() if k is not None}
            try:
                rows.append([float(row[c]) for c in SENSOR_COLUMNS])
            except (TypeError, ValueError) as exc:
                raise SchemaViolation(f"line {lineno}: non-numeric entry ({exc})") from exc
    if len(rows) < 1:
        raise SchemaViolation(f"{path} has no data rows")
    data = np.array(rows)
    t = data[:, 0]
    if np.any(np.diff(t) <= 0):
        bad = int(np.argmax(np.diff(t) <= 0)) + 1
        raise NonMonotoneTime(f"time stamps not strictly increasing at data row {bad + 1}")
    temperature, humidity = {}, {}
    for j in range(1, len(SENSOR_COLUMNS), 2):
        pos = float(SENSOR_COLUMNS[j].split("_x")[1])
        temperature[pos] = data[:, j]
        humidity[pos] = data[:, j + 1]
    return SensorData(t, temperature, humidity, str(path))


def write_synthetic_sensor_csv(path: str | Path, hours: float = 336.0, step_hours: float = 1.0,
                               noise: float = 0.0, seed: int = 0) -> Path:
    """Sensor file sampled from the wood-fibre initial profiles, constant in time.

    Optional Gaussian ``noise`` (degrees and humidity fraction) perturbs the
    interior readings only, so surfaces stay consistent with the initial field.
    """
    path = Path(path)
    rng = np.random.default_rng(seed)
    T0, Pv0 = _T_REF, WOOD_FIBRE_REFS["Pv0"]
    u0, v0 = PolynomialField(WOOD_FIBRE_U0), PolynomialField(WOOD_FIBRE_V0)
    t = np.arange(0.0, hours + 0.5 * step_hours, step_hours)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SENSOR_COLUMNS)
        for tk in t:
            row = [repr(float(tk))]
            for j in range(1, len(SENSOR_COLUMNS), 2):
                pos = float(SENSOR_COLUMNS[j].split("_x")[1])
                xs = pos / 16.0
                T = float(u0(xs)[0]) * T0
                rh = float(v0(xs)[0]) * Pv0 / saturation_pressure(T)
                if noise and pos not in (0.0, 16.0):
                    T += noise * rng.standard_normal()
                    rh += noise * 0.1 * rng.standard_normal()
                row += [repr(T - 273.15), repr(rh)]
            w.writerow(row)
    return path


# ---------------------------------------------------------------------------
# structured configuration (JSON)

_REF_KEYS = {
    "T0_K": "T0", "Pv0_Pa": "Pv0", "t0_s": "t0", "L_m": "L",
    "c_M0_kg_per_m3Pa": "c_M0", "c_T0_J_per_m3K": "c_T0", "c_TM0_J_per_m3Pa": "c_TM0",
    "k_M0_s": "k_M0", "k_T0_W_per_mK": "k_T0", "k_TM0_W_per_mPa": "k_TM0",
}


def _check_keys(data: dict, allowed, where: str, required=None):
    if not isinstance(data, dict):
        raise ConfigError(f"{where} must be a mapping")
    extra = set(data) - set(allowed)
    if extra:
        raise ConfigError(f"unknown keys in {where}: {sorted(extra)}")
    missing = set(required if required is not None else allowed) - set(data)
    if missing:
        raise ConfigError(f"missing keys in {where}: {sorted(missing)}")


def _driver_to_dict(d: BoundaryDriver) -> dict:
    out = {"side": d.side, "mode": d.mode, "u_inf": d.u_inf.to_dict(), "v_inf": d.v_inf.to_dict(),
           "g_inf": d.g_inf.to_dict(), "q_inf": d.q_inf.to_dict()}
    if d.radiation is not None:
        out["radiation"] = {"coefficient": d.radiation.coefficient,
                            "surfaces": [s.to_dict() for s in d.radiation.surfaces]}
    return out


def _driver_from_dict(data: dict) -> BoundaryDriver:
    keys = ("side", "mode", "u_inf", "v_inf", "g_inf", "q_inf", "radiation")
    _check_keys(data, keys, "driver", required=("side", "mode", "u_inf", "v_inf"))
    rad = None
    if "radiation" in data:
        _check_keys(data["radiation"], ("coefficient", "surfaces"), "radiation")
        rad = Radiation(float(data["radiation"]["coefficient"]),
                        tuple(signal_from_dict(s) for s in data["radiation"]["surfaces"]))
    kw = {k: signal_from_dict(data[k]) for k in ("u_inf", "v_inf", "g_inf", "q_inf") if k in data}
    return BoundaryDriver(data["side"], mode=data["mode"], radiation=rad, **kw)


def case_to_dict(case: CaseConfig) -> dict[str, Any]:
    """Serialisable description of a case (keys carry units where physical)."""
    m = case.model
    r = m.references
    out = {
        "name": case.name,
        "model": {
            "Fo_M": m.Fo_M, "Fo_T": m.Fo_T, "gamma1": m.gamma1, "gamma2": m.gamma2,
            "Bi_M": list(m.Bi_M), "Bi_T": list(m.Bi_T), "Bi_TM": list(m.Bi_TM),
            "heat_bc_fourier_factor": m.heat_bc_fourier_factor,
            "references": {k: getattr(r, v) for k, v in _REF_KEYS.items()},
            "layers": [{"start": l.start, "stop": l.stop, "closure": l.closure.to_dict()} for l in m.layers],
        },
        "drivers": [_driver_to_dict(d) for d in case.drivers],
        "initial": {"v": list(case.v0.coefficients), "u": list(case.u0.coefficients)},
        "time": {"dt_star": case.dt_star, "tau_star": case.tau_star},
        "solver": {"moisture_tol": case.moisture_tol, "heat_tol": case.heat_tol,
                   "initial_nodes": case.initial_nodes, "max_nodes": case.max_nodes,
                   "min_nodes": case.min_nodes},
        "operating_range": list(case.operating_range) if case.operating_range else None,
    }
    if case.sensor_csv is not None:
        out["sensor_csv"] = case.sensor_csv
    return out


def case_from_dict(data: dict[str, Any]) -> CaseConfig:
    """Inverse of :func:`case_to_dict`; unknown or missing keys raise :class:`ConfigError`."""
    try:
        _check_keys(data, ("name", "model", "drivers", "initial", "time", "solver", "operating_range",
                           "sensor_csv"),
                    "case", required=("name", "model", "drivers", "initial", "time", "solver"))
        md = data["model"]
        _check_keys(md, ("Fo_M", "Fo_T", "gamma1", "gamma2", "Bi_M", "Bi_T", "Bi_TM",
                         "heat_bc_fourier_factor", "references", "layers"), "model")
        _check_keys(md["references"], _REF_KEYS, "model.references")
        refs = References(**{v: float(md["references"][k]) for k, v in _REF_KEYS.items()})
        layers = []
        for i, ld in enumerate(md["layers"]):
            _check_keys(ld, ("start", "stop", "closure"), f"model.layers[{i}]")
            layers.append(Layer(float(ld["start"]), float(ld["stop"]), CoefficientClosure.from_dict(ld["closure"])))
        model = DimensionlessModel(
            Fo_M=md["Fo_M"], Fo_T=md["Fo_T"], gamma1=md["gamma1"], gamma2=md["gamma2"],
            Bi_M=tuple(md["Bi_M"]), Bi_T=tuple(md["Bi_T"]), Bi_TM=tuple(md["Bi_TM"]),
            references=refs, layers=tuple(layers),
            heat_bc_fourier_factor=bool(md["heat_bc_fourier_factor"]),
        )
        if len(data["drivers"]) != 2:
            raise ConfigError("exactly two drivers (left, right) are required")
        drivers = tuple(_driver_from_dict(d) for d in data["drivers"])
        _check_keys(data["initial"], ("v", "u"), "initial")
        _check_keys(data["time"], ("dt_star", "tau_star"), "time")
        _check_keys(data["solver"], ("moisture_tol", "heat_tol", "initial_nodes", "max_nodes", "min_nodes"),
                    "solver", required=("moisture_tol", "heat_tol", "initial_nodes", "max_nodes"))
        rng = data.get("operating_range")
        sensors = None
        if data.get("sensor_csv"):
            sensors = load_sensor_csv(data["sensor_csv"])
        return CaseConfig(
            name=data["name"], model=model, drivers=drivers,
            v0=PolynomialField(tuple(data["initial"]["v"])), u0=PolynomialField(tuple(data["initial"]["u"])),
            dt_star=float(data["time"]["dt_star"]), tau_star=float(data["time"]["tau_star"]),
            moisture_tol=float(data["solver"]["moisture_tol"]), heat_tol=float(data["solver"]["heat_tol"]),
            initial_nodes=int(data["solver"]["initial_nodes"]), max_nodes=int(data["solver"]["max_nodes"]),
            min_nodes=int(data["solver"].get("min_nodes", 3)),
            operating_range=tuple(rng) if rng else None,
            sensors=sensors, sensor_csv=data.get("sensor_csv"),
        )
    except ConfigError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def save_case(case: CaseConfig, path: str | Path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(case_to_dict(case), indent=2))
    return path


def load_case(path: str | Path) -> CaseConfig:
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read case file {path}: {exc}") from exc
    return case_from_dict(data)
