"""Time-dependent boundary drivers in dimensionless time.

Every signal is a small immutable object that is callable on scalars or
arrays and serialises to a plain dict (``to_dict`` / :func:`signal_from_dict`)
for case configuration files.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from typing import Any, ClassVar

import numpy as np

__all__ = [
    "Signal",
    "Constant",
    "Sinusoid",
    "Tanh",
    "Window",
    "RelativeHumidityVapour",
    "RainHeat",
    "Series",
    "signal_from_dict",
]

_REGISTRY: dict[str, type] = {}


class Signal:
    kind: ClassVar[str] = ""

    def __init_subclass__(cls, **kw):
        super().__init_subclass__(**kw)
        if cls.kind:
            _REGISTRY[cls.kind] = cls

    def __call__(self, t):
        raise NotImplementedError

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {"kind": self.kind}
        for f in fields(self):
            val = getattr(self, f.name)
            if isinstance(val, Signal):
                out[f.name] = val.to_dict()
            elif isinstance(val, tuple):
                out[f.name] = list(val)
            else:
                out[f.name] = val
        return out


def signal_from_dict(data: dict[str, Any]) -> Signal:
    """Rebuild a signal from :meth:`Signal.to_dict` output.

    Unknown kinds or keys raise ``ValueError``.
    """
    data = dict(data)
    kind = data.pop("kind", None)
    if kind not in _REGISTRY:
        raise ValueError(f"unknown signal kind {kind!r}")
    cls = _REGISTRY[kind]
    names = {f.name for f in fields(cls)}
    extra = set(data) - names
    if extra:
        raise ValueError(f"unknown keys for signal {kind!r}: {sorted(extra)}")
    kwargs = {}
    for k, v in data.items():
        if isinstance(v, dict) and "kind" in v:
            v = signal_from_dict(v)
        elif isinstance(v, list):
            v = tuple(float(e) for e in v)
        kwargs[k] = v
    return cls(**kwargs)


@dataclass(frozen=True)
class Constant(Signal):
    kind: ClassVar[str] = "constant"
    value: float

    def __call__(self, t):
        return np.full(np.shape(t), self.value) if np.ndim(t) else float(self.value)


@dataclass(frozen=True)
class Sinusoid(Signal):
    """``base + amplitude * sin(2 pi t / period + phase) ** power``."""

    kind: ClassVar[str] = "sinusoid"
    base: float
    amplitude: float
    period: float
    power: int = 1
    phase: float = 0.0

    def __call__(self, t):
        s = np.sin(2.0 * np.pi * np.asarray(t, dtype=float) / self.period + self.phase)
        return self.base + self.amplitude * s**self.power


@dataclass(frozen=True)
class Tanh(Signal):
    """``base + amplitude * tanh(rate * (t - center))``."""

    kind: ClassVar[str] = "tanh"
    base: float
    amplitude: float
    center: float
    rate: float = 1.0

    def __call__(self, t):
        return self.base + self.amplitude * np.tanh(self.rate * (np.asarray(t, dtype=float) - self.center))


@dataclass(frozen=True)
class Window(Signal):
    """``inner(t)`` on ``[start, stop]`` and zero elsewhere."""

    kind: ClassVar[str] = "window"
    inner: Signal
    start: float
    stop: float

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        return np.where((t >= self.start) & (t <= self.stop), self.inner(t), 0.0)


@dataclass(frozen=True)
class RelativeHumidityVapour(Signal):
    """Dimensionless vapour pressure ``phi(t) * P_s(u(t) T0) / Pv0``."""

    kind: ClassVar[str] = "relative_humidity_vapour"
    relative_humidity: Signal
    temperature: Signal
    T0: float
    Pv0: float

    def __call__(self, t):
        from .physics import saturation_pressure

        return self.relative_humidity(t) * saturation_pressure(self.temperature(t) * self.T0) / self.Pv0


@dataclass(frozen=True)
class RainHeat(Signal):
    """Sensible heat carried by rain, ``factor * g(t) * (u(t) - u_ref)``."""

    kind: ClassVar[str] = "rain_heat"
    factor: float
    rain: Signal
    temperature: Signal
    u_ref: float = 1.0

    def __call__(self, t):
        return self.factor * self.rain(t) * (self.temperature(t) - self.u_ref)


@dataclass(frozen=True)
class Series(Signal):
    """Piecewise-linear interpolation of samples ``(times, values)``."""

    kind: ClassVar[str] = "series"
    times: tuple[float, ...]
    values: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "times", tuple(float(e) for e in self.times))
        object.__setattr__(self, "values", tuple(float(e) for e in self.values))
        if len(self.times) != len(self.values) or len(self.times) < 1:
            raise ValueError("series needs matching, nonempty times and values")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("series times must be strictly increasing")

    def __call__(self, t):
        out = np.interp(np.asarray(t, dtype=float), self.times, self.values)
        return out if np.ndim(t) else float(out)
