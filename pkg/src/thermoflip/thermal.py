"""Lumped two-node thermal model of one dual-sided Peltier element.

Each ceramic face is one node. The element is driven by a non-negative
voltage; the face heated by positive current is the *warm* face, the other
the *cold* face, and that role is fixed for a run. Which face touches the
skin is a mechanical matter handled by the controller (flip), so the model
only needs to know whether there is contact and on which face.
"""

from __future__ import annotations

import dataclasses
import enum
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import _kernel

AMBIENT_TEMP = 25.0
TARGET_WARM_TEMP = 40.0
SKIN_TEMP = 33.0
DIP_EPSILON = 0.05
DEFAULT_DT = 0.01
MAX_DT = 0.1
MAX_DURATION = 3600.0
V_MIN, V_MAX = 0.0, 5.0
TEMP_LIMITS = (_kernel.T_MIN, _kernel.T_MAX)

# Silicone pad (3 mm, k ~ 0.2 W/m/K) over a 20 mm x 20 mm face; the 1 mm
# aluminium plate adds negligible resistance.
DEFAULT_SKIN_CONDUCTANCE = 0.025

_BREAKPOINT_TOL = 1e-9


class BlowUpError(ArithmeticError):
    """Integration left the admissible temperature range."""

    def __init__(self, time: float, temp_warm: float, temp_cold: float):
        self.time = time
        self.temp_warm = temp_warm
        self.temp_cold = temp_cold
        super().__init__(
            f"temperature left {TEMP_LIMITS} at t={time:.6f} s "
            f"(warm={temp_warm!r}, cold={temp_cold!r})"
        )


class Face(str, enum.Enum):
    WARM = "warm"
    COLD = "cold"

    @property
    def other(self) -> "Face":
        return Face.COLD if self is Face.WARM else Face.WARM


@dataclass(frozen=True)
class PeltierParams:
    seebeck_alpha: float
    resistance: float
    internal_conductance: float
    heat_capacity_side: float | tuple[float, float]
    ambient_conductance: float
    skin_conductance: float = DEFAULT_SKIN_CONDUCTANCE
    skin_temp: float = SKIN_TEMP
    ambient_temp: float = AMBIENT_TEMP

    def __post_init__(self):
        cap = self.heat_capacity_side
        if isinstance(cap, (list, tuple)):
            if len(cap) != 2:
                raise ValueError("heat_capacity_side needs one value or a (warm, cold) pair")
            object.__setattr__(self, "heat_capacity_side", (float(cap[0]), float(cap[1])))
        positive = {
            "resistance": self.resistance,
            "internal_conductance": self.internal_conductance,
            "heat_capacity_warm": self.capacities[0],
            "heat_capacity_cold": self.capacities[1],
        }
        for name, value in positive.items():
            if not (value > 0 and math.isfinite(value)):
                raise ValueError(f"{name} must be finite and > 0, got {value!r}")
        # loss paths may be switched off entirely (energy-balance checks)
        for name in ("ambient_conductance", "skin_conductance"):
            value = getattr(self, name)
            if not (value >= 0 and math.isfinite(value)):
                raise ValueError(f"{name} must be finite and >= 0, got {value!r}")
        if not (self.seebeck_alpha >= 0 and math.isfinite(self.seebeck_alpha)):
            raise ValueError(f"seebeck_alpha must be finite and >= 0, got {self.seebeck_alpha!r}")
        for name in ("ambient_temp", "skin_temp"):
            value = getattr(self, name)
            if not 0.0 <= value <= 50.0:
                raise ValueError(f"{name} must lie in [0, 50] degC, got {value!r}")

    @property
    def capacities(self) -> tuple[float, float]:
        cap = self.heat_capacity_side
        if isinstance(cap, tuple):
            return cap
        return (float(cap), float(cap))

    def as_array(self) -> np.ndarray:
        cw, cc = self.capacities
        return np.array([
            self.seebeck_alpha, self.resistance, self.internal_conductance,
            cw, cc, self.ambient_conductance, self.skin_conductance,
            self.skin_temp, self.ambient_temp,
        ], dtype=np.float64)

    def replace(self, **changes) -> "PeltierParams":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        if isinstance(self.heat_capacity_side, tuple):
            d["heat_capacity_side"] = list(self.heat_capacity_side)
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "PeltierParams":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ValueError(f"unknown PeltierParams fields: {sorted(unknown)}")
        return cls(**data)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "PeltierParams":
        data = json.loads(text)
        if not isinstance(data, dict):
            raise ValueError("PeltierParams JSON must be an object")
        return cls.from_dict(data)

    @classmethod
    def load(cls, path: str | Path) -> "PeltierParams":
        return cls.from_json(Path(path).read_text())

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json())


@dataclass(frozen=True)
class ThermalState:
    time: float
    temp_warm_side: float
    temp_cold_side: float

    def __post_init__(self):
        if not self.time >= 0:
            raise ValueError(f"time must be >= 0, got {self.time!r}")
        for t in (self.temp_warm_side, self.temp_cold_side):
            if not TEMP_LIMITS[0] <= t <= TEMP_LIMITS[1]:
                raise ValueError(f"temperature {t!r} outside {TEMP_LIMITS}")

    @classmethod
    def at_ambient(cls, params: PeltierParams, time: float = 0.0) -> "ThermalState":
        return cls(time, params.ambient_temp, params.ambient_temp)


@dataclass(frozen=True)
class DriveInput:
    voltage: float = 0.0
    contact: bool = False
    contact_side: Face = Face.WARM

    def __post_init__(self):
        if not V_MIN <= self.voltage <= V_MAX:
            raise ValueError(f"voltage must lie in [{V_MIN}, {V_MAX}] V, got {self.voltage!r}")
        object.__setattr__(self, "contact_side", Face(self.contact_side))

    @property
    def contact_code(self) -> int:
        if not self.contact:
            return _kernel.NO_CONTACT
        return _kernel.CONTACT_WARM if self.contact_side is Face.WARM else _kernel.CONTACT_COLD


@dataclass
class TimeSeries:
    """Uniformly sampled two-node temperatures.

    ``voltage`` and ``contact`` hold the drive applied over the step that
    starts at each sample; the final sample repeats the last drive.
    """

    dt: float
    t: np.ndarray
    temp_warm: np.ndarray
    temp_cold: np.ndarray
    voltage: np.ndarray = field(default=None)
    contact: np.ndarray = field(default=None)

    def __post_init__(self):
        n = len(self.t)
        self.t = np.asarray(self.t, dtype=np.float64)
        self.temp_warm = np.asarray(self.temp_warm, dtype=np.float64)
        self.temp_cold = np.asarray(self.temp_cold, dtype=np.float64)
        self.voltage = np.zeros(n) if self.voltage is None else np.asarray(self.voltage, dtype=np.float64)
        self.contact = np.zeros(n, dtype=bool) if self.contact is None else np.asarray(self.contact, dtype=bool)
        if not all(len(a) == n for a in (self.temp_warm, self.temp_cold, self.voltage, self.contact)):
            raise ValueError("TimeSeries columns differ in length")
        if n > 1:
            steps = np.diff(self.t)
            if np.any(steps <= 0):
                raise ValueError("TimeSeries times must be strictly increasing")
            if np.max(np.abs(steps - self.dt)) > 1e-9:
                raise ValueError(f"TimeSeries spacing deviates from dt={self.dt}")

    def __len__(self) -> int:
        return len(self.t)

    def __getitem__(self, i: int) -> ThermalState:
        return ThermalState(float(self.t[i]), float(self.temp_warm[i]), float(self.temp_cold[i]))

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    @property
    def final(self) -> ThermalState:
        return self[len(self) - 1]

    @classmethod
    def empty(cls, dt: float = DEFAULT_DT) -> "TimeSeries":
        return cls(dt, np.empty(0), np.empty(0), np.empty(0))

    def equals(self, other: "TimeSeries") -> bool:
        """Exact (bitwise) equality, used for determinism checks."""
        return (self.dt == other.dt and all(
            np.array_equal(getattr(self, k), getattr(other, k))
            for k in ("t", "temp_warm", "temp_cold", "voltage", "contact")))


@dataclass(frozen=True)
class LifetimeResult:
    lifetime: float | None
    time_to_target: float | None
    max_warm_temp: float
    target_reached_within_lifetime: bool

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def derivatives(state: ThermalState, params: PeltierParams, drive: DriveInput) -> tuple[float, float]:
    """Time derivatives (K/s) of the warm and cold face temperatures."""
    dw, dc = _kernel.rhs(state.temp_warm_side, state.temp_cold_side, params.as_array(),
                         float(drive.voltage), drive.contact_code)
    return float(dw), float(dc)


def _check_dt(dt: float) -> None:
    if not 0 < dt <= MAX_DT:
        raise ValueError(f"dt must lie in (0, {MAX_DT}] s, got {dt!r}")


def step(state: ThermalState, params: PeltierParams, drive: DriveInput, dt: float) -> ThermalState:
    """Advance one classical Runge-Kutta step."""
    _check_dt(dt)
    tw, tc = _kernel.rk4_step(state.temp_warm_side, state.temp_cold_side, params.as_array(),
                              float(drive.voltage), drive.contact_code, float(dt))
    t = state.time + dt
    if not _kernel.in_range(tw, tc):
        raise BlowUpError(t, float(tw), float(tc))
    return ThermalState(t, float(tw), float(tc))


DriveSchedule = DriveInput | Sequence[tuple[float, DriveInput]]


def _normalise_schedule(drive: DriveSchedule) -> list[tuple[float, DriveInput]]:
    if isinstance(drive, DriveInput):
        return [(0.0, drive)]
    segments = sorted(((float(t), d) for t, d in drive), key=lambda s: s[0])
    if not segments:
        return [(0.0, DriveInput())]
    if segments[0][0] > 0:
        segments.insert(0, (0.0, DriveInput()))
    return segments


def simulate(params: PeltierParams, drive: DriveSchedule, duration: float,
             dt: float = DEFAULT_DT, initial: ThermalState | None = None) -> TimeSeries:
    """Integrate from ambient (or ``initial``) under a piecewise-constant drive.

    ``drive`` is a single :class:`DriveInput` or a list of ``(start_time, input)``
    breakpoints; before the first breakpoint the element is unpowered.
    Breakpoints must land on the dt grid.
    """
    _check_dt(dt)
    if not 0 <= duration <= MAX_DURATION:
        raise ValueError(f"duration must lie in [0, {MAX_DURATION}] s, got {duration!r}")
    n_steps = int(round(duration / dt))
    if abs(n_steps * dt - duration) > _BREAKPOINT_TOL * max(1.0, duration):
        raise ValueError(f"duration {duration} is not a multiple of dt {dt}")
    segments = _normalise_schedule(drive)
    idx = []
    for t0, _ in segments:
        k = int(round(t0 / dt))
        if abs(k * dt - t0) > _BREAKPOINT_TOL * max(1.0, t0):
            raise ValueError(f"breakpoint {t0} s is not on the dt={dt} grid")
        idx.append(min(k, n_steps))

    init = initial or ThermalState.at_ambient(params)
    n = n_steps + 1
    t = np.arange(n) * dt + init.time
    warm = np.empty(n)
    cold = np.empty(n)
    volts = np.empty(n)
    contact = np.empty(n, dtype=bool)
    warm[0] = init.temp_warm_side
    cold[0] = init.temp_cold_side
    p = params.as_array()

    bounds = idx[1:] + [n_steps]
    for (_, d), start, stop in zip(segments, idx, bounds):
        volts[start:stop + 1] = d.voltage
        contact[start:stop + 1] = d.contact
        if stop <= start:
            continue
        bad = _kernel.integrate(p, float(d.voltage), d.contact_code, float(dt),
                                start, stop - start, warm, cold)
        if bad >= 0:
            raise BlowUpError(float(t[bad]), float(warm[bad]), float(cold[bad]))
    return TimeSeries(dt, t, warm, cold, volts, contact)


def lifetime(series: TimeSeries, params: PeltierParams, target: float = TARGET_WARM_TEMP,
             eps: float = DIP_EPSILON) -> LifetimeResult:
    """Dual-sided lifetime and time-to-target of a run started at ambient.

    The lifetime clock stops when the cold face climbs back above ambient,
    after first having dipped more than ``eps`` below it.
    """
    if len(series) == 0:
        raise ValueError("lifetime needs a non-empty series")
    life, ttt, peak = _kernel.scan_lifetime(series.t, series.temp_warm, series.temp_cold,
                                            params.ambient_temp, eps, target)
    return _make_result(life, ttt, float(peak))


def _make_result(life: float, ttt: float, peak: float) -> LifetimeResult:
    life_v = None if math.isnan(life) else float(life)
    ttt_v = None if math.isnan(ttt) else float(ttt)
    reached = ttt_v is not None and (life_v is None or ttt_v <= life_v)
    return LifetimeResult(life_v, ttt_v, peak, reached)


def bench_lifetime(params: PeltierParams, voltage: float, duration: float = 600.0,
                   dt: float = DEFAULT_DT, target: float = TARGET_WARM_TEMP,
                   eps: float = DIP_EPSILON) -> tuple[float | None, float | None]:
    """Fast (lifetime, time_to_target) for a contact-free constant-voltage run.

    Stops integrating at the lifetime crossing, so ``time_to_target`` is only
    reported when it precedes the lifetime. Matches ``simulate`` followed by
    ``lifetime`` exactly on those two quantities. Raises BlowUpError.
    """
    _check_dt(dt)
    DriveInput(voltage)  # validates the voltage
    n = int(round(duration / dt))
    life, ttt, bad = _kernel.run_until_lifetime(params.as_array(), float(voltage), float(dt),
                                                n, eps, target)
    if bad >= 0:
        raise BlowUpError(bad * dt, math.nan, math.nan)
    life_v = None if math.isnan(life) else float(life)
    ttt_v = None if math.isnan(ttt) else float(ttt)
    return life_v, ttt_v


def stiffness_number(params: PeltierParams, dt: float) -> float:
    """dt times a bound on the fastest linear relaxation rate of the model.

    The back-EMF couples the faces with an effective conductance of
    alpha^2 * T / R on top of the internal conductance.
    """
    alpha = params.seebeck_alpha
    t_abs = params.ambient_temp + _kernel.KELVIN
    g = (2.0 * params.internal_conductance + params.ambient_conductance + params.skin_conductance
         + 2.0 * alpha * alpha * t_abs / params.resistance)
    return dt * g / min(params.capacities)

