"""Controller-in-the-loop execution against a device backend."""

from __future__ import annotations

import logging
import time as _time
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .controller import (N_ELEMENTS, Action, ArrayControlError, ControllerConfig, ElementState,
                         Sensation, SetVoltage, StartFlip, Stop, command_sensation,
                         coordinate_array, fresh_array)
from .device.backend import DeviceBackend, SimulatedBackend
from .device.traces import ActionRecord
from .thermal import Face, TimeSeries

log = logging.getLogger(__name__)


class SimClock:
    """Simulated time: waiting advances the simulated backend."""

    def __init__(self, backend: SimulatedBackend):
        self.backend = backend
        self._t0 = backend.time

    def now(self) -> float:
        return self.backend.time - self._t0

    def wait_until(self, t: float) -> None:
        gap = t - self.now()
        if gap > 1e-12:
            self.backend.advance(gap)


class WallClock:
    def __init__(self):
        self._t0 = _time.monotonic()

    def now(self) -> float:
        return _time.monotonic() - self._t0

    def wait_until(self, t: float) -> None:
        gap = t - self.now()
        if gap > 0:
            _time.sleep(gap)


@dataclass
class ExecutionTrace:
    """What happened during a run, sampled once per control tick."""

    tick_period: float
    actions: list[ActionRecord] = field(default_factory=list)
    t: list[float] = field(default_factory=list)
    temps: list[list[tuple[float, float]]] = field(default_factory=list)  # per tick, per element
    voltage: list[list[float]] = field(default_factory=list)
    contact: list[list[bool]] = field(default_factory=list)
    skin_face: list[list[Face | None]] = field(default_factory=list)
    errors: list[str] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.t)

    def series(self, element: int) -> TimeSeries:
        if not self.t:
            return TimeSeries.empty(self.tick_period)
        t = np.arange(len(self.t)) * self.tick_period + self.t[0]
        warm = [row[element][0] for row in self.temps]
        cold = [row[element][1] for row in self.temps]
        volts = [row[element] for row in self.voltage]
        contact = [row[element] for row in self.contact]
        return TimeSeries(self.tick_period, t, warm, cold, volts, contact)

    def skin_temps(self, element: int) -> np.ndarray:
        """Skin-facing temperature per tick; NaN while the element is mid-flip."""
        out = np.full(len(self.t), np.nan)
        for k, (row, faces) in enumerate(zip(self.temps, self.skin_face)):
            face = faces[element]
            if face is not None:
                out[k] = row[element][0] if face is Face.WARM else row[element][1]
        return out

    def flips(self, element: int) -> list[float]:
        return [a.t_s for a in self.actions if a.element == element and a.action == StartFlip.name]


def dispatch(backend: DeviceBackend, element: int, action: Action) -> None:
    if isinstance(action, SetVoltage):
        backend.apply_voltage(element, action.volts)
    elif isinstance(action, StartFlip):
        backend.start_flip(element)
    elif isinstance(action, Stop):
        backend.apply_voltage(element, 0.0)
    else:
        raise TypeError(f"unknown action {action!r}")


class ClosedLoop:
    """Runs the array controller against a backend one tick at a time.

    The clock is only consulted for the tick times; with a :class:`SimClock`
    the whole loop is deterministic.
    """

    def __init__(self, backend: DeviceBackend, clock, config: ControllerConfig | None = None,
                 states: Sequence[ElementState] | None = None):
        self.backend = backend
        self.clock = clock
        self.config = config or ControllerConfig()
        self.states = list(states) if states is not None else fresh_array(self.config)
        self.trace = ExecutionTrace(self.config.tick_period)
        self.ticks = 0

    @property
    def now(self) -> float:
        return self.ticks * self.config.tick_period

    def step(self, commands: Mapping[int, Sequence[Sensation]] | None = None) -> list[list[Action]]:
        """Apply ``commands`` (element -> sensations in order) and run one tick."""
        now = self.now
        self.clock.wait_until(now)
        sensors = [self.backend.read_temps(i) for i in range(N_ELEMENTS)]
        states = list(self.states)
        early: dict[int, list[Action]] = {}
        last: dict[int, Sensation] = {}
        for elem, seq in (commands or {}).items():
            seq = list(seq)
            if not seq:
                continue
            for s in seq[:-1]:
                try:
                    states[elem], acts = command_sensation(states[elem], self.config, s, now)
                    early.setdefault(elem, []).extend(acts)
                except Exception as exc:  # noqa: BLE001 - logged into the trace
                    self.trace.errors.append(f"t={now:.6f} element {elem}: {exc}")
            last[elem] = seq[-1]
        try:
            states, actions = coordinate_array(states, self.config, last, sensors, now)
        except ArrayControlError as exc:
            states, actions = exc.states, exc.actions
            for elem, err in sorted(exc.errors.items()):
                self.trace.errors.append(f"t={now:.6f} element {elem}: {err}")
        for elem, acts in early.items():
            actions[elem] = acts + actions[elem]

        self.states = states
        tr = self.trace
        tr.t.append(now)
        tr.temps.append(sensors)
        for elem, acts in enumerate(actions):
            for a in acts:
                dispatch(self.backend, elem, a)
                tr.actions.append(ActionRecord(now, elem, a.name, a.arg))
        tr.voltage.append([s.drive_voltage for s in states])
        tr.contact.append([s.rotation is None for s in states])
        tr.skin_face.append([None if s.rotation is not None else s.orientation for s in states])
        self.ticks += 1
        return actions
