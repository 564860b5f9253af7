"""Per-element sensation controller and the eight-element array coordinator.

An element is *energized* while it is asked for WARM or COOL: the drive is
then regulated bang-bang on the warm face. NEUTRAL parks the element on
``park_face`` and switches the drive off. Which face touches the skin is
changed only by flipping, which takes ``rotation_latency``.

Phases: READY (idle, not energized), CONDITIONING (energized, warm face not
yet at target this cycle), DELIVERING (at target, cold face still below
room temperature or not yet dipped), EXHAUSTED (cold face has come back
above room temperature: no cool left this cycle), FAULT (absorbing).
"""

from __future__ import annotations

import dataclasses
import enum
import math
from dataclasses import dataclass
from typing import Mapping, Sequence

from . import _kernel
from .thermal import (DIP_EPSILON, DriveInput, Face, PeltierParams, ThermalState,
                      simulate)

N_ELEMENTS = 8
_TIME_TOL = 1e-9


class Sensation(str, enum.Enum):
    WARM = "warm"
    NEUTRAL = "neutral"
    COOL = "cool"


class Phase(str, enum.Enum):
    CONDITIONING = "conditioning"
    READY = "ready"
    DELIVERING = "delivering"
    EXHAUSTED = "exhausted"
    FAULT = "fault"


class ContractViolation(ValueError):
    pass


class ElementFaultError(RuntimeError):
    def __init__(self, element_id: int):
        self.element_id = element_id
        super().__init__(f"element {element_id} is in fault and rejects commands")


class ArrayControlError(RuntimeError):
    """One or more elements failed; the rest of the tick still went through."""

    def __init__(self, errors: Mapping[int, Exception], states, actions):
        self.errors = dict(errors)
        self.states = states
        self.actions = actions
        detail = "; ".join(f"element {i}: {e}" for i, e in sorted(self.errors.items()))
        super().__init__(detail)


@dataclass(frozen=True)
class SetVoltage:
    volts: float

    name = "SetVoltage"

    @property
    def arg(self) -> str:
        return f"{self.volts:.3f}"


@dataclass(frozen=True)
class StartFlip:
    target: Face

    name = "StartFlip"

    @property
    def arg(self) -> str:
        return self.target.value


@dataclass(frozen=True)
class Stop:
    name = "Stop"
    arg = ""


Action = SetVoltage | StartFlip | Stop


@dataclass(frozen=True)
class ControllerConfig:
    target_warm_temp: float = 40.0
    hysteresis: float = 0.5
    rotation_latency: float = 0.6
    safety_cutoff_temp: float = 43.0
    drive_voltage_nominal: float = 2.0
    ambient_temp: float = 25.0
    tick_period: float = 0.05
    park_face: Face = Face.COLD
    dip_epsilon: float = DIP_EPSILON
    # >1 shares one thermistor per group of consecutive elements (lead = lowest id)
    sensing_group_size: int = 1

    def __post_init__(self):
        object.__setattr__(self, "park_face", Face(self.park_face))
        if not self.safety_cutoff_temp > self.target_warm_temp > self.ambient_temp:
            raise ValueError("need safety_cutoff_temp > target_warm_temp > ambient_temp")
        if not self.rotation_latency > 0:
            raise ValueError("rotation_latency must be > 0")
        if not self.hysteresis >= 0:
            raise ValueError("hysteresis must be >= 0")
        if not 0 <= self.drive_voltage_nominal <= 5:
            raise ValueError("drive_voltage_nominal must lie in [0, 5] V")
        if not self.tick_period > 0:
            raise ValueError("tick_period must be > 0")
        if self.sensing_group_size < 1 or N_ELEMENTS % self.sensing_group_size:
            raise ValueError(f"sensing_group_size must divide {N_ELEMENTS}")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["park_face"] = self.park_face.value
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "ControllerConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ValueError(f"unknown ControllerConfig fields: {sorted(unknown)}")
        return cls(**data)


@dataclass(frozen=True)
class Rotation:
    start_time: float
    from_face: Face
    to_face: Face


@dataclass(frozen=True)
class ElementState:
    element_id: int
    orientation: Face = Face.COLD
    rotation: Rotation | None = None
    drive_voltage: float = 0.0
    phase: Phase = Phase.READY
    side_temps: tuple[float, float] = (25.0, 25.0)
    elapsed_since_condition: float = 0.0
    sensation: Sensation = Sensation.NEUTRAL
    energized: bool = False
    pending: Sensation | None = None
    last_time: float | None = None
    condition_start: float | None = None
    reached_target: bool = False
    dipped: bool = False

    def __post_init__(self):
        if not 0 <= self.element_id < N_ELEMENTS:
            raise ValueError(f"element_id must be 0-{N_ELEMENTS - 1}")
        if not 0 <= self.drive_voltage <= 5:
            raise ValueError("drive_voltage must lie in [0, 5] V")
        if self.phase is Phase.FAULT and self.drive_voltage != 0:
            raise ValueError("fault phase requires drive_voltage 0")

    @classmethod
    def fresh(cls, element_id: int, config: ControllerConfig | None = None,
              ambient: float | None = None) -> "ElementState":
        config = config or ControllerConfig()
        t = config.ambient_temp if ambient is None else ambient
        return cls(element_id, orientation=config.park_face, side_temps=(t, t))

    @property
    def rotating(self) -> bool:
        return self.rotation is not None

    @property
    def skin_face_temp(self) -> float:
        warm, cold = self.side_temps
        if self.rotation is not None:
            # mid-flip either face may be the one landing on skin
            return max(warm, cold)
        return warm if self.orientation is Face.WARM else cold


def face_for(sensation: Sensation, config: ControllerConfig) -> Face:
    if sensation is Sensation.WARM:
        return Face.WARM
    if sensation is Sensation.COOL:
        return Face.COLD
    return config.park_face


def _check_time(state: ElementState, now: float) -> None:
    if state.last_time is not None and now < state.last_time:
        raise ContractViolation(
            f"element {state.element_id}: time went backwards ({now} < {state.last_time})")


def _settle_rotation(state: ElementState, config: ControllerConfig, now: float) -> ElementState:
    rot = state.rotation
    if rot is not None and now >= rot.start_time + config.rotation_latency - _TIME_TOL:
        return dataclasses.replace(state, orientation=rot.to_face, rotation=None)
    return state


def _apply(state: ElementState, config: ControllerConfig, sensation: Sensation,
           now: float) -> tuple[ElementState, list[Action]]:
    actions: list[Action] = []
    target = face_for(sensation, config)
    if target is not state.orientation:
        actions.append(StartFlip(target))
        state = dataclasses.replace(state, rotation=Rotation(now, state.orientation, target))
    if sensation is Sensation.NEUTRAL:
        if state.drive_voltage != 0:
            actions.append(SetVoltage(0.0))
        state = dataclasses.replace(state, sensation=sensation, energized=False, drive_voltage=0.0,
                                    phase=Phase.READY, elapsed_since_condition=0.0,
                                    condition_start=None)
    elif not state.energized:
        state = dataclasses.replace(state, sensation=sensation, energized=True,
                                    phase=Phase.CONDITIONING, condition_start=now,
                                    reached_target=False, dipped=False)
    else:
        state = dataclasses.replace(state, sensation=sensation)
    return state, actions


def command_sensation(state: ElementState, config: ControllerConfig, sensation: Sensation,
                      now: float) -> tuple[ElementState, list[Action]]:
    """Request a sensation; flips the element if the wrong face is on the skin.

    During a flip the request is held (one slot, newest wins) and applied
    when the flip completes.
    """
    sensation = Sensation(sensation)
    if state.phase is Phase.FAULT:
        raise ElementFaultError(state.element_id)
    _check_time(state, now)
    state = _settle_rotation(state, config, now)
    state = dataclasses.replace(state, last_time=now)
    if state.rotation is not None:
        return dataclasses.replace(state, pending=sensation), []
    return _apply(dataclasses.replace(state, pending=None), config, sensation, now)


def tick(state: ElementState, config: ControllerConfig, sensor: tuple[float, float],
         now: float) -> tuple[ElementState, list[Action]]:
    """One control period: finish flips, run the safety check and regulation.

    ``sensor`` is the (warm face, cold face) reading.
    """
    _check_time(state, now)
    warm, cold = float(sensor[0]), float(sensor[1])
    state = dataclasses.replace(state, side_temps=(warm, cold), last_time=now)
    if state.phase is Phase.FAULT:
        return state, []

    actions: list[Action] = []
    if state.rotation is not None and now >= state.rotation.start_time + config.rotation_latency - _TIME_TOL:
        state = _settle_rotation(state, config, now)
        if state.pending is not None:
            pending = state.pending
            state, actions = _apply(dataclasses.replace(state, pending=None), config, pending, now)

    if state.skin_face_temp > config.safety_cutoff_temp:
        state = dataclasses.replace(state, phase=Phase.FAULT, drive_voltage=0.0, pending=None,
                                    energized=False)
        return state, [Stop()]

    if not state.energized:
        return state, actions

    reached = state.reached_target or warm >= config.target_warm_temp
    dipped = state.dipped or cold < config.ambient_temp - config.dip_epsilon
    if state.phase is Phase.EXHAUSTED or (state.dipped and cold > config.ambient_temp):
        phase = Phase.EXHAUSTED
    elif reached:
        phase = Phase.DELIVERING
    else:
        phase = Phase.CONDITIONING

    volts = state.drive_voltage
    if warm >= config.target_warm_temp + config.hysteresis:
        volts = 0.0
    elif warm <= config.target_warm_temp - config.hysteresis:
        volts = config.drive_voltage_nominal
    if volts != state.drive_voltage:
        actions.append(SetVoltage(volts))
    elapsed = now - state.condition_start if state.condition_start is not None else 0.0
    state = dataclasses.replace(state, drive_voltage=volts, phase=phase, reached_target=reached,
                                dipped=dipped, elapsed_since_condition=elapsed)
    return state, actions


def estimate_remaining_cool_budget(state: ElementState, config: ControllerConfig,
                                   params: PeltierParams, horizon: float = 600.0,
                                   dt: float = 0.01, contact: bool | None = None) -> float:
    """Seconds until the cold face would climb back above room temperature.

    Simulates forward from the element's current face temperatures with its
    current drive held constant. Contact defaults to the element's current
    situation (skin contact unless mid-flip). Returns 0 when the cold face
    is already above room temperature and ``horizon`` when it stays cool
    for the whole horizon.
    """
    warm, cold = state.side_temps
    ambient = config.ambient_temp
    if cold > ambient:
        return 0.0
    if contact is None:
        contact = state.rotation is None
    drive = DriveInput(state.drive_voltage, contact=contact, contact_side=state.orientation)
    series = simulate(params, drive, horizon, dt, initial=ThermalState(0.0, warm, cold))
    eps = 0.0 if state.dipped else config.dip_epsilon
    life, _, _ = _kernel.scan_lifetime(series.t, series.temp_warm, series.temp_cold,
                                       ambient, eps, math.inf)
    return horizon if math.isnan(life) else float(life)


def _group_sensors(sensors: Sequence[tuple[float, float]], group: int) -> list[tuple[float, float]]:
    if group == 1:
        return list(sensors)
    return [sensors[(i // group) * group] for i in range(N_ELEMENTS)]


def coordinate_array(states: Sequence[ElementState], config: ControllerConfig,
                     commands: Mapping[int, Sensation] | Sequence[Sensation | None],
                     sensors: Sequence[tuple[float, float]], now: float,
                     ) -> tuple[list[ElementState], list[list[Action]]]:
    """Apply commands then one tick to every element independently.

    Errors are collected per element; if any occur an ArrayControlError is
    raised carrying the errors together with the updated states and actions
    of all elements. A rejected command does not stop that element's tick.
    """
    if len(states) != N_ELEMENTS or len(sensors) != N_ELEMENTS:
        raise ValueError(f"coordinate_array needs exactly {N_ELEMENTS} states and sensor readings")
    if not isinstance(commands, Mapping):
        commands = {i: c for i, c in enumerate(commands) if c is not None}
    readings = _group_sensors(sensors, config.sensing_group_size)
    new_states: list[ElementState] = []
    all_actions: list[list[Action]] = []
    errors: dict[int, Exception] = {}
    for i, st in enumerate(states):
        acts: list[Action] = []
        if i in commands:
            try:
                st, acts = command_sensation(st, config, commands[i], now)
            except (ContractViolation, ElementFaultError, ValueError) as exc:
                errors[i] = exc
        try:
            st, more = tick(st, config, readings[i], now)
            acts = acts + more
        except ContractViolation as exc:
            errors.setdefault(i, exc)
        new_states.append(st)
        all_actions.append(acts)
    if errors:
        raise ArrayControlError(errors, new_states, all_actions)
    return new_states, all_actions


def fresh_array(config: ControllerConfig | None = None) -> list[ElementState]:
    return [ElementState.fresh(i, config) for i in range(N_ELEMENTS)]
