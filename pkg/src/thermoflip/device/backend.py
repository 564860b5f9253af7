"""Device backends: the simulated array, a frame-level emulator, and the wire client."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Protocol, Sequence

import numpy as np

from .. import _kernel
from ..thermal import DEFAULT_DT, V_MAX, V_MIN, Face, PeltierParams, ThermalState, _check_dt
from . import protocol as proto

log = logging.getLogger(__name__)

N_ELEMENTS = proto.N_ELEMENTS
DEFAULT_NOISE_SIGMA = 0.1
DEFAULT_ROTATION_LATENCY = 0.6
_GRID_TOL = 1e-9


class DeviceIOError(IOError):
    pass


class DeviceBackend(Protocol):
    def apply_voltage(self, element: int, volts: float) -> None: ...
    def start_flip(self, element: int) -> None: ...
    def read_temps(self, element: int) -> tuple[float, float]: ...
    def stop_all(self) -> None: ...


def clamp_voltage(volts: float) -> float:
    return min(max(float(volts), V_MIN), V_MAX)


@dataclass
class _Element:
    params: np.ndarray
    tw: float
    tc: float
    voltage: float = 0.0
    skin_face: Face = Face.COLD
    rotation_end: int | None = None  # step index at which the flip completes

    @property
    def contact_code(self) -> int:
        if self.rotation_end is not None:
            return _kernel.NO_CONTACT
        return _kernel.CONTACT_WARM if self.skin_face is Face.WARM else _kernel.CONTACT_COLD


class SimulatedBackend:
    """Eight independent thermal-model plants behind the backend interface.

    Side A of every element is its warm face. Flips take ``rotation_latency``
    of simulated time, during which neither face touches the skin; the
    completion time is rounded up to the integration grid. Sensor noise is
    off unless ``noise_sigma`` is given.
    """

    def __init__(self, params: PeltierParams | Sequence[PeltierParams],
                 rotation_latency: float = DEFAULT_ROTATION_LATENCY, dt: float = DEFAULT_DT,
                 noise_sigma: float = 0.0, seed: int = 0, skin_face: Face = Face.COLD,
                 initial: Sequence[ThermalState] | None = None):
        _check_dt(dt)
        if isinstance(params, PeltierParams):
            params = [params] * N_ELEMENTS
        if len(params) != N_ELEMENTS:
            raise ValueError(f"need {N_ELEMENTS} parameter sets, got {len(params)}")
        if rotation_latency <= 0:
            raise ValueError("rotation_latency must be > 0")
        if noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        self.params = list(params)
        self.dt = float(dt)
        self.rotation_steps = int(np.ceil(rotation_latency / dt - _GRID_TOL))
        self.noise_sigma = float(noise_sigma)
        self._rng = np.random.default_rng(seed)
        self.step_count = 0
        self._buf_w = np.empty(2)
        self._buf_c = np.empty(2)
        self.elements = []
        for i, p in enumerate(self.params):
            s = initial[i] if initial is not None else ThermalState.at_ambient(p)
            self.elements.append(_Element(p.as_array(), s.temp_warm_side, s.temp_cold_side,
                                          skin_face=Face(skin_face)))

    @property
    def time(self) -> float:
        return self.step_count * self.dt

    def _check(self, element: int) -> _Element:
        if not 0 <= element < N_ELEMENTS:
            raise ValueError(f"element id must be 0-{N_ELEMENTS - 1}, got {element}")
        return self.elements[element]

    def apply_voltage(self, element: int, volts: float) -> None:
        self._check(element).voltage = clamp_voltage(volts)

    def start_flip(self, element: int) -> None:
        el = self._check(element)
        if el.rotation_end is not None:
            raise DeviceIOError(f"element {element} is already rotating")
        el.rotation_end = self.step_count + self.rotation_steps

    def read_temps(self, element: int) -> tuple[float, float]:
        el = self._check(element)
        a, b = el.tw, el.tc
        if self.noise_sigma > 0:
            na, nb = self._rng.normal(0.0, self.noise_sigma, 2)
            a, b = a + na, b + nb
        return float(a), float(b)

    def stop_all(self) -> None:
        for el in self.elements:
            el.voltage = 0.0

    def skin_face(self, element: int) -> Face:
        return self._check(element).skin_face

    def rotating(self, element: int) -> bool:
        return self._check(element).rotation_end is not None

    def skin_temp(self, element: int) -> float:
        """True temperature of the skin-facing face (noise-free)."""
        el = self._check(element)
        return el.tw if el.skin_face is Face.WARM else el.tc

    def state(self, element: int) -> ThermalState:
        el = self._check(element)
        return ThermalState(self.time, el.tw, el.tc)

    def advance(self, dt: float) -> None:
        if not dt > 0:
            raise ValueError(f"advance needs dt > 0, got {dt!r}")
        n = int(round(dt / self.dt))
        if n < 1 or abs(n * self.dt - dt) > _GRID_TOL * max(1.0, dt):
            raise ValueError(f"advance({dt}) is not a multiple of the backend step {self.dt}")
        end = self.step_count + n
        for idx, el in enumerate(self.elements):
            k = self.step_count
            while k < end:
                stop = end
                if el.rotation_end is not None and el.rotation_end < end:
                    stop = max(el.rotation_end, k)
                if stop > k:
                    self._integrate(idx, el, stop - k, k)
                    k = stop
                if el.rotation_end is not None and el.rotation_end <= k:
                    el.skin_face = el.skin_face.other
                    el.rotation_end = None
        self.step_count = end

    def _integrate(self, idx: int, el: _Element, n: int, k0: int) -> None:
        bw, bc = self._buf_w, self._buf_c
        if len(bw) < n + 1:
            bw = self._buf_w = np.empty(n + 1)
            bc = self._buf_c = np.empty(n + 1)
        bw[0] = el.tw
        bc[0] = el.tc
        bad = _kernel.integrate(el.params, el.voltage, el.contact_code, self.dt, 0, n, bw, bc)
        if bad >= 0:
            raise DeviceIOError(f"element {idx}: simulated plant blew up at t={(k0 + bad) * self.dt:.3f} s")
        el.tw = float(bw[n])
        el.tc = float(bc[n])


class DeviceEmulator:
    """Answers wire frames by driving a backend, like the array firmware would."""

    def __init__(self, backend: SimulatedBackend):
        self.backend = backend
        self.decoder = proto.FrameDecoder()

    def handle(self, frame: proto.Frame) -> bytes:
        cmd, el = frame.command, frame.element
        if cmd is proto.Command.STOP_ALL:
            self.backend.stop_all()
            return proto.ack(el, cmd)
        if cmd not in (proto.Command.SET_VOLTAGE, proto.Command.START_FLIP, proto.Command.READ_TEMPS):
            return proto.nak(el, cmd, proto.NakReason.UNSUPPORTED)
        if el == proto.BROADCAST:
            return proto.nak(el, cmd, proto.NakReason.BAD_ELEMENT)
        try:
            if cmd is proto.Command.SET_VOLTAGE:
                self.backend.apply_voltage(el, proto.parse_voltage(frame.payload))
                return proto.ack(el, cmd)
            if cmd is proto.Command.START_FLIP:
                self.backend.start_flip(el)
                return proto.ack(el, cmd)
            a, b = self.backend.read_temps(el)
            return proto.encode_frame(proto.Command.TEMPS_REPLY, el, proto.temps_payload(a, b))
        except proto.ProtocolError:
            return proto.nak(el, cmd, proto.NakReason.BAD_PAYLOAD)
        except DeviceIOError:
            return proto.nak(el, cmd, proto.NakReason.DEVICE_ERROR)

    def receive(self, data: bytes) -> bytes:
        return b"".join(self.handle(f) for f in self.decoder.feed(data))


class LoopbackTransport:
    """In-memory transport wiring a client straight to an emulator."""

    def __init__(self, emulator: DeviceEmulator):
        self.emulator = emulator
        self._rx = bytearray()

    def write(self, data: bytes) -> None:
        self._rx += self.emulator.receive(data)

    def read(self, size: int) -> bytes:
        out = bytes(self._rx[:size])
        del self._rx[:size]
        return out


class WireBackend:
    """Backend client speaking the frame protocol over a byte transport.

    The transport needs ``write(bytes)`` and ``read(n) -> bytes`` (a serial
    port object fits). Every request waits for its reply; NAK or a missing
    reply raises DeviceIOError. Temperatures come back in 0.01 K steps.
    """

    def __init__(self, transport, max_reads: int = 64):
        self.transport = transport
        self.max_reads = max_reads
        self._decoder = proto.FrameDecoder()
        self._queue: list[proto.Frame] = []

    def _request(self, frame: bytes, expect: proto.Command, element: int) -> proto.Frame:
        self.transport.write(frame)
        for _ in range(self.max_reads):
            if self._queue:
                reply = self._queue.pop(0)
                if reply.command is proto.Command.NAK:
                    reason = reply.payload[1] if len(reply.payload) > 1 else None
                    raise DeviceIOError(f"device NAK for element {element}, reason {reason}")
                if reply.command is expect and reply.element == element:
                    return reply
                log.warning("dropping unexpected reply %s", reply)
                continue
            chunk = self.transport.read(64)
            if not chunk:
                break
            self._queue.extend(self._decoder.feed(chunk))
        raise DeviceIOError(f"no reply to {frame.hex()}")

    def apply_voltage(self, element: int, volts: float) -> None:
        self._request(proto.set_voltage(element, clamp_voltage(volts)), proto.Command.ACK, element)

    def start_flip(self, element: int) -> None:
        self._request(proto.start_flip(element), proto.Command.ACK, element)

    def read_temps(self, element: int) -> tuple[float, float]:
        reply = self._request(proto.read_temps(element), proto.Command.TEMPS_REPLY, element)
        return proto.parse_temps(reply.payload)

    def stop_all(self) -> None:
        self._request(proto.stop_all(), proto.Command.ACK, proto.BROADCAST)
