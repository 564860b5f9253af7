"""Serial frame codec for the element array.

Layout (all single bytes unless noted)::

    0xA5 | version=1 | command | element | payload_len | payload ... | crc16 (big-endian)

The CRC is CRC-16/CCITT-FALSE (poly 0x1021, init 0xFFFF, no reflection,
no final xor) over every byte before it. Payload integers are little-endian:
voltages as unsigned millivolts, temperatures as signed centi-degrees.
"""

from __future__ import annotations

import binascii
import enum
import struct
from dataclasses import dataclass

SYNC = 0xA5
VERSION = 1
BROADCAST = 0xFF
HEADER_LEN = 5
CRC_LEN = 2
MAX_PAYLOAD = 16
N_ELEMENTS = 8


class Command(enum.IntEnum):
    SET_VOLTAGE = 0x01
    START_FLIP = 0x02
    READ_TEMPS = 0x03
    STOP_ALL = 0x04
    TEMPS_REPLY = 0x81
    ACK = 0x82
    NAK = 0x83


class NakReason(enum.IntEnum):
    BAD_ELEMENT = 0x01
    BAD_PAYLOAD = 0x02
    UNSUPPORTED = 0x03
    DEVICE_ERROR = 0x04


class FrameError(ValueError):
    pass


class NeedMoreBytes(FrameError):
    """The buffer holds an incomplete frame; not a corruption."""

    def __init__(self, needed: int):
        self.needed = needed
        super().__init__(f"need {needed} more byte(s)")


class CrcError(FrameError):
    def __init__(self, expected: int, actual: int):
        self.expected = expected
        self.actual = actual
        super().__init__(f"CRC mismatch: expected 0x{expected:04X}, got 0x{actual:04X}")


class ProtocolError(FrameError):
    pass


def crc16(data: bytes) -> int:
    return binascii.crc_hqx(data, 0xFFFF)


@dataclass(frozen=True)
class Frame:
    command: Command
    element: int
    payload: bytes = b""
    version: int = VERSION

    def encode(self) -> bytes:
        return encode_frame(self.command, self.element, self.payload)


def _check_element(element: int) -> None:
    if not (0 <= element < N_ELEMENTS or element == BROADCAST):
        raise ValueError(f"element id must be 0-{N_ELEMENTS - 1} or 0xFF, got {element}")


def encode_frame(command: Command | int, element: int, payload: bytes = b"") -> bytes:
    payload = bytes(payload)
    if len(payload) > MAX_PAYLOAD:
        raise ValueError(f"payload too long: {len(payload)} > {MAX_PAYLOAD}")
    _check_element(element)
    body = bytes([SYNC, VERSION, int(Command(command)), element, len(payload)]) + payload
    return body + crc16(body).to_bytes(2, "big")


def decode_frame(data: bytes) -> tuple[Frame, int]:
    """Decode the frame at the start of ``data``.

    Returns the frame and the number of bytes consumed (leading junk before
    the sync byte included). Raises NeedMoreBytes, CrcError or ProtocolError.
    """
    start = data.find(SYNC)
    if start < 0:
        raise NeedMoreBytes(HEADER_LEN + CRC_LEN)
    buf = memoryview(data)[start:]
    if len(buf) < HEADER_LEN:
        raise NeedMoreBytes(HEADER_LEN - len(buf))
    version, command, element, plen = buf[1], buf[2], buf[3], buf[4]
    if version != VERSION:
        raise ProtocolError(f"unsupported version {version}")
    if plen > MAX_PAYLOAD:
        raise ProtocolError(f"payload length {plen} exceeds {MAX_PAYLOAD}")
    total = HEADER_LEN + plen + CRC_LEN
    if len(buf) < total:
        raise NeedMoreBytes(total - len(buf))
    actual = int.from_bytes(buf[total - 2:total], "big")
    expected = crc16(bytes(buf[:total - 2]))
    if actual != expected:
        raise CrcError(expected, actual)
    try:
        cmd = Command(command)
    except ValueError:
        raise ProtocolError(f"unknown command 0x{command:02X}") from None
    if not (element < N_ELEMENTS or element == BROADCAST):
        raise ProtocolError(f"element id {element} out of range")
    return Frame(cmd, element, bytes(buf[HEADER_LEN:HEADER_LEN + plen])), start + total


class FrameDecoder:
    """Incremental decoder that resynchronises on the sync byte.

    A candidate frame that fails validation only costs its sync byte, so a
    valid frame hidden behind a false sync is still found.
    """

    def __init__(self):
        self._buf = bytearray()
        self.errors: list[FrameError] = []

    def feed(self, data: bytes) -> list[Frame]:
        self._buf += data
        return self._drain(final=False)

    def finish(self) -> list[Frame]:
        """Flush at end of stream; incomplete candidates are skipped."""
        frames = self._drain(final=True)
        self._buf.clear()
        return frames

    @property
    def pending(self) -> int:
        return len(self._buf)

    def _drain(self, final: bool) -> list[Frame]:
        out = []
        buf = self._buf
        pos = 0
        data = bytes(buf)
        while True:
            start = data.find(SYNC, pos)
            if start < 0:
                pos = len(data)
                break
            try:
                frame, used = decode_frame(data[start:start + HEADER_LEN + MAX_PAYLOAD + CRC_LEN])
            except NeedMoreBytes:
                if not final:
                    pos = start
                    break
                pos = start + 1
                continue
            except FrameError as exc:
                self.errors.append(exc)
                pos = start + 1
                continue
            out.append(frame)
            pos = start + used
        del buf[:pos]
        return out


# payload helpers

def voltage_payload(volts: float) -> bytes:
    mv = int(round(volts * 1000.0))
    if not 0 <= mv <= 0xFFFF:
        raise ValueError(f"voltage {volts} V not representable")
    return struct.pack("<H", mv)


def parse_voltage(payload: bytes) -> float:
    if len(payload) != 2:
        raise ProtocolError(f"SET_VOLTAGE payload must be 2 bytes, got {len(payload)}")
    return struct.unpack("<H", payload)[0] / 1000.0


def temps_payload(side_a: float, side_b: float) -> bytes:
    vals = [int(round(x * 100.0)) for x in (side_a, side_b)]
    for v in vals:
        if not -32768 <= v <= 32767:
            raise ValueError(f"temperature {v / 100} degC not representable")
    return struct.pack("<hh", *vals)


def parse_temps(payload: bytes) -> tuple[float, float]:
    if len(payload) != 4:
        raise ProtocolError(f"TEMPS_REPLY payload must be 4 bytes, got {len(payload)}")
    a, b = struct.unpack("<hh", payload)
    return a / 100.0, b / 100.0


def set_voltage(element: int, volts: float) -> bytes:
    return encode_frame(Command.SET_VOLTAGE, element, voltage_payload(volts))


def start_flip(element: int) -> bytes:
    return encode_frame(Command.START_FLIP, element)


def read_temps(element: int) -> bytes:
    return encode_frame(Command.READ_TEMPS, element)


def stop_all() -> bytes:
    return encode_frame(Command.STOP_ALL, BROADCAST)


def ack(element: int, command: Command) -> bytes:
    return encode_frame(Command.ACK, element, bytes([int(command)]))


def nak(element: int, command: int, reason: NakReason) -> bytes:
    return encode_frame(Command.NAK, element, bytes([command & 0xFF, int(reason)]))
