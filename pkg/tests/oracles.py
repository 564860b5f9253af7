"""Independent reference implementations used to check the package.

Nothing here imports the code under test's internals; each oracle is written
from the physics or the standard it checks.
"""

from __future__ import annotations

import math

ZERO_C = 273.15


def face_heat_flows(tw, tc, *, alpha, resistance, conductance, ambient_cond, skin_cond,
                    skin_temp, ambient_temp, volts, contact):
    """Heat flowing into each face, term by term (W). ``contact`` is None, 'warm' or 'cold'."""
    current = (volts - alpha * (tw - tc)) / resistance
    joule = current ** 2 * resistance
    terms_w = {
        "peltier": alpha * current * (tw + ZERO_C),
        "joule": joule / 2,
        "conduction": -conductance * (tw - tc),
        "ambient": ambient_cond * (ambient_temp - tw),
        "skin": skin_cond * (skin_temp - tw) if contact == "warm" else 0.0,
    }
    terms_c = {
        "peltier": -alpha * current * (tc + ZERO_C),
        "joule": joule / 2,
        "conduction": conductance * (tw - tc),
        "ambient": ambient_cond * (ambient_temp - tc),
        "skin": skin_cond * (skin_temp - tc) if contact == "cold" else 0.0,
    }
    return terms_w, terms_c, current


def derivatives_oracle(tw, tc, params, volts, contact=None):
    cw, cc = params.capacities
    terms_w, terms_c, _ = face_heat_flows(
        tw, tc, alpha=params.seebeck_alpha, resistance=params.resistance,
        conductance=params.internal_conductance, ambient_cond=params.ambient_conductance,
        skin_cond=params.skin_conductance, skin_temp=params.skin_temp,
        ambient_temp=params.ambient_temp, volts=volts, contact=contact)
    return math.fsum(terms_w.values()) / cw, math.fsum(terms_c.values()) / cc


def euler_reference(params, volts, tw, tc, duration, dt, substeps=1000, contact=None):
    """Forward Euler with ``substeps`` per ``dt``; returns samples on the ``dt`` grid."""
    h = dt / substeps
    out = [(tw, tc)]
    for _ in range(int(round(duration / dt))):
        for _ in range(substeps):
            dw, dc = derivatives_oracle(tw, tc, params, volts, contact)
            tw, tc = tw + h * dw, tc + h * dc
        out.append((tw, tc))
    return out


def rk4_reference(params, volts, tw, tc, duration, dt, contact=None):
    """Plain-Python classical RK4, used as the fine-step reference for convergence."""
    f = lambda a, b: derivatives_oracle(a, b, params, volts, contact)  # noqa: E731
    out = [(tw, tc)]
    for _ in range(int(round(duration / dt))):
        k1 = f(tw, tc)
        k2 = f(tw + dt / 2 * k1[0], tc + dt / 2 * k1[1])
        k3 = f(tw + dt / 2 * k2[0], tc + dt / 2 * k2[1])
        k4 = f(tw + dt * k3[0], tc + dt * k3[1])
        tw += dt / 6 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
        tc += dt / 6 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
        out.append((tw, tc))
    return out


def crc16_ccitt_false(data: bytes) -> int:
    """Bit-at-a-time CRC-16/CCITT-FALSE: poly 0x1021, init 0xFFFF, no reflection, no xorout."""
    crc = 0xFFFF
    for byte in data:
        crc ^= byte << 8
        for _ in range(8):
            crc = ((crc << 1) ^ 0x1021) if crc & 0x8000 else (crc << 1)
            crc &= 0xFFFF
    return crc


def linear_crossing(t0, y0, t1, y1, level):
    return t0 + (level - y0) * (t1 - t0) / (y1 - y0)
