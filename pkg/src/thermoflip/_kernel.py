"""Compiled inner loops for the two-node Peltier model.

Every simulation path in the package (single steps, full runs, the
simulated device backend, the calibration loss) goes through these
functions so that results are bit-identical between them.

Parameter vector layout (``p``), all floats::

    0 seebeck_alpha      V/K
    1 resistance         ohm
    2 internal_cond      W/K
    3 cap_warm           J/K
    4 cap_cold           J/K
    5 ambient_cond       W/K   (per side)
    6 skin_cond          W/K
    7 skin_temp          degC
    8 ambient_temp       degC

Contact code: 0 = no skin contact, 1 = warm face on skin, 2 = cold face on skin.
"""

import numpy as np
from numba import njit

KELVIN = 273.15
T_MIN = -50.0
T_MAX = 150.0

NO_CONTACT = 0
CONTACT_WARM = 1
CONTACT_COLD = 2


@njit(cache=True, nogil=True)
def rhs(tw, tc, p, volts, contact):
    alpha = p[0]
    res = p[1]
    dT = tw - tc
    current = (volts - alpha * dT) / res
    joule_half = 0.5 * current * current * res
    back = p[2] * dT
    q_w = alpha * current * (tw + KELVIN) + joule_half - back - p[5] * (tw - p[8])
    q_c = -alpha * current * (tc + KELVIN) + joule_half + back - p[5] * (tc - p[8])
    if contact == CONTACT_WARM:
        q_w -= p[6] * (tw - p[7])
    elif contact == CONTACT_COLD:
        q_c -= p[6] * (tc - p[7])
    return q_w / p[3], q_c / p[4]


@njit(cache=True, nogil=True)
def rk4_step(tw, tc, p, volts, contact, dt):
    k1w, k1c = rhs(tw, tc, p, volts, contact)
    h = 0.5 * dt
    k2w, k2c = rhs(tw + h * k1w, tc + h * k1c, p, volts, contact)
    k3w, k3c = rhs(tw + h * k2w, tc + h * k2c, p, volts, contact)
    k4w, k4c = rhs(tw + dt * k3w, tc + dt * k3c, p, volts, contact)
    s = dt / 6.0
    return (tw + s * (k1w + 2.0 * k2w + 2.0 * k3w + k4w),
            tc + s * (k1c + 2.0 * k2c + 2.0 * k3c + k4c))


@njit(cache=True, nogil=True)
def in_range(tw, tc):
    # NaN fails both comparisons
    return T_MIN <= tw <= T_MAX and T_MIN <= tc <= T_MAX


@njit(cache=True, nogil=True)
def integrate(p, volts, contact, dt, start, n, out_w, out_c):
    """Fill ``out[start+1 : start+n+1]`` from ``out[start]``.

    Returns -1 on success, otherwise the sample index whose state left the
    valid temperature range (that sample is still written).
    """
    tw = out_w[start]
    tc = out_c[start]
    for i in range(start + 1, start + n + 1):
        tw, tc = rk4_step(tw, tc, p, volts, contact, dt)
        out_w[i] = tw
        out_c[i] = tc
        if not in_range(tw, tc):
            return i
    return -1


@njit(cache=True, nogil=True)
def crossing_time(t0, y0, y1, level, dt):
    return t0 + (level - y0) / (y1 - y0) * dt


@njit(cache=True, nogil=True)
def scan_lifetime(t, warm, cold, ambient, eps, target):
    """Return (lifetime, time_to_target, max_warm); NaN marks absence."""
    n = t.shape[0]
    lifetime = np.nan
    to_target = np.nan
    max_warm = -np.inf
    dipped = False
    for i in range(n):
        w = warm[i]
        if w > max_warm:
            max_warm = w
        if np.isnan(to_target) and w >= target:
            if i == 0:
                to_target = t[0]
            else:
                to_target = crossing_time(t[i - 1], warm[i - 1], w, target, t[i] - t[i - 1])
        c = cold[i]
        if not dipped:
            if c < ambient - eps:
                dipped = True
        elif np.isnan(lifetime) and c > ambient:
            lifetime = crossing_time(t[i - 1], cold[i - 1], c, ambient, t[i] - t[i - 1])
    return lifetime, to_target, max_warm


@njit(cache=True, nogil=True)
def run_until_lifetime(p, volts, dt, n, eps, target):
    """Constant-voltage bench run from ambient that stops at the lifetime crossing.

    Produces the same crossing arithmetic as ``integrate`` followed by
    ``scan_lifetime`` on the stored series. Returns (lifetime, time_to_target,
    status) with status -1 on success or the blow-up sample index.
    """
    ambient = p[8]
    tw = ambient
    tc = ambient
    t_prev = 0.0
    to_target = np.nan
    if tw >= target:
        to_target = 0.0
    dipped = False
    for i in range(1, n + 1):
        nw, nc = rk4_step(tw, tc, p, volts, NO_CONTACT, dt)
        if not in_range(nw, nc):
            return np.nan, to_target, i
        t_i = i * dt
        if np.isnan(to_target) and nw >= target:
            to_target = crossing_time(t_prev, tw, nw, target, t_i - t_prev)
        if not dipped:
            if nc < ambient - eps:
                dipped = True
        elif nc > ambient:
            return crossing_time(t_prev, tc, nc, ambient, t_i - t_prev), to_target, -1
        tw = nw
        tc = nc
        t_prev = t_i
    return np.nan, to_target, -1
