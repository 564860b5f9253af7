import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import derivatives_oracle, euler_reference, face_heat_flows, linear_crossing
from thermoflip.calibration import default_initial_params
from thermoflip.thermal import (BlowUpError, DriveInput, Face, PeltierParams, ThermalState,
                                TimeSeries, bench_lifetime, derivatives, lifetime, simulate, step)


def zero_loss(params):
    return params.replace(ambient_conductance=0.0, skin_conductance=0.0)


# params and state validation

def test_params_reject_nonpositive_resistance():
    with pytest.raises(ValueError):
        PeltierParams(0.02, 0.0, 0.15, 8.0, 0.02)


def test_params_json_round_trip(cal, tmp_path):
    cal.save(tmp_path / "p.json")
    assert PeltierParams.load(tmp_path / "p.json") == cal


def test_asymmetric_capacities_accepted():
    p = PeltierParams(0.02, 4.0, 0.15, (6.0, 9.0), 0.02)
    assert p.capacities == (6.0, 9.0)


def test_drive_voltage_envelope():
    with pytest.raises(ValueError):
        DriveInput(5.5)
    with pytest.raises(ValueError):
        DriveInput(-0.1)


def test_face_other():
    assert Face.WARM.other is Face.COLD and Face.COLD.other is Face.WARM


# derivatives

def test_equilibrium_at_ambient(cal):
    assert derivatives(ThermalState.at_ambient(cal), cal, DriveInput(0.0)) == (0.0, 0.0)


def test_pure_joule_split_evenly():
    p = PeltierParams(0.0, 1.0, 0.1, 10.0, 0.0)
    dw, dc = derivatives(ThermalState(0.0, 25.0, 25.0), p, DriveInput(1.0))
    assert dw == pytest.approx(0.05, abs=1e-15)
    assert dc == pytest.approx(0.05, abs=1e-15)


@pytest.mark.parametrize("contact", [None, "warm", "cold"])
@pytest.mark.parametrize("tw,tc,volts", [(25.0, 25.0, 2.0), (41.3, 18.2, 2.0), (30.0, 27.5, 4.5),
                                         (38.0, 22.0, 0.0)])
def test_derivatives_match_energy_balance_oracle(cal, tw, tc, volts, contact):
    drive = DriveInput(volts, contact=contact is not None, contact_side=contact or "warm")
    got = derivatives(ThermalState(0.0, tw, tc), cal, drive)
    want = derivatives_oracle(tw, tc, cal, volts, contact)
    assert got == pytest.approx(want, rel=1e-12, abs=1e-15)


def test_skin_contact_cools_warm_face(simple_params):
    s = ThermalState(0.0, 40.0, 20.0)
    free = derivatives(s, simple_params, DriveInput(2.0))
    touch = derivatives(s, simple_params, DriveInput(2.0, contact=True, contact_side=Face.WARM))
    assert touch[0] < free[0] and touch[1] == free[1]


@settings(max_examples=200, deadline=None)
@given(tw=st.floats(0, 80), tc=st.floats(0, 80), volts=st.floats(0, 5),
       alpha=st.floats(0.001, 0.1), res=st.floats(0.5, 20), k=st.floats(0.01, 1),
       cw=st.floats(1, 50), cc=st.floats(1, 50))
def test_energy_sanity_without_losses(tw, tc, volts, alpha, res, k, cw, cc):
    p = PeltierParams(alpha, res, k, (cw, cc), 0.0, skin_conductance=0.0)
    dw, dc = derivatives(ThermalState(0.0, tw, tc), p, DriveInput(volts))
    current = (volts - alpha * (tw - tc)) / res
    power = alpha * current * (tw - tc) + current ** 2 * res
    stored = cw * dw + cc * dc
    assert abs(stored - power) <= 1e-6 * max(abs(power), 1e-3)


def test_energy_terms_sum_to_electrical_power():
    tw_terms, tc_terms, i = face_heat_flows(35.0, 20.0, alpha=0.02, resistance=4.0, conductance=0.15,
                                            ambient_cond=0.0, skin_cond=0.0, skin_temp=33.0,
                                            ambient_temp=25.0, volts=2.0, contact=None)
    total = math.fsum(tw_terms.values()) + math.fsum(tc_terms.values())
    assert total == pytest.approx(2.0 * i, rel=1e-12)


# step and integration

def test_step_at_equilibrium_keeps_temperatures(cal):
    s = step(ThermalState(3.0, 25.0, 25.0), cal, DriveInput(0.0), 0.01)
    assert (s.temp_warm_side, s.temp_cold_side) == (25.0, 25.0)
    assert s.time == pytest.approx(3.01)


def test_step_rejects_bad_dt(cal):
    with pytest.raises(ValueError):
        step(ThermalState(0.0, 25, 25), cal, DriveInput(1.0), 0.0)
    with pytest.raises(ValueError):
        step(ThermalState(0.0, 25, 25), cal, DriveInput(1.0), 0.2)


def test_step_blow_up_raises():
    hot = PeltierParams(0.02, 0.5, 0.01, 0.05, 0.0)
    with pytest.raises(BlowUpError):
        s = ThermalState(0.0, 25.0, 25.0)
        for _ in range(10_000):
            s = step(s, hot, DriveInput(5.0), 0.1)


def test_simulate_zero_duration_is_initial_only(cal):
    s = simulate(cal, DriveInput(2.0), 0.0)
    assert len(s) == 1 and s.final == ThermalState(0.0, 25.0, 25.0)


def test_simulate_matches_repeated_step(simple_params):
    d = DriveInput(2.0)
    series = simulate(simple_params, d, 5.0, 0.05)
    s = ThermalState.at_ambient(simple_params)
    for k in range(1, len(series)):
        s = step(s, simple_params, d, 0.05)
        assert (series.temp_warm[k], series.temp_cold[k]) == (s.temp_warm_side, s.temp_cold_side)


def test_simulate_matches_fine_euler_oracle(simple_params):
    ref = euler_reference(simple_params, 2.0, 25.0, 25.0, 1.0, 0.1, substeps=1000)
    got = simulate(simple_params, DriveInput(2.0), 1.0, 0.1)
    err = max(max(abs(a - w), abs(b - c)) for (a, b), w, c in zip(ref, got.temp_warm, got.temp_cold))
    assert err <= 1e-5


def test_linear_relaxation_closed_form():
    # alpha = 0 and V = 0: the face difference decays with rate 2K/C, the mean with G/C
    p = PeltierParams(1e-12, 4.0, 0.1, 10.0, 0.01)
    s = simulate(p, DriveInput(0.0), 20.0, 0.01, initial=ThermalState(0.0, 35.0, 25.0))
    diff = 10.0 * np.exp(-(2 * 0.1 + 0.01) / 10.0 * s.t)
    mean = 25.0 + 5.0 * np.exp(-0.01 / 10.0 * s.t)
    assert np.max(np.abs((s.temp_warm - s.temp_cold) - diff)) < 1e-8
    assert np.max(np.abs(0.5 * (s.temp_warm + s.temp_cold) - mean)) < 1e-8


def test_drive_schedule_breakpoints(simple_params):
    sched = [(1.0, DriveInput(2.0)), (3.0, DriveInput(0.0))]
    s = simulate(simple_params, sched, 5.0, 0.01)
    assert s.voltage[0] == 0 and s.voltage[150] == 2.0 and s.voltage[400] == 0.0
    assert s.temp_warm[100] == 25.0


def test_breakpoint_off_grid_rejected(simple_params):
    with pytest.raises(ValueError):
        simulate(simple_params, [(0.005, DriveInput(2.0))], 1.0, 0.01)


def test_simulate_is_bit_deterministic(cal):
    a = simulate(cal, DriveInput(2.0), 60.0)
    b = simulate(cal, DriveInput(2.0), 60.0)
    assert a.equals(b)


def test_timeseries_rejects_nonuniform_spacing():
    with pytest.raises(ValueError):
        TimeSeries(0.1, [0.0, 0.1, 0.25], [25] * 3, [25] * 3)


def test_calibrated_two_volt_reaches_target_before_cold_side_returns(cal):
    r = lifetime(simulate(cal, DriveInput(2.0), 600.0), cal)
    assert r.time_to_target is not None and r.lifetime is not None
    assert r.time_to_target < r.lifetime


# lifetime detector

def piecewise(points, dt=0.01):
    t = np.round(np.arange(0, points[-1][0] + dt / 2, dt), 10)
    return t, np.interp(t, [p[0] for p in points], [p[1] for p in points])


def synthetic(cold_points, warm_points=None, dt=0.01):
    t, cold = piecewise(cold_points, dt)
    warm = piecewise(warm_points, dt)[1] if warm_points else np.full_like(t, 25.0)
    return TimeSeries(dt, t, warm, cold)


def test_all_ambient_series_has_no_lifetime(cal):
    r = lifetime(simulate(cal, DriveInput(0.0), 30.0), cal)
    assert r.lifetime is None and r.time_to_target is None and r.max_warm_temp == 25.0
    assert not r.target_reached_within_lifetime


def test_piecewise_linear_cold_trace_crossing(cal):
    r = lifetime(synthetic([(0, 25), (10, 20), (50, 30)]), cal)
    assert r.lifetime == pytest.approx(30.0, abs=1e-9)


def test_crossing_between_samples_is_interpolated(cal):
    # coarse grid so the crossing falls strictly inside a sample interval
    s = synthetic([(0, 25), (1, 24), (4, 25.3)], dt=0.5)
    t_cross = linear_crossing(3.5, 24 + 1.3 * 2.5 / 3, 4.0, 25.3, 25.0)
    assert lifetime(s, cal).lifetime == pytest.approx(t_cross, abs=1e-9)


def test_undipped_trace_has_no_lifetime(cal):
    # dips by less than the hysteresis band, then rises
    assert lifetime(synthetic([(0, 25), (5, 24.97), (20, 30)]), cal).lifetime is None


def test_time_to_target_interpolated(cal):
    s = synthetic([(0, 25), (10, 20), (50, 30)], warm_points=[(0, 25), (50, 45)])
    r = lifetime(s, cal)
    assert r.time_to_target == pytest.approx(37.5, abs=1e-9)
    assert r.target_reached_within_lifetime is False
    assert r.max_warm_temp == pytest.approx(45.0)


def test_empty_series_rejected(cal):
    with pytest.raises(ValueError):
        lifetime(TimeSeries.empty(), cal)


def test_bench_lifetime_matches_full_analysis(cal):
    for v in (1.5, 2.0, 3.0):
        r = lifetime(simulate(cal, DriveInput(v), 600.0), cal)
        life, ttt = bench_lifetime(cal, v)
        assert life == r.lifetime
        if r.time_to_target is not None and r.time_to_target <= r.lifetime:
            assert ttt == r.time_to_target


def test_lifetime_monotone_in_voltage(cal):
    lives = [bench_lifetime(cal, v)[0] for v in (2.0, 2.5, 3.0)]
    assert lives[0] > lives[1] > lives[2]


def jitter(base, factors):
    return base.replace(
        seebeck_alpha=base.seebeck_alpha * factors[0], resistance=base.resistance * factors[1],
        internal_conductance=base.internal_conductance * factors[2],
        heat_capacity_side=base.heat_capacity_side * factors[3],
        ambient_conductance=max(base.ambient_conductance * factors[4], 1e-12))


@settings(max_examples=40, deadline=None)
@given(factors=st.lists(st.floats(0.75, 1.35), min_size=5, max_size=5),
       volts=st.floats(1.5, 3.0), which=st.sampled_from(["initial", "calibrated"]))
def test_cold_side_returns_near_shipped_params(cal, factors, volts, which):
    base = cal if which == "calibrated" else default_initial_params()
    life, _ = bench_lifetime(jitter(base, factors), volts, 3600.0, 0.05)
    assert life is not None


def test_strong_heat_sinking_holds_cold_side_indefinitely():
    # a well-sunk element settles as a steady cooler: the cold face never returns
    p = PeltierParams(0.02, 4.0, 0.15, 8.0, 0.2)
    assert bench_lifetime(p, 2.0, 3600.0, 0.05) == (None, None)
    assert simulate(p, DriveInput(2.0), 3600.0, 0.05).final.temp_cold_side < 22.0
