import math
import pickle

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cavitycool import analysis as A
from cavitycool import forces as F
from cavitycool.dynamics import (AtomState, Launch, ScheduleSpec, ThermalWell, TrajectorySpec,
                                 default_timestep, run_ensemble, run_trajectory, step, stream,
                                 survival_data)
from cavitycool.model import Geometry, SystemParams, trap_frequencies
from cavitycool.units import KB, mhz_to_rad

from oracles import forces as oracle_forces

REST = AtomState((0.0, 0.0, 0.0), (0.0, 0.0, 0.0))


def _harmonic_energy(rec, omega, m, dt=0.0):
    """Energy per sample; with ``dt`` the velocity-Verlet shadow energy
    1/2 m v^2 + 1/2 m omega^2 (1 - omega^2 dt^2 / 4) x^2, which the scheme
    conserves exactly for a harmonic force."""
    x = rec.samples[:, 1:4]
    v = rec.samples[:, 4:7]
    w2 = omega ** 2 * (1.0 - omega ** 2 * dt ** 2 / 4.0)
    return 0.5 * m * np.sum(v * v, axis=1) + 0.5 * m * np.sum(w2 * x * x, axis=1)


# --- integrator quality ---------------------------------------------------------

def test_symplectic_energy_drift_harmonic(params, geometry):
    nu = 100e3
    omega = np.full(3, 2 * math.pi * nu) * np.array([1.0, 1.37, 0.61])
    dt = 1.0 / (50 * nu * 1.37)
    periods = 1000
    duration = periods / nu
    start = AtomState((1e-7, -2e-7, 3e-7), (0.01, 0.02, -0.015))
    rec = run_trajectory(start, params, geometry, ScheduleSpec(duration), dt=dt,
                         harmonic=(omega, np.zeros(3), np.zeros(3)), stride=1, blinking=False)
    assert rec.samples[-1, 0] >= 0.999 * duration
    shadow = _harmonic_energy(rec, omega, params.mass, dt)
    assert np.max(np.abs(shadow / shadow[0] - 1.0)) < 1e-6
    # the plain energy only oscillates at O((omega dt)^2), without secular growth
    e = _harmonic_energy(rec, omega, params.mass)
    assert np.max(np.abs(e / e[0] - 1.0)) < (omega.max() * dt) ** 2


def test_friction_decay_along_pump_axis():
    """Free atom (all traps and Stark shift removed) moving along the pump."""
    p = SystemParams(u_sw=0.0, u_ic=0.0, stark_max=0.0, delta_a=mhz_to_rad(100.0))
    p = p.with_(delta_c=p.kappa)
    g = Geometry()
    e = np.asarray(g.axis_pump)
    v0 = 1e-3
    ref = oracle_forces(p, g, (0.0, 0.0, 0.0), e * v0)
    beta = -float(sum(float(f) * c for f, c in zip(ref["f_pump"], e))) / (p.mass * v0)
    duration = 5.0 / beta
    dt = 20e-9
    rec = run_trajectory(AtomState((0, 0, 0), tuple(e * v0)), p, g, ScheduleSpec(duration),
                         dt=dt, check_dt=False, noise=0.0, blinking=False, stride=2000)
    t = rec.samples[:, 0]
    ke = np.sum(rec.samples[:, 4:7] ** 2, axis=1) / v0 ** 2
    expected = np.exp(-2.0 * beta * t)
    assert np.max(np.abs(ke / expected - 1.0)) < 0.02


def test_parametric_resonance_growth(params, geometry):
    """Depth modulated at 2 nu_sw: energy grows at the Mathieu rate eps omega / 2."""
    nu = trap_frequencies(params, geometry).nu_sw
    w = 2 * math.pi * nu
    eps = 0.3
    duration = 6e-6
    k = 2.0 * params.u_sw * params.k_trap() ** 2
    start = AtomState((5e-9, 0.0, 0.0), (0.0, 0.0, 0.0))

    def energy(mod_freq):
        sched = ScheduleSpec(duration, mod_eps=eps, mod_freq=mod_freq, pump_windows=())
        rec = run_trajectory(start, params, geometry, sched, friction=0.0, noise=0.0, stride=1)
        x, v = rec.samples[:, 1], rec.samples[:, 4]
        return rec.samples[:, 0], 0.5 * params.mass * v * v + 0.5 * k * x * x

    t, e_res = energy(2 * nu)
    _, e_off = energy(2.7 * nu)
    slope = np.polyfit(t, np.log(e_res), 1)[0]
    assert slope == pytest.approx(eps * w / 2.0, rel=0.15)
    assert e_res[-1] / e_res[0] > 20.0
    assert e_off.max() / e_off[0] < 3.0


def test_equipartition_constant_friction_and_diffusion(params, geometry):
    omega = np.full(3, 2 * math.pi * 10e3)
    beta = np.full(3, 2e4)
    temperature = 100e-6
    d = beta * params.mass * KB * temperature
    dt = 0.5e-6
    rec = run_trajectory(REST, params, geometry, ScheduleSpec(1.0), 3, dt=dt,
                         harmonic=(omega, beta, d), stride=10, blinking=False)
    v = rec.samples[rec.samples[:, 0] > 1e-3, 4:7]
    kt = params.mass * np.mean(v * v)
    assert kt == pytest.approx(KB * temperature, rel=0.05)


@pytest.mark.slow
def test_bright_fraction_long_run(params, geometry):
    rec = run_trajectory(REST, params, geometry, ScheduleSpec(4.0), 11, friction=0.0, noise=0.0)
    frac = rec.rates[:, 1].sum() / rec.rates[:, 2].sum()
    assert frac == pytest.approx(params.duty_bright, rel=0.01)


def test_dark_periods_have_no_scattering(params, geometry):
    rec = run_trajectory(REST, params, geometry, ScheduleSpec(2e-4), 5, stride=1)
    dark = rec.samples[:, 8] == 0
    assert dark.any() and (~dark).any()
    assert np.all(rec.samples[dark, 7] == 0.0)
    assert np.all(rec.samples[~dark, 7] > 0.0)


def test_rest_at_origin_stays_trapped(params, geometry):
    sched = ScheduleSpec(2e-3, pump_windows=())
    rec = run_trajectory(REST, params, geometry, sched, noise=0.0)
    assert rec.survived
    assert np.max(np.abs(rec.samples[:, 1:7])) == 0.0


def test_timestep_limit_enforced(params, geometry):
    with pytest.raises(ValueError, match="dt"):
        run_trajectory(REST, params, geometry, ScheduleSpec(1e-5), dt=40e-9)
    assert 28e-9 <= default_timestep(params, geometry) <= 30e-9


def test_single_step_matches_trajectory(params, geometry):
    start = AtomState((1e-8, 2e-8, -3e-8), (0.01, 0.0, 0.02))
    dt = default_timestep(params, geometry)
    a = step(start, params, geometry, ScheduleSpec(1e-3), dt, np.random.default_rng(0),
             noise=0.0, blinking=False)
    rec = run_trajectory(start, params, geometry, ScheduleSpec(dt), dt=dt, noise=0.0,
                         blinking=False)
    assert np.array_equal(a.position, rec.final.position)
    assert a.t == pytest.approx(dt)


def test_non_finite_state_rejected():
    with pytest.raises(ValueError):
        AtomState((np.nan, 0, 0), (0, 0, 0))


@pytest.mark.parametrize("kwargs", [
    {"mod_eps": 1.0}, {"mod_eps": -0.1}, {"pump_windows": ((0.0, 2.0),)},
    {"filter_start": 0.5, "filter_duration": 0.6}, {"filter_start": 0.1, "filter_duration": 1e-4},
])
def test_schedule_invariants(kwargs):
    with pytest.raises(ValueError):
        ScheduleSpec(1.0, **kwargs)


def test_schedule_filter_ramp():
    s = ScheduleSpec(1.0, filter_start=0.1, filter_duration=0.01, ramp=1e-3, filter_floor=0.0)
    assert s.trap_factor(0.05) == 1.0
    assert s.trap_factor(0.1 + 0.5e-3) == pytest.approx(0.5)
    assert s.trap_factor(0.105) == 0.0
    assert s.trap_factor(0.11 - 0.5e-3) == pytest.approx(0.5)
    assert s.trap_factor(0.2) == 1.0


@given(st.floats(0.0, 0.99), st.floats(1.0, 1e5), st.floats(0.0, 1.0))
def test_schedule_modulation(eps, f, t):
    s = ScheduleSpec(1.0, mod_eps=eps, mod_freq=f)
    assert s.trap_factor(t) == pytest.approx(1.0 + eps * math.sin(2 * math.pi * f * t), abs=1e-12)


def test_filter_protocol_events(params, geometry):
    sched = ScheduleSpec(1e-3, filter_start=2e-4, filter_duration=5e-4, ramp=1e-4)
    rec = run_trajectory(ThermalWell(20e-6), params, geometry, sched, 2)
    names = [e["event"] for e in rec.events]
    assert names[:2] == ["filter_start", "filter_end"] or "filter_start" in names
    times = [e["t"] for e in rec.events]
    assert times == sorted(times)
    assert sum(e["event"] == "loss" for e in rec.events) <= 1


def test_event_log_order_and_single_loss(params, geometry):
    rec = run_trajectory(Launch(start_well=-4), params.with_(delta_c=mhz_to_rad(2.0)), geometry,
                         ScheduleSpec(2e-4), 0)
    times = [e["t"] for e in rec.events]
    assert all(a < b for a, b in zip(times, times[1:]))
    assert sum(e["event"] == "loss" for e in rec.events) <= 1


def test_launch_point_and_direction(params, geometry):
    st_ = Launch(start_well=-4).sample(params, geometry, np.random.default_rng(1))
    assert st_.position[0] == pytest.approx(-4 * params.lambda_trap / 2, abs=1e-6)
    assert st_.velocity[0] > 0.0
    ke = 0.5 * params.mass * st_.velocity[0] ** 2
    assert ke > params.u_sw + params.u_ic


def test_thermal_well_temperature(params, geometry):
    rng = np.random.default_rng(9)
    v = np.array([ThermalWell(50e-6).sample(params, geometry, rng).velocity for _ in range(4000)])
    assert params.mass * v.var(axis=0).mean() / KB == pytest.approx(50e-6, rel=0.05)


# --- ensembles and determinism -----------------------------------------------------------

def _spec(params, geometry, duration=2e-4):
    return TrajectorySpec(ThermalWell(100e-6), params.with_(delta_c=params.kappa), geometry,
                          ScheduleSpec(duration))


def _key(rec):
    return pickle.dumps((rec.samples.tobytes(), rec.rates.tobytes(), rec.final, rec.events,
                         rec.lost_at, rec.captured_at))


def test_ensemble_bitwise_reproducible(params, geometry):
    spec = _spec(params, geometry)
    a = run_ensemble(4, spec, 21)
    b = run_ensemble(4, spec, 21)
    assert [_key(r) for r in a] == [_key(r) for r in b]


def test_ensemble_independent_of_workers_and_order(params, geometry):
    spec = _spec(params, geometry)
    serial = run_ensemble(4, spec, 8)
    parallel = run_ensemble(4, spec, 8, workers=2)
    assert [_key(r) for r in serial] == [_key(r) for r in parallel]
    tail = run_ensemble(2, spec, 8, start=2)
    assert [_key(r) for r in tail] == [_key(r) for r in serial[2:]]


def test_streams_are_distinct():
    a = stream(0, 0, 0).random(4)
    assert not np.array_equal(a, stream(0, 1, 0).random(4))
    assert not np.array_equal(a, stream(0, 0, 1).random(4))
    assert not np.array_equal(a, stream(1, 0, 0).random(4))
    assert np.array_equal(a, stream(0, 0, 0).random(4))


def test_ensemble_size_validated(params, geometry):
    with pytest.raises(ValueError):
        run_ensemble(0, _spec(params, geometry), 0)


def test_background_loss_closure(params, geometry):
    """Pump off, loss rate 1/2.7 s: exponential survival with the configured mean."""
    p = params.with_(loss_rate=1.0 / 2.7)
    spec = TrajectorySpec(ThermalWell(100e-6), p, geometry, ScheduleSpec(6.0, pump_windows=()))
    recs = run_ensemble(50, spec, 4)
    assert all(r.fast_forward_at is not None for r in recs)
    est = A.estimate_lifetime(*survival_data(recs))
    assert est.lifetime == pytest.approx(2.7, rel=0.15)
    assert all(r.loss_reason in (None, "background") for r in recs)


def test_filter_loss_timestep_convergence(params, geometry):
    """Lifetime under the filter protocol (noise and pump off, so every loss
    time is a smooth function of the initial state) is converged in dt."""
    sched = ScheduleSpec(1e-3, filter_start=1e-4, filter_duration=8e-4, ramp=1e-4,
                         filter_floor=0.0, pump_windows=())
    dt = default_timestep(params, geometry)
    taus = []
    for h in (dt, dt / 2):
        spec = TrajectorySpec(ThermalWell(100e-6), params, geometry, sched, h, {"noise": 0.0})
        times, lost = survival_data(run_ensemble(40, spec, 6))
        assert lost.sum() >= 20
        taus.append(A.estimate_lifetime(times, lost).lifetime)
    assert abs(taus[1] - taus[0]) / taus[0] < 0.05


@pytest.mark.slow
def test_pump_on_storage_self_consistent(params, geometry):
    """Pump on at Delta_C = 0, no modulation: censoring the same ensemble at
    half the run length gives a lifetime consistent with the full record."""
    spec = TrajectorySpec(ThermalWell(100e-6), params, geometry, ScheduleSpec(0.03))
    recs = run_ensemble(50, spec, 13)
    times, lost = survival_data(recs)
    full = A.estimate_lifetime(times, lost)
    cut = 0.5 * times.max()
    half = A.estimate_lifetime(np.minimum(times, cut), lost & (times <= cut))
    assert lost.sum() >= 40
    assert half.ci_low <= full.lifetime <= half.ci_high or full.ci_low <= half.lifetime <= full.ci_high
