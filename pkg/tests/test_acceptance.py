"""End-to-end acceptance checks.

Each test records one PASS/FAIL line; the lines are printed together in the
terminal summary (see ``conftest.pytest_terminal_summary``).
"""

import math

import numpy as np

from cavitycool import analysis as A
from cavitycool import forces as F
from cavitycool import harness
from cavitycool.config import resolve_default, validate_config
from cavitycool.dynamics import AtomState, ScheduleSpec, run_trajectory
from cavitycool.model import Geometry, SystemParams, sample_fields, trap_frequencies
from cavitycool.units import KB, mhz_to_rad

from oracles import forces as oracle_forces, rel_err

RESULTS = {}


def record(order, name, ok, detail):
    RESULTS[order] = (name, bool(ok), detail)
    assert ok, f"{name}: {detail}"


# --- scattering rate and friction -----------------------------------------------

def test_scattering_rate():
    p, g = SystemParams(), Geometry()
    r = F.scattering_rate(p, g, g.origin)
    record(1, "scattering rate", abs(r / 1.41e6 - 1.0) <= 0.05, f"R_scat = {r:.4g}/s vs 1.41e6/s")


def test_friction_oracle_1000_points():
    p0, g = SystemParams(), Geometry()
    rng = np.random.default_rng(2025)
    worst = 0.0
    for _ in range(1000):
        r = rng.uniform(-1.0, 1.0, 3) * np.array([2e-6, 10e-6, 10e-6])
        v = rng.normal(0.0, 0.3, 3)
        p = p0.with_(delta_c=mhz_to_rad(rng.uniform(-10, 10)),
                     delta_a=mhz_to_rad(rng.uniform(-20, 20)))
        fb = F.evaluate_forces(p, g, r, v)
        ref = oracle_forces(p, g, r, v)
        for name in ("f_pump", "f_cav", "f_sw_cav", "f_sw_sis"):
            scale = float(max(abs(x) for x in ref[name]))
            if scale > 0:
                worst = max(worst, float(rel_err(getattr(fb, name), ref[name], scale)))
            else:
                worst = max(worst, float(np.max(np.abs(getattr(fb, name)))))
    record(2, "friction oracle", worst <= 1e-10, f"max relative error {worst:.2e} on 1000 points")


def test_theoretical_beta():
    p, g = SystemParams(delta_c=mhz_to_rad(2.0)), Geometry()
    b = F.axis_friction(p, g)
    total = (b["sw_cav"] + b["sw_sis"]) * 1e-3
    record(3, "theoretical beta", 7.0 <= total <= 28.0,
           f"phase-averaged beta_sw = {total:.3g}/ms vs 14/ms (factor 2)")


# --- ensembles through the harness ------------------------------------------------

def test_capture_transient(tmp_path):
    s = resolve_default("capture")
    assert s.n_trajectories >= 20
    m = harness.run_scenario(s, tmp_path / "capture")
    tr = m.summary.get("transient", {})
    const = m.summary.get("transient_constant_baseline", {})
    beta_ms = tr.get("beta_per_s", float("nan")) * 1e-3
    ok = tr.get("resolved", False) and 5.0 <= beta_ms <= 25.0
    record(4, "capture transient", ok,
           f"1/(2 dt) = {beta_ms:.3g}/ms (dt = {tr.get('delta_t_us', float('nan')):.0f} us, "
           f"{m.summary['n_captured']}/{m.summary['n_trajectories']} captured); "
           f"constant baseline gives {const.get('beta_per_s', float('nan')) * 1e-3:.3g}/ms")


def test_detuning_ordering_and_storage(tmp_path):
    sweep = resolve_default("lifetime_sweep")
    assert sweep.n_trajectories >= 50
    ms = harness.run_scenario(sweep, tmp_path / "sweep")
    comps = ms.summary["comparisons"]
    storage = harness.run_scenario(resolve_default("storage"), tmp_path / "storage")
    tau = storage.summary["lifetime"]["lifetime_s"]
    ok_storage = abs(tau / 2.7 - 1.0) <= 0.20
    ok_order = len(comps) == 3 and all(c["holds"] for c in comps)
    detail = "; ".join(f"{c['longer']} > {c['shorter']}: z = {c['z']:.2f}" for c in comps)
    record(5, "detuning ordering", ok_order and ok_storage,
           f"{detail}; pump-off storage {tau:.3g} s vs 2.7 s")


# --- fluctuation-dissipation ----------------------------------------------------------

def test_fluctuation_dissipation():
    p, g = SystemParams(delta_c=SystemParams().kappa), Geometry()
    axis = np.asarray(g.axis_pump)
    fb = F.evaluate_forces(p, g, g.origin, axis)
    beta = -float(fb.f_pump @ axis) / p.mass
    d = fb.diffusion.d_pump
    predicted = d / (beta * p.mass)
    # 1-D oscillator with the pump channel's (beta, D) on x only
    omega = np.array([2 * math.pi * 10e3, 0.0, 0.0])
    rec = run_trajectory(AtomState((0, 0, 0), (0, 0, 0)), p, g, ScheduleSpec(1.0), 6, dt=0.5e-6,
                         harmonic=(omega, np.array([beta, 0, 0]), np.array([d, 0, 0])),
                         stride=10, blinking=False)
    v = rec.samples[rec.samples[:, 0] > 20.0 / beta, 4]
    kt = p.mass * np.mean(v * v)
    ratio = harness.cavity_doppler_ratio(p, g)
    ok = abs(kt / predicted - 1.0) <= 0.10 and 1.0 / 3.0 <= ratio <= 3.0
    record(6, "fluctuation-dissipation", ok,
           f"k_B T / (D / beta m) = {kt / predicted:.4f}; "
           f"pump-channel k_B T = {ratio:.3g} hbar kappa ({predicted / KB * 1e6:.0f} uK)")


# --- estimators -------------------------------------------------------------------------

def test_estimator_recovery():
    p, g = SystemParams(), Geometry()
    notes, ok = [], True

    # histogram: per-atom counts of a 10 ms bin at the trap centre
    r_det = p.eta_det * p.duty_bright * F.scattering_rate(p, g, g.origin) * 10e-3
    dgg = 0.086
    worst_r, worst_g = 0.0, 0.0
    for seed in range(5):
        rng = np.random.default_rng(seed)
        atoms = rng.integers(0, 4, 2000)
        counts = A.synthetic_counts(rng, atoms, 20.0, r_det, 2.0 * dgg * r_det)
        fit = A.fit_histogram(counts, 3)
        worst_r = max(worst_r, abs(fit.r_det / r_det - 1.0))
        worst_g = max(worst_g, abs(A.coupling_spread(fit, p, g).delta_g_over_g - dgg))
    ok &= worst_r <= 0.05 and worst_g <= 0.02
    notes.append(f"R_det error {worst_r:.1%}, dg/g error {worst_g * 100:.2f} pts")

    # autocorrelation: 5 % visibility at twice the cavity-axis frequency
    nu2 = 2.0 * trap_frequencies(p, g).nu_cav
    rng = np.random.default_rng(7)
    t = A.modulated_poisson(rng, 1e5, 10.0, math.sqrt(0.1), nu2, 1.0)
    res = A.autocorrelate(t, 30e-6, 0.25e-6)
    ok &= abs(res.visibility - 0.05) <= 0.02 and abs(res.frequency / nu2 - 1.0) <= 0.02
    notes.append(f"ACF visibility {res.visibility:.2%} at {res.frequency / 1e3:.1f} kHz "
                 f"(injected {nu2 / 1e3:.1f} kHz)")

    # censored lifetimes
    rng = np.random.default_rng(11)
    trials, hits = 1000, 0
    for _ in range(trials):
        x = rng.exponential(17.0, 50)
        hits += A.estimate_lifetime(np.minimum(x, 6.0), x < 6.0).covers(17.0)
    ok &= hits / trials >= 0.60
    notes.append(f"lifetime CI coverage {hits / trials:.1%}")
    record(7, "estimator recovery", ok, "; ".join(notes))


def test_bose_occupation():
    n = A.bose_occupation(15e-6, 670e3)
    p0 = A.ground_state_probability(15e-6, 670e3)
    record(8, "Bose occupation", round(n, 2) == 0.13 and p0 >= 0.88,
           f"nbar = {n:.4f}, P0 = {p0:.3f}")


# --- determinism and integrator quality ---------------------------------------------------

def test_determinism_and_symplectic(tmp_path):
    s = validate_config("kind = capture\nn_trajectories = 4\nduration_ms = 0.3\nseed = 21\n")
    harness.run_scenario(s, tmp_path / "w1", workers=1)
    harness.run_scenario(s, tmp_path / "w3", workers=3)
    names = sorted(f.name for f in (tmp_path / "w1").iterdir())
    same = names == sorted(f.name for f in (tmp_path / "w3").iterdir()) and all(
        (tmp_path / "w1" / n).read_bytes() == (tmp_path / "w3" / n).read_bytes() for n in names)

    p, g = SystemParams(), Geometry()
    # harmonic force: velocity Verlet conserves its shadow energy exactly
    nu = 100e3
    omega = 2 * math.pi * nu * np.array([1.0, 1.37, 0.61])
    dt = 1.0 / (50 * nu * 1.37)
    rec = run_trajectory(AtomState((1e-7, -2e-7, 3e-7), (0.01, 0.02, -0.015)), p, g,
                         ScheduleSpec(1000 / nu), dt=dt, harmonic=(omega, np.zeros(3), np.zeros(3)),
                         stride=1, blinking=False)
    x, v = rec.samples[:, 1:4], rec.samples[:, 4:7]
    shadow = 0.5 * p.mass * np.sum(v * v + omega ** 2 * (1 - (omega * dt) ** 2 / 4) * x * x, axis=1)
    harmonic_drift = float(np.max(np.abs(shadow / shadow[0] - 1.0)))

    # full trap, 1000 standing-wave periods: compare energy averaged over the first and last 1 %
    nu_sw = trap_frequencies(p, g).nu_sw
    start = AtomState(tuple(g.lattice_to_lab(x_sw=20e-9, x_cav=30e-9, x_perp=0.3e-6)), (0, 0, 0))
    rec = run_trajectory(start, p, g, ScheduleSpec(1000 / nu_sw), 1, friction=0.0, noise=0.0,
                         blinking=False, stride=1)
    s_ = rec.samples
    e = 0.5 * p.mass * np.sum(s_[:, 4:7] ** 2, axis=1) + np.array(
        [sample_fields(p, g, r).u_total for r in s_[:, 1:4]])
    k = len(e) // 100
    trap_drift = abs(e[-k:].mean() - e[:k].mean()) / abs(e[0])

    ok = same and harmonic_drift < 1e-6 and trap_drift < 1e-6
    record(9, "determinism and integrator", ok,
           f"{len(names)} files byte-identical for 1 vs 3 workers: {same}; "
           f"harmonic shadow-energy drift {harmonic_drift:.1e}, trap energy drift {trap_drift:.1e}")
