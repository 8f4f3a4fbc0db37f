"""Scenario runner: builds ensembles from a :class:`~cavitycool.config.Scenario`,
runs the analysis chain and writes one output directory per run.

Every run directory holds ``manifest.json`` (resolved settings, derived
constants, seed, version and SHA-256 of every other file), the resolved
config as ``resolved.cfg`` and kind-specific CSV/JSON outputs.  Outputs are
written to a temporary sibling directory that replaces the target only after
the run succeeds, so a failed run leaves nothing behind.
"""

from dataclasses import dataclass, field, replace
import hashlib
import json
import logging
import math
import os
from pathlib import Path
import shutil
import tempfile

import numpy as np

from . import __version__
from . import analysis as A
from . import forces as F
from . import photonics as P
from .config import Scenario, dump
from .dynamics import (TrajectorySpec, default_timestep, run_ensemble, stream, survival_data)
from .model import max_timestep, sample_fields, trap_frequencies
from .units import HBAR, KB, rad_to_mhz

log = logging.getLogger(__name__)


@dataclass
class RunManifest:
    kind: str
    seed: int
    version: str
    config: dict
    derived: dict
    outputs: dict = field(default_factory=dict)
    summary: dict = field(default_factory=dict)
    out_dir: str | None = None

    def to_json(self) -> str:
        d = {"kind": self.kind, "seed": self.seed, "version": self.version,
             "config": {k: _jsonable(v) for k, v in sorted(self.config.items())},
             "derived": self.derived, "outputs": self.outputs, "summary": self.summary}
        return json.dumps(d, indent=2, sort_keys=True) + "\n"


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (tuple, list)):
        return [_jsonable(x) for x in v]
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    if isinstance(v, np.ndarray):
        return [_jsonable(x) for x in v.tolist()]
    if isinstance(v, float) and not math.isfinite(v):
        return str(v)
    return v


def write_json(path, obj):
    with open(path, "w") as fh:
        fh.write(json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n")


def sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def derived_constants(scenario: Scenario) -> dict:
    p, g = scenario.params, scenario.geometry
    out = {"w_cav_um": p.w_cav * 1e6, "dt_max_ns": max_timestep(p, g) * 1e9}
    out["dt_ns"] = (scenario.dt if scenario.dt is not None else default_timestep(p, g)) * 1e9
    try:
        nu = trap_frequencies(p, g)
        out.update({"nu_sw_khz": nu.nu_sw / 1e3, "nu_cav_khz": nu.nu_cav / 1e3,
                    "nu_perp_khz": nu.nu_perp / 1e3})
    except ValueError as exc:
        out["trap_frequencies"] = str(exc)
    f = sample_fields(p, g, g.origin)
    out["p_e_origin"] = f.p_e
    out["r_scat_origin_per_s"] = F.scattering_rate(p, g, g.origin)
    out["dark_dwell_us"] = p.dark_dwell * 1e6
    return out


def _spec(scenario: Scenario, params=None, schedule=None, **options) -> TrajectorySpec:
    opts = dict(scenario.options)
    opts.update(options)
    return TrajectorySpec(scenario.initial, params or scenario.params, scenario.geometry,
                          schedule or scenario.schedule, scenario.dt, opts)


def _ordered_events(records) -> list:
    rows = []
    for r in records:
        for ev in r.events:
            rows.append(dict(ev, trajectory=r.index))
    return rows


def _write_events(path, records):
    with open(path, "w") as fh:
        for ev in _ordered_events(records):
            fh.write(json.dumps(_jsonable(ev), sort_keys=True) + "\n")


def _write_photons(path, traces):
    with open(path, "w") as fh:
        fh.write("trajectory,t_us\n")
        for i, tr in traces:
            for t in tr.timestamps:
                fh.write(f"{i},{float(t * 1e6)!r}\n")


# --- capture ---------------------------------------------------------------------

def aligned_rate_trace(records, bin_width: float, horizon: float | None = None):
    """Intrinsic scattering rate re-binned and aligned on each capture time.

    Returns (t, median, mean, n_active) over the captured trajectories; a
    trajectory stops contributing when it is lost or its record ends.
    """
    rows = []
    for r in records:
        if r.captured_at is None or r.rates.shape[0] == 0:
            continue
        t0 = r.captured_at
        t = r.rates[:, 0] - t0
        keep = t >= 0.0
        t, v = t[keep], r.rates[keep, 2]
        if t.size == 0:
            continue
        idx = np.floor(t / bin_width + 1e-9).astype(np.int64)
        sums = np.bincount(idx, weights=v)
        cnt = np.bincount(idx)
        full = cnt == cnt.max()
        last = np.nonzero(full)[0][-1] + 1 if full.any() else 0
        rows.append(sums[:last] / np.maximum(cnt[:last], 1))
    if not rows:
        raise ValueError("no captured trajectories")
    n = max(len(x) for x in rows)
    if horizon is not None:
        n = min(n, int(round(horizon / bin_width)))
    m = np.full((len(rows), n), np.nan)
    for i, x in enumerate(rows):
        m[i, : min(n, len(x))] = x[:n]
    active = np.sum(np.isfinite(m), axis=0)
    ok = active > 0
    m, active = m[:, ok], active[ok]
    t = np.arange(m.shape[1]) * bin_width
    return t, np.nanmedian(m, axis=0), np.nanmean(m, axis=0), active


def run_capture(scenario: Scenario, out: Path, workers: int = 1) -> dict:
    spec = _spec(scenario, rate_stride=1)
    records = run_ensemble(scenario.n_trajectories, spec, scenario.seed, workers=workers)
    bw = scenario.settings["rate_bin_us"]
    captured = [r for r in records if r.captured_at is not None]
    summary = {"n_trajectories": len(records), "n_captured": len(captured),
               "capture_times_us": [r.captured_at * 1e6 for r in captured],
               "pe_violations": int(sum(r.pe_violations for r in records))}
    traces = [(r.index, P.emit_photons(r, scenario.params)) for r in records]
    _write_photons(out / "photons.csv", traces)
    total = P.merge_traces(*(tr for _, tr in traces)) if traces else None
    if total is not None:
        P.bin_counts(total, bw).to_csv(out / "counts.csv")
    _write_events(out / "events.jsonl", records)
    for r in records:
        r.to_csv(out / f"trajectory_{r.index:04d}.csv")

    if captured:
        t, med, mean, active = aligned_rate_trace(captured, bw)
        with open(out / "capture_rate.csv", "w") as fh:
            fh.write("t_us,median_rate,mean_rate,n_active\n")
            for row in zip(t, med, mean, active):
                fh.write(f"{float(row[0]) * 1e6!r},{float(row[1])!r},{float(row[2])!r},"
                         f"{int(row[3])}\n")
        # only use the part of the trace where most captured atoms remain
        use = active >= max(1, len(captured) // 2)
        st = scenario.settings
        for key, base, window in (("transient", "linear", 0.5),
                                  ("transient_constant_baseline", "constant", 0.25)):
            try:
                est = A.estimate_beta_transient(t[use], med[use], onset=0.0,
                                                settle_fraction=st["settle_fraction"],
                                                hold=st["settle_hold"], baseline=base,
                                                settled_window=window)
                summary[key] = {"beta_per_s": est.beta, "delta_t_us": est.delta_t * 1e6,
                                "settled_rate_per_s": est.settled_level,
                                "drift_per_s2": est.drift, "resolved": est.resolved}
            except ValueError as exc:
                summary[key] = {"error": str(exc)}
    write_json(out / "capture_summary.json", summary)
    return summary


# --- storage ---------------------------------------------------------------------

def _lifetime_dict(est: A.LifetimeEstimate) -> dict:
    return {"lifetime_s": est.lifetime, "ci_low_s": est.ci_low, "ci_high_s": est.ci_high,
            "n_traces": est.n_traces, "censored": est.censored,
            "lower_bound_only": est.lower_bound_only, "degenerate": est.degenerate}


def _write_survival(path, records):
    with open(path, "w") as fh:
        fh.write("trajectory,end_time_s,lost,reason\n")
        for r in records:
            fh.write(f"{r.index},{float(r.end_time)!r},{int(not r.survived)},{r.loss_reason or ''}\n")


def run_storage(scenario: Scenario, out: Path, workers: int = 1) -> dict:
    records = run_ensemble(scenario.n_trajectories, _spec(scenario), scenario.seed, workers=workers)
    _write_survival(out / "survival.csv", records)
    _write_events(out / "events.jsonl", records)
    times, lost = survival_data(records)
    est = A.estimate_lifetime(times, lost)
    summary = {"lifetime": _lifetime_dict(est),
               "configured_loss_rate_per_s": scenario.params.loss_rate,
               "fast_forwarded": int(sum(r.fast_forward_at is not None for r in records))}
    bw = scenario.settings["count_bin_ms"]
    traces = [P.emit_photons(r, scenario.params) for r in records]
    total = P.merge_traces(*traces)
    binned = P.bin_counts(total, bw)
    binned.to_csv(out / "counts.csv")
    if len(total) and bw >= 1e-3:
        pumped = [r for r in records if r.rates.shape[0]]
        rates = [np.mean(r.rates[:, 1]) for r in pumped]
        per_atom = scenario.params.eta_det * float(np.mean(rates)) * bw if rates else 0.0
        if per_atom > 0:
            steps = A.detect_steps(binned.counts, per_atom,
                                   scenario.params.background_rate * bw, bin_width=bw)
            summary["steps"] = {"segments": steps.segments, "non_monotone": steps.non_monotone}
    write_json(out / "storage_summary.json", summary)
    return summary


# --- lifetime sweep -------------------------------------------------------------------

def run_lifetime_sweep(scenario: Scenario, out: Path, workers: int = 1) -> dict:
    mode = scenario.settings["friction_mode"]
    rows = []
    configs = [(f"dc_{rad_to_mhz(dc):+g}MHz", F.detuned_params(scenario.params, dc, mode),
                scenario.schedule) for dc in scenario.settings["sweep_delta_c_mhz"]]
    if scenario.settings["include_pump_off"]:
        configs.append(("pump_off", scenario.params, replace(scenario.schedule, pump_windows=())))
    for label, params, schedule in configs:
        spec = _spec(scenario, params=params, schedule=schedule)
        records = run_ensemble(scenario.n_trajectories, spec, scenario.seed, workers=workers)
        times, lost = survival_data(records)
        est = A.estimate_lifetime(times, lost)
        pump = label != "pump_off"
        rows.append({"label": label, "delta_c_mhz": rad_to_mhz(params.delta_c) if pump else None,
                     "pump": pump, **_lifetime_dict(est), "lost": int(lost.sum()),
                     "sigma_s": est.lifetime / math.sqrt(max(int(lost.sum()), 1))})
        _write_survival(out / f"survival_{label}.csv", records)
    with open(out / "sweep.csv", "w") as fh:
        fh.write("label,delta_c_mhz,pump,lifetime_ms,ci_low_ms,ci_high_ms,sigma_ms,n,lost\n")
        for r in rows:
            dc = "" if r["delta_c_mhz"] is None else repr(float(r["delta_c_mhz"]))
            fh.write(f"{r['label']},{dc},{int(r['pump'])},{float(r['lifetime_s']) * 1e3!r},"
                     f"{float(r['ci_low_s']) * 1e3!r},{float(r['ci_high_s']) * 1e3!r},{float(r['sigma_s']) * 1e3!r},"
                     f"{r['n_traces']},{r['lost']}\n")
    summary = {"rows": rows, "comparisons": sweep_comparisons(rows, scenario.params.kappa)}
    write_json(out / "sweep_summary.json", summary)
    return summary


def sweep_comparisons(rows, kappa) -> list:
    """Pairwise lifetime separations (in combined sigma) for the ordering
    tau(+kappa) > tau(0) > tau(-kappa) and tau(large detuning) > tau(pump off)."""
    by_dc = {round(r["delta_c_mhz"], 6): r for r in rows if r["pump"]}
    k = round(rad_to_mhz(kappa), 6)
    off = next((r for r in rows if not r["pump"]), None)
    pairs = [(by_dc.get(k), by_dc.get(0.0)), (by_dc.get(0.0), by_dc.get(-k))]
    far = [r for d, r in by_dc.items() if abs(d) > 5 * k]
    if far and off is not None:
        pairs.append((max(far, key=lambda r: r["delta_c_mhz"]), off))
    out = []
    for a, b in pairs:
        if a is None or b is None:
            continue
        z = (a["lifetime_s"] - b["lifetime_s"]) / math.hypot(a["sigma_s"], b["sigma_s"])
        out.append({"longer": a["label"], "shorter": b["label"], "z": z, "holds": z >= 3.0})
    return out


# --- histogram -------------------------------------------------------------------------

def run_histogram(scenario: Scenario, out: Path, workers: int = 1) -> dict:
    """Count histogram of 10 ms intervals holding 0..n_max atoms.

    Each atom sits in a standing-wave well displaced by a normal deviate of
    rms ``well_spread_um`` from the origin; its detected rate is
    eta_det * duty_bright * R_scat at that well.
    """
    p, g = scenario.params, scenario.geometry
    st = scenario.settings
    n_max, nbins, bw = st["n_max"], st["histogram_bins"], st["count_bin_ms"]
    weights = np.asarray(st.get("atom_weights") or np.full(n_max + 1, 1.0 / (n_max + 1)))
    rng = stream(scenario.seed, 0, 3)
    period = p.lambda_trap / 2.0
    atoms = rng.choice(n_max + 1, size=nbins, p=weights / weights.sum())
    counts = np.empty(nbins)
    per_atom = []
    for i, n in enumerate(atoms):
        lam = p.background_rate * bw
        for _ in range(n):
            s = np.round(rng.normal(0.0, st["well_spread_um"]) / period) * period
            r = p.eta_det * p.duty_bright * F.scattering_rate(p, g, g.lattice_to_lab(x_sw=s)) * bw
            per_atom.append(r)
            lam += r
        counts[i] = rng.poisson(lam)
    fit = A.fit_histogram(counts, n_max)
    spread = A.coupling_spread(fit, p, g, temperature=15e-6)
    with open(out / "histogram.csv", "w") as fh:
        fh.write("left,right,observed,expected\n")
        for a, b, o, e in zip(fit.edges[:-1], fit.edges[1:], fit.observed, fit.expected()):
            fh.write(f"{float(a)!r},{float(b)!r},{int(o)},{float(e)!r}\n")
    per_atom = np.array(per_atom)
    summary = {"fit": fit.to_dict(),
               "coupling": {"delta_g_over_g": spread.delta_g_over_g, "width_um": spread.width * 1e6,
                            "nbar": spread.nbar,
                            "ground_state_probability": spread.ground_state_probability},
               "injected": {"r_det_mean": float(per_atom.mean()) if per_atom.size else None,
                            "r_det_std": float(per_atom.std()) if per_atom.size else None}}
    write_json(out / "histogram_fit.json", summary)
    return summary


# --- friction map and calibration ------------------------------------------------------

def run_frictionmap(scenario: Scenario, out: Path, workers: int = 1) -> dict:
    st = scenario.settings
    grid = np.linspace(st["delta_c_min_mhz"], st["delta_c_max_mhz"], st["delta_c_steps"])
    spec = F.friction_spectrum(scenario.params, scenario.geometry, grid, st["friction_mode"],
                               averaging=st["averaging"])
    spec.to_csv(out / "friction_spectrum.csv")
    zero = np.isclose(grid, 0.0, atol=1e-9 * max(1.0, np.abs(grid).max()))
    summary = {
        "mode": spec.mode, "averaging": spec.averaging,
        "beta_sw_total_positive": bool(np.all(spec.beta_sw_total > 0)),
        "sisyphus_spread": float(np.ptp(spec.beta_sw_sis) / max(np.abs(spec.beta_sw_sis).max(), 1e-300)),
        "cavity_terms_zero_at_resonance": bool(
            not zero.any() or np.all(np.abs(np.c_[spec.beta_pump, spec.beta_cav, spec.beta_sw_cav][zero]) == 0)),
        "argmax_beta_cav_mhz": float(rad_to_mhz(grid[int(np.argmax(spec.beta_cav))])),
    }
    write_json(out / "frictionmap_summary.json", summary)
    return summary


def cavity_doppler_ratio(params, geometry) -> float:
    """k_B T / (hbar kappa) with T = D_pump / (beta_pump m) at the origin, Delta_C = kappa."""
    p = replace(params, delta_c=params.kappa)
    fb = F.evaluate_forces(p, geometry, geometry.origin, np.asarray(geometry.axis_pump))
    beta = -float(fb.f_pump @ np.asarray(geometry.axis_pump)) / p.mass
    return fb.diffusion.d_pump / (beta * p.mass) / (HBAR * p.kappa)


def run_calibrate(scenario: Scenario, out: Path, workers: int = 1) -> dict:
    p, g = scenario.params, scenario.geometry
    beta = F.axis_friction(p, g, averaging=scenario.settings["averaging"])
    d = F.diffusion_channels(p, g, g.origin)
    summary = {
        "derived": derived_constants(scenario),
        "axis_friction_per_ms": {k: v * 1e-3 for k, v in beta.items()},
        "beta_sw_total_per_ms": (beta["sw_cav"] + beta["sw_sis"]) * 1e-3,
        "diffusion": {"d_pump": d.d_pump, "d_cav": d.d_cav, "d_spont": d.d_spont},
        "cavity_doppler_kT_over_hbar_kappa": cavity_doppler_ratio(p, g),
        "hbar_kappa_over_kB_uK": HBAR * p.kappa / KB * 1e6,
    }
    write_json(out / "calibration.json", summary)
    return summary


RUNNERS = {
    "capture": run_capture, "storage": run_storage, "lifetime_sweep": run_lifetime_sweep,
    "histogram": run_histogram, "frictionmap": run_frictionmap, "calibrate": run_calibrate,
}


def run_scenario(scenario: Scenario, out_dir, *, workers: int = 1) -> RunManifest:
    """Run ``scenario`` and write its outputs to ``out_dir`` (replaced if present)."""
    target = Path(out_dir)
    target.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=f".{target.name}.partial-", dir=target.parent))
    try:
        derived = derived_constants(scenario)
        summary = RUNNERS[scenario.kind](scenario, tmp, workers)
        (tmp / "resolved.cfg").write_text(dump(scenario.values))
        outputs = {f.name: sha256(f) for f in sorted(tmp.iterdir()) if f.is_file()}
        manifest = RunManifest(scenario.kind, scenario.seed, __version__, scenario.values,
                               derived, outputs, summary, str(target))
        (tmp / "manifest.json").write_text(manifest.to_json())
        if target.exists():
            shutil.rmtree(target)
        os.replace(tmp, target)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    log.info("wrote %s", target)
    return manifest
