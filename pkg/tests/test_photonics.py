import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from cavitycool import photonics as P
from cavitycool.dynamics import AtomState, ScheduleSpec, TrajectoryRecord, run_trajectory

R_REF = 1.41e6


def _record(rate, duration, bright_fraction=1.0, rate_dt=1e-6, seed=0):
    """Synthetic trajectory record with a constant intrinsic rate."""
    n = int(round(duration / rate_dt))
    t = np.arange(n) * rate_dt
    emitted = np.full(n, rate * bright_fraction)
    rates = np.c_[t, emitted, np.full(n, rate)]
    final = AtomState((0, 0, 0), (0, 0, 0))
    return TrajectoryRecord(np.zeros((0, 9)), rates, rate_dt, rate_dt, duration, final, None,
                            None, None, 0, n, seed, 0)


def test_zero_efficiency_and_background_gives_no_events(params):
    rec = _record(R_REF, 0.01)
    # eta_det = 0 is not a valid parameter value, but the emitter accepts it as an override
    tr = P.emit_photons(rec, params, eta_det=0.0, background_rate=0.0)
    assert len(tr) == 0


def test_detected_rate_product(params):
    duration = 0.2
    tr = P.emit_photons(_record(R_REF, duration), params, 3, eta_det=0.05)
    expected = R_REF * 0.05
    n = expected * duration
    assert abs(len(tr) - n) < 4 * math.sqrt(n)
    assert tr.mean_rate == pytest.approx(7.06e4, rel=0.01)


def test_blinking_telegraph_duty(params, geometry):
    """Bright fraction from the dynamics telegraph sets the long-run detected mean."""
    rec = run_trajectory(AtomState((0, 0, 0), (0, 0, 0)), params, geometry, ScheduleSpec(0.2), 4,
                         friction=0.0, noise=0.0)
    tr = P.emit_photons(rec, params)
    assert tr.mean_rate == pytest.approx(R_REF * 0.2 * 0.05, rel=0.05)
    assert tr.mean_rate == pytest.approx(1.41e4, rel=0.05)
    # blinking adds super-Poissonian variance to 100 us bins
    c = P.bin_counts(tr, 100e-6).counts
    assert c.var() > 1.5 * c.mean()


def test_background_runs_after_loss(params):
    rec = _record(R_REF, 0.01)
    rec = replace(rec, rates=rec.rates[: rec.rates.shape[0] // 2], duration=0.01)
    tr = P.emit_photons(rec, params, 2, background_rate=2e4)
    late = tr.timestamps[tr.timestamps > 0.0051]
    n = 2e4 * (0.01 - 0.0051)
    assert abs(late.size - n) < 4 * math.sqrt(n)


def test_rejects_missing_rates(params):
    rec = _record(R_REF, 1e-5)
    with pytest.raises(ValueError):
        P.emit_photons(replace(rec, rates=np.zeros((0, 3))), params)


def test_emission_deterministic_and_stream_separated(params):
    rec = _record(R_REF, 0.01, seed=7)
    a = P.emit_photons(rec, params)
    b = P.emit_photons(rec, params)
    c = P.emit_photons(rec, params, seed=8)
    assert np.array_equal(a.timestamps, b.timestamps)
    assert not np.array_equal(a.timestamps, c.timestamps)


def test_trace_invariants():
    with pytest.raises(ValueError):
        P.PhotonTrace(np.array([2e-3, 1e-3]), 1.0)
    with pytest.raises(ValueError):
        P.PhotonTrace(np.array([0.5, 1.0]), 1.0)


# --- binning -------------------------------------------------------------------

def test_three_events_one_bin():
    tr = P.PhotonTrace(np.array([1e-3, 2e-3, 3e-3]), 10e-3)
    b = P.bin_counts(tr, 10e-3)
    assert b.counts.tolist() == [3]


def test_left_closed_bins():
    tr = P.PhotonTrace(np.array([0.0, 1e-3, 2e-3 - 1e-12, 2e-3]), 3e-3)
    assert P.bin_counts(tr, 1e-3).counts.tolist() == [1, 2, 1]


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0.0, 0.0999), max_size=300), st.integers(1, 20))
def test_binning_conserves_counts_and_rebins(ts, factor):
    tr = P.PhotonTrace(np.sort(np.array(ts, dtype=float)), 0.1)
    fine = P.bin_counts(tr, 1e-3)
    assert fine.counts.sum() == len(ts)
    assert np.all(fine.counts >= 0)
    coarse = fine.rebin(factor)
    n = coarse.counts.size
    direct = P.bin_counts(tr, factor * 1e-3).counts[:n]
    assert np.array_equal(coarse.counts, direct)


def test_rebin_1ms_to_10ms(rng):
    tr = P.poisson_trace(rng, 5e3, 1.0)
    assert np.array_equal(P.bin_counts(tr, 1e-3).rebin(10).counts, P.bin_counts(tr, 10e-3).counts)


def test_poisson_bins_variance_equals_mean(rng):
    c = P.bin_counts(P.poisson_trace(rng, 2e4, 20.0), 1e-3).counts
    n = c.size
    # standard error of the variance-to-mean ratio is about sqrt(2 / n)
    assert c.var(ddof=1) / c.mean() == pytest.approx(1.0, abs=4 * math.sqrt(2.0 / n))


def test_csv_outputs(tmp_path, rng):
    tr = P.poisson_trace(rng, 1e3, 0.05)
    tr.to_csv(tmp_path / "p.csv")
    rows = (tmp_path / "p.csv").read_text().splitlines()
    assert rows[0] == "t_us" and len(rows) == len(tr) + 1
    assert float(rows[1]) == pytest.approx(tr.timestamps[0] * 1e6)
    P.bin_counts(tr, 10e-3).to_csv(tmp_path / "b.csv")
    rows = (tmp_path / "b.csv").read_text().splitlines()
    assert rows[0] == "t_ms,counts"
    assert rows[2].split(",")[0] == "10.0"


# --- thinning and merging ---------------------------------------------------------------

def test_thinning_rate_per_piece(rng):
    starts = np.array([0.0, 0.5, 1.0, 1.5, 2.5])
    rates = np.array([1e3, 4e3, 0.0, 2.5e3, 7e3])
    duration = 3.0
    t = P.thin_piecewise(rng, starts, rates, duration)
    ends = np.r_[starts[1:], duration]
    for a, b, lam in zip(starts, ends, rates):
        n = np.count_nonzero((t >= a) & (t < b))
        mu = lam * (b - a)
        assert abs(n - mu) <= 3.0 * math.sqrt(max(mu, 1.0))
    assert not np.any((t >= 1.0) & (t < 1.5))


def test_thinning_zero_before_first_piece(rng):
    t = P.thin_piecewise(rng, np.array([0.5]), np.array([1e4]), 1.0)
    assert t.min() >= 0.5


def test_thinning_validates(rng):
    with pytest.raises(ValueError):
        P.thin_piecewise(rng, np.array([0.0]), np.array([-1.0]), 1.0)
    with pytest.raises(ValueError):
        P.thin_piecewise(rng, np.array([0.0, 1.0]), np.array([1.0]), 1.0)


def test_merge_equals_summed_rate():
    rng = np.random.default_rng(77)
    a = P.poisson_trace(rng, 3e3, 5.0)
    b = P.poisson_trace(rng, 1e3, 5.0)
    merged = P.merge_traces(a, b)
    single = P.poisson_trace(rng, 4e3, 5.0)
    res = stats.ks_2samp(np.diff(merged.timestamps), np.diff(single.timestamps))
    assert res.pvalue > 0.01
    assert merged.background_rate == a.background_rate + b.background_rate
    # inter-arrival times are exponential at the summed rate
    assert stats.kstest(np.diff(merged.timestamps), "expon", args=(0, 1 / 4e3)).pvalue > 0.01


def test_merge_validates(rng):
    with pytest.raises(ValueError):
        P.merge_traces()
    with pytest.raises(ValueError):
        P.merge_traces(P.poisson_trace(rng, 1.0, 1.0), P.poisson_trace(rng, 1.0, 2.0))
