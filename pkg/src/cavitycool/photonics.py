"""Detected-photon streams from simulated scattering rates.

Detection is an inhomogeneous Poisson process with rate
eta_det * R_scat(t) * [bright] + background_rate, drawn by exact thinning
against the piecewise-constant rate envelope recorded by the integrator.
"""

from dataclasses import dataclass
import csv
import math

import numpy as np

from .dynamics import STREAM_PHOTONS, stream


@dataclass(frozen=True)
class BinnedCounts:
    """Counts in left-closed bins [k w, (k + 1) w) starting at t = 0."""

    bin_width: float
    counts: np.ndarray

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.counts.size) * self.bin_width

    def rebin(self, factor: int) -> "BinnedCounts":
        """Merge ``factor`` adjacent bins; a trailing partial group is dropped."""
        factor = int(factor)
        if factor < 1:
            raise ValueError("rebin factor must be a positive integer")
        n = self.counts.size // factor
        c = self.counts[: n * factor].reshape(n, factor).sum(axis=1)
        return BinnedCounts(self.bin_width * factor, c)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t_ms", "counts"])
            for t, c in zip(self.times, self.counts):
                w.writerow([repr(float(t * 1e3)), int(c)])


@dataclass(frozen=True)
class PhotonTrace:
    timestamps: np.ndarray
    duration: float
    background_rate: float = 0.0

    def __post_init__(self):
        t = np.asarray(self.timestamps, dtype=float)
        if t.ndim != 1:
            raise ValueError("timestamps must be 1-D")
        if t.size and (np.any(np.diff(t) < 0) or t[0] < 0 or t[-1] >= self.duration):
            raise ValueError("timestamps must be sorted and inside [0, duration)")
        object.__setattr__(self, "timestamps", t)

    def __len__(self):
        return self.timestamps.size

    @property
    def mean_rate(self) -> float:
        return self.timestamps.size / self.duration

    def shifted(self, offset: float) -> "PhotonTrace":
        return PhotonTrace(self.timestamps + offset, self.duration + offset, self.background_rate)

    def to_csv(self, path):
        """One timestamp per row, in microseconds."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t_us"])
            for t in self.timestamps:
                w.writerow([repr(float(t * 1e6))])


def thin_piecewise(rng, starts, rates, duration: float) -> np.ndarray:
    """Poisson arrivals on [0, duration) for a rate that equals ``rates[i]``
    on [starts[i], starts[i+1]) (the last piece runs to ``duration``)."""
    starts = np.asarray(starts, dtype=float)
    rates = np.asarray(rates, dtype=float)
    if starts.shape != rates.shape or starts.ndim != 1 or starts.size == 0:
        raise ValueError("starts and rates must be equal-length non-empty 1-D arrays")
    if np.any(rates < 0) or not np.all(np.isfinite(rates)):
        raise ValueError("rates must be finite and non-negative")
    lam_max = float(rates.max())
    if lam_max == 0.0:
        return np.zeros(0)
    n = rng.poisson(lam_max * duration)
    t = np.sort(rng.uniform(0.0, duration, n))
    piece = np.searchsorted(starts, t, side="right") - 1
    lam = np.where(piece >= 0, rates[np.clip(piece, 0, None)], 0.0)
    keep = rng.uniform(0.0, lam_max, n) < lam
    return t[keep]


def emit_photons(trajectory, params, seed: int | None = None, *,
                 eta_det: float | None = None, background_rate: float | None = None) -> PhotonTrace:
    """Detected photons of one trajectory over [0, duration).

    The atom contributes eta_det times its emitted rate (R_scat while bright)
    from the ``rates`` envelope, down to zero after a loss; the background
    runs for the whole duration.  The draw uses the photon stream of
    (seed, trajectory index), defaulting to the trajectory's own seed.
    """
    rates = np.asarray(trajectory.rates)
    if rates.ndim != 2 or rates.shape[0] == 0:
        raise ValueError("trajectory carries no rate samples")
    eta = params.eta_det if eta_det is None else float(eta_det)
    bg = params.background_rate if background_rate is None else float(background_rate)
    if not 0.0 <= eta <= 1.0 or bg < 0.0:
        raise ValueError("need 0 <= eta_det <= 1 and background_rate >= 0")
    seed = trajectory.seed if seed is None else seed
    rng = stream(seed, trajectory.index, STREAM_PHOTONS)
    # after the last recorded bin the atom is gone (or the run has ended)
    starts = np.r_[rates[:, 0], rates[-1, 0] + trajectory.rate_dt]
    lam = np.r_[eta * rates[:, 1], 0.0]
    if starts[0] > 0.0:
        starts, lam = np.r_[0.0, starts], np.r_[0.0, lam]
    t = thin_piecewise(rng, starts, lam + bg, trajectory.duration)
    return PhotonTrace(t, trajectory.duration, bg)


def poisson_trace(rng, rate: float, duration: float) -> PhotonTrace:
    """Homogeneous Poisson stream (background only)."""
    n = rng.poisson(rate * duration)
    return PhotonTrace(np.sort(rng.uniform(0.0, duration, n)), duration, rate)


def merge_traces(*traces) -> PhotonTrace:
    """Superpose independent streams recorded over the same window."""
    if not traces:
        raise ValueError("nothing to merge")
    duration = traces[0].duration
    if any(not math.isclose(tr.duration, duration) for tr in traces):
        raise ValueError("traces cover different durations")
    t = np.sort(np.concatenate([tr.timestamps for tr in traces]))
    return PhotonTrace(t, duration, sum(tr.background_rate for tr in traces))


def bin_counts(trace: PhotonTrace, bin_width: float) -> BinnedCounts:
    """Counts in left-closed bins from t = 0 covering the full duration."""
    if not bin_width > 0:
        raise ValueError("bin_width must be positive")
    nb = max(1, int(math.ceil(trace.duration / bin_width - 1e-9)))
    idx = np.floor(trace.timestamps / bin_width).astype(np.int64)
    counts = np.bincount(idx, minlength=nb)
    return BinnedCounts(float(bin_width), counts)
