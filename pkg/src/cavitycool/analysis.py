"""Estimators for lifetimes, atom-number steps, count histograms,
photon autocorrelations and the capture transient."""

from dataclasses import dataclass, field, asdict
import math

import numpy as np
from scipy import optimize, stats
from scipy.special import ndtr

from .units import H, KB


class DegenerateFitError(RuntimeError):
    """A fit converged to a physically meaningless point."""


# --- lifetimes -----------------------------------------------------------------

@dataclass(frozen=True)
class LifetimeEstimate:
    lifetime: float
    ci_low: float
    ci_high: float
    n_traces: int
    censored: int
    lower_bound_only: bool = False
    degenerate: bool = False

    def covers(self, value: float) -> bool:
        return self.ci_low <= value <= self.ci_high

    def to_dict(self) -> dict:
        return asdict(self)


def estimate_lifetime(times, lost, confidence: float = 0.68) -> LifetimeEstimate:
    """Exponential lifetime by maximum likelihood with right-censoring.

    ``times`` are loss times for lost atoms and observation lengths for
    survivors (``lost`` False).  The interval comes from the profile
    likelihood, 2 (l_max - l) <= chi2_1(confidence).
    """
    times = np.asarray(times, dtype=float)
    lost = np.asarray(lost, dtype=bool)
    if times.shape != lost.shape or times.ndim != 1:
        raise ValueError("times and lost must be 1-D arrays of equal length")
    if times.size < 2:
        raise ValueError("need at least two traces")
    if np.any(times < 0) or not np.all(np.isfinite(times)):
        raise ValueError("times must be finite and non-negative")
    exposure = float(times.sum())
    d = int(lost.sum())
    q = float(stats.chi2.ppf(confidence, 1))
    n = int(times.size)
    if exposure <= 0.0:
        raise ValueError("total exposure time is zero")

    if d == 0:
        low = 2.0 * exposure / q
        return LifetimeEstimate(low, low, math.inf, n, n, lower_bound_only=True)

    tau = exposure / d

    def drop(t):
        return 2.0 * (d * math.log(t / tau) + exposure / t - d) - q

    low = optimize.brentq(drop, tau * 1e-6, tau)
    high = optimize.brentq(drop, tau, tau * 1e6)
    degenerate = d == n and bool(np.all(times == times[0]))
    return LifetimeEstimate(tau, low, high, n, n - d, degenerate=degenerate)


# --- atom-number steps -----------------------------------------------------------

@dataclass(frozen=True)
class StepFit:
    """Piecewise-constant atom number; segments are (first bin, end bin, n)."""

    segments: list
    atom_number: np.ndarray
    non_monotone: bool

    @property
    def boundaries(self) -> list:
        return [s[0] for s in self.segments[1:]]


def detect_steps(counts, per_atom_rate: float, background: float = 0.0, *,
                 spread: float = 0.0, penalty: float | None = None,
                 n_max: int | None = None, bin_width: float | None = None) -> StepFit:
    """Penalised change-point fit with levels fixed at background + n * rate.

    Each bin costs the Gaussian negative log-likelihood of its count given n
    atoms (variance background + n rate + n spread^2) and every change of n
    costs ``penalty`` (default 3 log N).  The optimum is found exactly by
    dynamic programming over n.
    """
    c = np.asarray(counts, dtype=float)
    if c.ndim != 1 or c.size == 0:
        raise ValueError("counts must be a non-empty 1-D array")
    if bin_width is not None and bin_width < 1e-3:
        raise ValueError("step detection needs bins of at least 1 ms")
    if not per_atom_rate > 0:
        raise ValueError("per_atom_rate must be positive")
    if n_max is None:
        n_max = max(1, int(math.ceil((c.max() - background) / per_atom_rate)) + 1)
    if penalty is None:
        penalty = 3.0 * math.log(max(c.size, 2))
    levels = np.arange(n_max + 1)
    mu = background + levels * per_atom_rate
    var = np.maximum(mu + levels * spread ** 2, 1.0)
    cost = 0.5 * (c[:, None] - mu[None, :]) ** 2 / var[None, :] + 0.5 * np.log(var)[None, :]

    nb, nl = cost.shape
    total = cost[0].copy()
    back = np.zeros((nb, nl), dtype=np.int64)
    for i in range(1, nb):
        best = int(np.argmin(total))
        switch = total[best] + penalty
        stay = total
        take_switch = switch < stay
        back[i] = np.where(take_switch, best, levels)
        total = np.where(take_switch, switch, stay) + cost[i]
    path = np.empty(nb, dtype=np.int64)
    path[-1] = int(np.argmin(total))
    for i in range(nb - 1, 0, -1):
        path[i - 1] = back[i, path[i]]

    segments = []
    start = 0
    for i in range(1, nb + 1):
        if i == nb or path[i] != path[start]:
            segments.append((start, i, int(path[start])))
            start = i
    non_monotone = any(b[2] > a[2] for a, b in zip(segments, segments[1:]))
    return StepFit(segments, path, non_monotone)


# --- photon-count histogram ----------------------------------------------------------

@dataclass(frozen=True)
class HistogramFit:
    """Gaussian components centred at r_n + n r_det with variance
    r_n + n r_det + n sigma_rdet^2 (all in counts per bin)."""

    r_n: float
    r_det: float
    sigma_rdet: float
    weights: np.ndarray
    n_max: int
    edges: np.ndarray = field(repr=False)
    observed: np.ndarray = field(repr=False)
    cost: float = 0.0

    def centers(self) -> np.ndarray:
        return self.r_n + np.arange(self.n_max + 1) * self.r_det

    def widths(self) -> np.ndarray:
        n = np.arange(self.n_max + 1)
        return np.sqrt(self.r_n + n * self.r_det + n * self.sigma_rdet ** 2)

    def expected(self) -> np.ndarray:
        return _mixture_counts(self.edges, self.observed.sum(), self.r_n, self.r_det,
                               self.sigma_rdet, self.weights)

    def to_dict(self) -> dict:
        return {"r_n": self.r_n, "r_det": self.r_det, "sigma_rdet": self.sigma_rdet,
                "weights": [float(w) for w in self.weights], "n_max": self.n_max,
                "cost": self.cost}


def _mixture_counts(edges, total, r_n, r_det, s, w):
    n = np.arange(len(w))
    mu = r_n + n * r_det
    sd = np.sqrt(np.maximum(r_n + n * r_det + n * s * s, 1e-12))
    cdf = ndtr((edges[:, None] - mu[None, :]) / sd[None, :])
    return total * (np.diff(cdf, axis=0) @ w)


def fit_histogram(counts, n_max: int, *, bins: int | None = None) -> HistogramFit:
    """Constrained least-squares fit of ``n_max + 1`` Gaussians to the
    histogram of per-bin photon counts.

    Starts are deterministic: the per-atom rate is seeded from the data range
    divided by 1..n_max (and from half of it), with the background at the
    low percentile of the counts.  The start with the smallest cost wins.
    """
    c = np.asarray(counts, dtype=float).reshape(-1)
    if n_max < 1:
        raise ValueError("n_max must be at least 1")
    if c.size < 20:
        raise ValueError("too few samples to histogram")
    lo, hi = float(c.min()), float(c.max())
    if hi == lo:
        raise DegenerateFitError("all bins hold the same count")
    if bins is None:
        bins = int(min(400, max(30, 2 * math.sqrt(c.size))))
    edges = np.linspace(lo - 0.5, hi + 0.5, bins + 1)
    obs, _ = np.histogram(c, edges)
    total = obs.sum()
    nw = n_max + 1

    def weights(a):
        return a / max(a.sum(), 1e-300)

    def resid(x):
        e = _mixture_counts(edges, total, x[0], x[1], x[2], weights(x[3:]))
        return (obs - e) / np.sqrt(np.maximum(e, 1.0))

    rn0 = max(float(np.percentile(c, 1)), 1e-3)
    span = max(hi - rn0, 1.0)
    starts = sorted({span / k for k in range(1, n_max + 1)} | {span / (2 * n_max)})
    best = None
    for r0 in starts:
        x0 = np.r_[rn0, r0, 0.1 * r0, np.full(nw, 1.0 / nw)]
        lower = np.r_[0.0, 1e-6 * span, 0.0, np.zeros(nw)]
        upper = np.r_[max(hi, 1.0), 2.0 * span, span, np.ones(nw)]
        sol = optimize.least_squares(resid, np.clip(x0, lower, upper), bounds=(lower, upper),
                                     x_scale=np.r_[span * 0.1, span * 0.1, span * 0.1, np.ones(nw)])
        if best is None or sol.cost < best.cost:
            best = sol
    x = best.x
    if x[1] <= 1e-3 * max(span, 1.0) or not np.all(np.isfinite(x)) or x[3:].sum() <= 0:
        raise DegenerateFitError(f"per-atom rate collapsed to {x[1]:.3g}")
    return HistogramFit(float(x[0]), float(x[1]), float(x[2]), weights(x[3:]), n_max,
                        edges, obs, float(best.cost))


def synthetic_counts(rng, atom_numbers, r_n: float, r_det: float, sigma_rdet: float) -> np.ndarray:
    """Per-bin counts: Poisson shot noise on background plus n atoms whose
    individual rates scatter normally with ``sigma_rdet``."""
    n = np.asarray(atom_numbers, dtype=int)
    extra = rng.normal(0.0, 1.0, n.size) * np.sqrt(n) * sigma_rdet
    rate = np.maximum(r_n + n * r_det + extra, 0.0)
    return rng.poisson(rate).astype(float)


# --- autocorrelation -----------------------------------------------------------------

@dataclass(frozen=True)
class AutocorrResult:
    lags: np.ndarray
    acf: np.ndarray
    frequency: float
    visibility: float
    offset: float
    phase: float
    n_events: int
    low_confidence: bool = False

    def model(self, lags=None) -> np.ndarray:
        lags = self.lags if lags is None else np.asarray(lags)
        amp = self.visibility * self.offset
        return self.offset + amp * np.cos(2 * np.pi * self.frequency * lags + self.phase)


def pair_histogram(timestamps, max_lag: float, lag_bin: float) -> tuple:
    """Coincidence counts on the lag grid k * lag_bin, k = 0..K-1.

    Bin k >= 1 holds ordered pairs (i < j) with t_j - t_i within half a bin
    of k * lag_bin; bin 0 holds the N self-coincidences plus pairs closer
    than half a bin.
    """
    t = np.sort(np.asarray(timestamps, dtype=float))
    nb = int(round(max_lag / lag_bin))
    hist = np.zeros(nb, dtype=np.int64)
    hist[0] = t.size
    edge = (nb - 0.5) * lag_bin
    k = 1
    while k < t.size:
        d = t[k:] - t[:-k]
        sel = d < edge
        if not sel.any():
            break
        idx = np.floor(d[sel] / lag_bin + 0.5).astype(np.int64)
        hist += np.bincount(idx, minlength=nb)[:nb]
        k += 1
    return hist, np.arange(nb) * lag_bin


def autocorrelate(timestamps, max_lag: float, lag_bin: float, *,
                  min_events: int = 10_000) -> AutocorrResult:
    """Normalised intensity autocorrelation of a photon stream and the
    dominant oscillation in it.

    Coincidences are divided by their expectation for an uncorrelated stream
    with the same mean rate (with the finite-record correction), so the ACF
    is g2(tau) at tau > 0; the zero-lag bin carries the shot-noise peak of
    the self-coincidences and is the maximum.  The oscillation frequency
    starts at the largest periodogram peak over tau > 0 and is refined, with
    offset, amplitude and phase, by a sinusoid fit; visibility is
    amplitude / offset.
    """
    t = np.sort(np.asarray(timestamps, dtype=float))
    if t.size < 3:
        raise ValueError("need at least three events")
    if not (max_lag > 0 and lag_bin > 0 and 4 * lag_bin < max_lag):
        raise ValueError("need 0 < 4 lag_bin < max_lag")
    span = float(t[-1] - t[0])
    if span <= max_lag:
        raise ValueError("record shorter than max_lag")
    hist, lags = pair_histogram(t, max_lag, lag_bin)
    rate = (t.size - 1) / span
    width = np.full(lags.size, lag_bin)
    width[0] = 0.5 * lag_bin
    acf = hist / (t.size * rate * width * (1.0 - lags / span))

    x, y = lags[1:], acf[1:]
    yc = y - y.mean()
    pad = 16 * yc.size
    spec = np.abs(np.fft.rfft(yc * np.hanning(yc.size), pad))
    freqs = np.fft.rfftfreq(pad, lag_bin)
    lo = int(np.searchsorted(freqs, 1.5 / (x[-1] - x[0])))
    f0 = float(freqs[lo + int(np.argmax(spec[lo:]))])

    def resid(q):
        w = 2 * np.pi * q[3] * x
        return q[0] + q[1] * np.cos(w) + q[2] * np.sin(w) - y

    sol = optimize.least_squares(resid, [y.mean(), 0.0, 0.0, f0],
                                 x_scale=[1.0, 0.01, 0.01, max(f0, 1.0)])
    c0, a, b, f = sol.x
    amp = math.hypot(a, b)
    return AutocorrResult(lags, acf, abs(float(f)), float(min(amp / c0, 1.0)), float(c0),
                          float(math.atan2(-b, a)), int(t.size), bool(t.size < min_events))


def modulated_poisson(rng, rate: float, duration: float, depth: float, frequency: float,
                      phase: float = 0.0) -> np.ndarray:
    """Arrival times of a Poisson stream with rate r (1 + depth cos(2 pi f t + phase)),
    by thinning."""
    lam_max = rate * (1.0 + abs(depth))
    n = rng.poisson(lam_max * duration)
    t = np.sort(rng.uniform(0.0, duration, n))
    keep = rng.uniform(0.0, lam_max, n) < rate * (1.0 + depth * np.cos(2 * np.pi * frequency * t + phase))
    return t[keep]


# --- capture transient ---------------------------------------------------------------

@dataclass(frozen=True)
class TransientEstimate:
    beta: float
    delta_t: float
    onset: float
    settled_level: float
    resolved: bool = True
    baseline: str = "constant"
    drift: float = 0.0


def estimate_beta_transient(times, values, *, background: float = 0.0, noise: float | None = None,
                            onset: float | None = None, settle_fraction: float = 0.1,
                            hold: int = 3, settled_window: float = 0.25,
                            baseline: str = "constant") -> TransientEstimate:
    """Friction coefficient 1/(2 dt) from the settling of a capture transient.

    ``times`` are bin start times, ``values`` the rate or counts per bin.  The
    onset is the first bin more than 5 sigma above ``background`` (sigma
    defaults to sqrt(background), i.e. Poisson counts) unless given.  The
    settled level comes from the final ``settled_window`` fraction of the
    bins after the onset: their median (``baseline="constant"``) or a
    straight-line fit extrapolated back over the transient
    (``baseline="linear"``, for traces that keep drifting slowly after the
    fast transient).  dt runs from the onset to the first bin that starts
    ``hold`` consecutive bins within ``settle_fraction`` of that level.
    """
    t = np.asarray(times, dtype=float)
    v = np.asarray(values, dtype=float)
    if t.shape != v.shape or t.size < 4:
        raise ValueError("times and values must be equal-length arrays of at least 4 bins")
    if baseline not in ("constant", "linear"):
        raise ValueError("baseline must be 'constant' or 'linear'")
    width = float(t[1] - t[0])
    if onset is None:
        sigma = math.sqrt(max(background, 0.0)) if noise is None else noise
        above = np.nonzero(v > background + 5.0 * sigma)[0]
        if above.size == 0:
            raise ValueError("no capture onset found")
        i0 = int(above[0])
    else:
        i0 = max(int(np.searchsorted(t, onset, side="right") - 1), 0)
    tail_t, tail = t[i0:], v[i0:]
    n_tail = max(hold, int(round(settled_window * tail.size)))
    if tail.size < n_tail + 1:
        raise ValueError("trace too short after onset")
    drift = 0.0
    if baseline == "linear":
        drift, icpt = np.polyfit(tail_t[-n_tail:], tail[-n_tail:], 1)
        level = icpt + drift * tail_t
    else:
        level = np.full(tail.size, float(np.median(tail[-n_tail:])))
    if not np.all(level[-n_tail:] > background):
        raise ValueError("no transient: trace does not settle above background")
    ok = np.abs(tail - level) <= settle_fraction * np.abs(level)
    run = np.convolve(ok.astype(int), np.ones(hold, dtype=int), mode="valid") == hold
    hits = np.nonzero(run)[0]
    if hits.size == 0:
        raise ValueError("trace never settles")
    j = int(hits[0])
    if j == 0:
        return TransientEstimate(1.0 / (2.0 * width), width, float(t[i0]), float(level[0]),
                                 False, baseline, float(drift))
    dt = float(t[i0 + j] - t[i0])
    return TransientEstimate(1.0 / (2.0 * dt), dt, float(t[i0]), float(level[j]), True,
                             baseline, float(drift))


# --- coupling spread and temperature bounds ------------------------------------------

@dataclass(frozen=True)
class CouplingSpread:
    delta_g_over_g: float
    width: float
    nbar: float | None = None
    ground_state_probability: float | None = None


def bose_occupation(temperature: float, frequency: float) -> float:
    """Mean thermal occupation of an oscillator at ``frequency`` (Hz)."""
    if temperature <= 0:
        return 0.0
    x = H * frequency / (KB * temperature)
    return 0.0 if x > 700.0 else 1.0 / math.expm1(x)


def ground_state_probability(temperature: float, frequency: float) -> float:
    if temperature <= 0:
        return 1.0
    return -math.expm1(-H * frequency / (KB * temperature))


def coupling_spread(fit, params, geometry=None, *, temperature: float | None = None,
                    frequency: float | None = None) -> CouplingSpread:
    """Relative coupling spread from a histogram fit, and the matching
    spread of well positions along the standing wave.

    R_det scales with g^2, so dg/g = sigma(R_det) / (2 R_det).  The width is
    the displacement along the standing-wave axis at which the cavity-mode
    envelope exp(-x^2/w_cav^2) has dropped by dg/g.  If ``temperature`` and
    ``frequency`` are supplied the Bose occupation is included.
    """
    if isinstance(fit, HistogramFit):
        ratio = fit.sigma_rdet / fit.r_det
    else:
        ratio = float(fit)
    if not ratio >= 0:
        raise ValueError("relative spread must be non-negative")
    dg = 0.5 * ratio
    if dg >= 1.0:
        raise ValueError(f"dg/g = {dg:.3f} is not below 1")
    width = params.w_cav * math.sqrt(-math.log1p(-dg))
    nbar = p0 = None
    if temperature is not None:
        if frequency is None:
            from .model import trap_frequencies

            frequency = trap_frequencies(params, geometry).nu_sw
        nbar = bose_occupation(temperature, frequency)
        p0 = ground_state_probability(temperature, frequency)
    return CouplingSpread(dg, width, nbar, p0)
