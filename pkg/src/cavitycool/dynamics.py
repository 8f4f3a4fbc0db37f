"""Trajectory integration, trap schedules, capture/loss bookkeeping and ensembles.

The integrator is an OBABO splitting with fixed step: half a step of exact
exponential friction plus Gaussian momentum kicks, a velocity-Verlet step of
the conservative dipole forces, and another friction/kick half step.  Friction
coefficients and diffusion constants come from the local fields, evaluated
once per step and reused across the split.

Random streams
--------------
Each trajectory draws from ``numpy.random.SeedSequence(seed, spawn_key=(index,
stream))`` with ``stream`` 0 for the dynamics (background-loss time and the
seed of the compiled Mersenne twister), 1 for the initial condition and 2 for
photon emission.  Results therefore depend only on (seed, index), never on how
trajectories are spread over worker processes.
"""

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
import csv
import json
import math

import numpy as np

from . import _kernels as K
from .model import Geometry, SystemParams, max_timestep, pack_params, trap_frequencies
from .units import KB

STREAM_DYNAMICS = 0
STREAM_INITIAL = 1
STREAM_PHOTONS = 2

LOSS_REASONS = {
    K.LOSS_NONE: None,
    K.LOSS_REGION: "left_region",
    K.LOSS_TUBE: "left_tube",
    K.LOSS_BACKGROUND: "background",
    K.LOSS_NONFINITE: "non_finite",
}


def stream(seed: int, index: int, kind: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(int(index), int(kind))))


@dataclass(frozen=True)
class AtomState:
    position: tuple
    velocity: tuple
    bright: bool = True
    t: float = 0.0

    def __post_init__(self):
        r = tuple(float(x) for x in self.position)
        v = tuple(float(x) for x in self.velocity)
        if len(r) != 3 or len(v) != 3:
            raise ValueError("position and velocity must be 3-vectors")
        if not all(math.isfinite(x) for x in r + v + (self.t,)):
            raise ValueError("atom state must be finite")
        object.__setattr__(self, "position", r)
        object.__setattr__(self, "velocity", v)

    def sample(self, params, geometry, rng):
        return self


@dataclass(frozen=True)
class ScheduleSpec:
    """Time dependence of one run.

    The standing-wave depth is multiplied by ``1 + mod_eps sin(2 pi mod_freq t)``
    and, inside the filter window, by a cosine ramp down to ``filter_floor``
    over ``ramp`` seconds, a hold, and the mirror-image ramp back up.  The pump
    is on inside any of ``pump_windows``; ``None`` means on throughout.
    """

    duration: float
    mod_eps: float = 0.0
    mod_freq: float = 0.0
    pump_windows: tuple | None = None
    filter_start: float = 0.0
    filter_duration: float = 0.0
    ramp: float = 100e-6
    filter_floor: float = 0.0

    def __post_init__(self):
        if self.pump_windows is not None:
            object.__setattr__(self, "pump_windows",
                               tuple((float(a), float(b)) for a, b in self.pump_windows))
        self.validate()

    def validate(self):
        if not (math.isfinite(self.duration) and self.duration > 0.0):
            raise ValueError("duration must be positive")
        if not 0.0 <= self.mod_eps < 1.0:
            raise ValueError(f"mod_eps must lie in [0, 1), got {self.mod_eps!r}")
        if self.mod_freq < 0.0:
            raise ValueError("mod_freq must be non-negative")
        for a, b in self.windows():
            if not (0.0 <= a <= b <= self.duration):
                raise ValueError(f"pump window ({a}, {b}) outside [0, {self.duration}]")
        if self.filter_duration < 0.0 or self.filter_start < 0.0:
            raise ValueError("filter window must be non-negative")
        if self.filter_duration > 0.0:
            if self.filter_start + self.filter_duration > self.duration:
                raise ValueError("filter window extends past the end of the run")
            if 2.0 * self.ramp > self.filter_duration:
                raise ValueError("filter ramps longer than the filter window")
        if not 0.0 <= self.filter_floor <= 1.0:
            raise ValueError("filter_floor must lie in [0, 1]")

    def windows(self) -> tuple:
        if self.pump_windows is None:
            return ((0.0, self.duration),)
        return self.pump_windows

    def packed(self) -> tuple:
        s = np.zeros(K.S_SIZE)
        s[K.S_MOD_EPS] = self.mod_eps
        s[K.S_MOD_FREQ] = self.mod_freq
        s[K.S_FILTER_START] = self.filter_start
        s[K.S_FILTER_DURATION] = self.filter_duration
        s[K.S_RAMP] = self.ramp
        s[K.S_FILTER_FLOOR] = self.filter_floor
        s[K.S_DURATION] = self.duration
        w = np.array(self.windows(), dtype=float).reshape(-1, 2)
        return s, w

    def trap_factor(self, t: float) -> float:
        s, _ = self.packed()
        return float(K.trap_factor(s, float(t)))


@dataclass
class TrajectoryRecord:
    """Output of :func:`run_trajectory`.

    ``samples`` columns: t, x, y, z, vx, vy, vz, R_scat (zero while dark),
    bright.  ``rates`` columns: bin start, mean emitted rate (R_scat while
    bright), mean intrinsic rate (R_scat as if bright), one row per
    ``rate_dt``.
    """

    samples: np.ndarray
    rates: np.ndarray
    rate_dt: float
    dt: float
    duration: float
    final: AtomState
    captured_at: float | None
    lost_at: float | None
    loss_reason: str | None
    pe_violations: int
    steps: int
    seed: int
    index: int
    events: list = field(default_factory=list)
    fast_forward_at: float | None = None

    @property
    def survived(self) -> bool:
        return self.lost_at is None

    @property
    def end_time(self) -> float:
        return self.duration if self.lost_at is None else self.lost_at

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "x", "y", "z", "vx", "vy", "vz", "R_scat", "bright"])
            for row in self.samples:
                w.writerow([repr(float(x)) for x in row[:8]] + [int(row[8])])

    def events_jsonl(self, path):
        with open(path, "w") as fh:
            for ev in self.events:
                fh.write(json.dumps(ev, sort_keys=True) + "\n")


def _events(schedule, captured_at, lost_at, reason, fast_forward_at):
    ev = []
    if schedule.filter_duration > 0.0:
        ev.append({"t": schedule.filter_start, "event": "filter_start"})
        ev.append({"t": schedule.filter_start + schedule.filter_duration, "event": "filter_end"})
    if captured_at is not None:
        ev.append({"t": captured_at, "event": "capture"})
    if fast_forward_at is not None:
        ev.append({"t": fast_forward_at, "event": "static_trap_fast_forward"})
    if lost_at is not None:
        ev.append({"t": lost_at, "event": "loss", "reason": reason})
    ev.sort(key=lambda e: e["t"])
    return ev


def check_timestep(params, geometry, dt):
    limit = max_timestep(params, geometry)
    if not (dt > 0.0 and dt <= limit * (1.0 + 1e-9)):
        raise ValueError(f"dt = {dt:.3e} s exceeds 1/(50 nu_sw) = {limit:.3e} s")


def default_timestep(params, geometry) -> float:
    """Largest multiple of 1 ns below 1/(50 nu_sw)."""
    return math.floor(max_timestep(params, geometry) * 1e9) * 1e-9


def run_trajectory(initial, params: SystemParams, geometry: Geometry, schedule: ScheduleSpec,
                   seed: int = 0, *, index: int = 0, dt: float | None = None,
                   stride: int | None = None, rate_stride: int | None = None,
                   friction: float = 1.0, noise: float = 1.0, blinking: bool = True,
                   region_sw: float = 50e-6, harmonic: tuple | None = None,
                   check_dt: bool = True) -> TrajectoryRecord:
    """Integrate one atom until it is lost or ``schedule.duration`` is reached.

    Capture: kinetic energy plus standing-wave potential stays negative for
    10 us (the event time is the start of that interval).  Loss: the atom is
    unbound from its standing-wave well *and* farther than 3 w_sw from the
    trap axis, or it leaves |x_sw| <= ``region_sw``, or the background-gas
    channel fires.
    """
    if harmonic is None:
        if dt is None:
            dt = default_timestep(params, geometry)
        elif check_dt:
            check_timestep(params, geometry, dt)
    elif dt is None:
        raise ValueError("dt is required for the harmonic test well")

    if not isinstance(initial, AtomState):
        initial = initial.sample(params, geometry, stream(seed, index, STREAM_INITIAL))

    nsteps = int(round((schedule.duration - initial.t) / dt))
    if nsteps <= 0:
        raise ValueError("initial time is past the end of the schedule")
    if stride is None:
        stride = max(1, nsteps // 2000)
    if rate_stride is None:
        rate_stride = max(1, nsteps // 200000)

    rng = stream(seed, index, STREAM_DYNAMICS)
    t_bg = initial.t + rng.exponential(1.0 / params.loss_rate) if params.loss_rate > 0 else -1.0
    K.seed_rng(int(rng.integers(2 ** 32)))

    p = pack_params(params, geometry, friction=friction, noise=noise, region_sw=region_sw,
                    blinking=blinking, harmonic=harmonic)
    sched, windows = schedule.packed()
    r = np.array(initial.position)
    v = np.array(initial.velocity)
    state = np.array([initial.t, 1.0 if initial.bright else 0.0, -1.0, -1.0, -1.0,
                      K.LOSS_NONE, 0, 0, 0, 0, t_bg, -1.0])
    samples = np.zeros((nsteps // stride + 2, 9))
    rates = np.zeros((nsteps // rate_stride + 2, 3))
    K.integrate(p, sched, windows, r, v, state, dt, nsteps, stride, rate_stride, samples, rates)

    lost_at = state[4] if state[5] != K.LOSS_NONE else None
    reason = LOSS_REASONS[int(state[5])]
    captured_at = state[3] if state[3] >= 0.0 else None
    ff = state[11] if state[11] >= 0.0 else None
    final = AtomState(tuple(r), tuple(v), bool(state[1]), float(state[0])) \
        if reason != "non_finite" else AtomState(initial.position, initial.velocity, False, float(state[0]))
    return TrajectoryRecord(
        samples=samples[: int(state[8])],
        rates=rates[: int(state[9])],
        rate_dt=rate_stride * dt,
        dt=dt,
        duration=schedule.duration,
        final=final,
        captured_at=captured_at,
        lost_at=lost_at,
        loss_reason=reason,
        pe_violations=int(state[6]),
        steps=int(state[7]),
        seed=int(seed),
        index=int(index),
        events=_events(schedule, captured_at, lost_at, reason, ff),
        fast_forward_at=ff,
    )


def step(state: AtomState, params: SystemParams, geometry: Geometry, schedule: ScheduleSpec,
         dt: float, rng: np.random.Generator, **options) -> AtomState:
    """Advance ``state`` by a single integration step.

    The compiled generator is reseeded from ``rng`` so repeated calls with
    one Generator form a reproducible stream.  Options are those of
    :func:`run_trajectory` (``friction``, ``noise``, ``blinking``,
    ``harmonic``).
    """
    harmonic = options.get("harmonic")
    if harmonic is None and options.get("check_dt", True):
        check_timestep(params, geometry, dt)
    K.seed_rng(int(rng.integers(2 ** 32)))
    p = pack_params(params, geometry, friction=options.get("friction", 1.0),
                    noise=options.get("noise", 1.0), blinking=options.get("blinking", True),
                    region_sw=options.get("region_sw", 50e-6), harmonic=harmonic)
    sched, windows = schedule.packed()
    r = np.array(state.position)
    v = np.array(state.velocity)
    st = np.array([state.t, 1.0 if state.bright else 0.0, -1.0, -1.0, -1.0,
                   K.LOSS_NONE, 0, 0, 0, 0, -1.0, -1.0])
    K.integrate(p, sched, windows, r, v, st, dt, 1, 1, 1, np.zeros((1, 9)), np.zeros((1, 3)))
    if st[5] == K.LOSS_NONFINITE:
        raise FloatingPointError(f"non-finite state after step from t = {state.t!r}")
    return AtomState(tuple(r), tuple(v), bool(st[1]), float(st[0]))


# --- initial conditions -------------------------------------------------------

@dataclass(frozen=True)
class ThermalWell:
    """Thermal (harmonic-approximation) state in one standing-wave well."""

    temperature: float
    well: int = 0

    def sample(self, params, geometry, rng):
        nu = trap_frequencies(params, geometry)
        m = params.mass
        kt = KB * self.temperature
        sig = [math.sqrt(kt / (m * (2 * math.pi * f) ** 2)) for f in (nu.nu_sw, nu.nu_cav, nu.nu_perp)]
        x = rng.normal(0.0, 1.0, 3) * sig
        u = rng.normal(0.0, math.sqrt(kt / m), 3)
        x[0] += self.well * params.lambda_trap / 2.0
        frame = geometry.frame()
        return AtomState(tuple(np.asarray(geometry.origin) + x @ frame), tuple(u @ frame))


@dataclass(frozen=True)
class Launch:
    """Hot atom entering along the standing wave from ``start_well``.

    The longitudinal speed is drawn from a 1-D thermal distribution at
    ``temperature`` conditioned on exceeding the well barrier, and points
    toward the crossing point.  Transverse motion is thermal at
    ``transverse_temperature`` in the radial harmonic approximation.
    """

    temperature: float = 5e-3
    start_well: int = -60
    transverse_temperature: float = 50e-6

    def sample(self, params, geometry, rng):
        m = params.mass
        barrier = params.u_sw + params.u_ic
        sigma_v = math.sqrt(KB * self.temperature / m)
        while True:
            speed = abs(rng.normal(0.0, sigma_v))
            if 0.5 * m * speed * speed > barrier:
                break
        direction = -1.0 if self.start_well > 0 else 1.0
        nu = trap_frequencies(params, geometry)
        kt = KB * self.transverse_temperature
        x = np.zeros(3)
        u = np.zeros(3)
        x[0] = self.start_well * params.lambda_trap / 2.0
        u[0] = direction * speed
        for i, f in ((1, nu.nu_cav), (2, nu.nu_perp)):
            x[i] = rng.normal(0.0, math.sqrt(kt / (m * (2 * math.pi * f) ** 2)))
            u[i] = rng.normal(0.0, math.sqrt(kt / m))
        frame = geometry.frame()
        return AtomState(tuple(np.asarray(geometry.origin) + x @ frame), tuple(u @ frame))


# --- ensembles ----------------------------------------------------------------

@dataclass(frozen=True)
class TrajectorySpec:
    """Everything :func:`run_trajectory` needs apart from (seed, index)."""

    initial: object
    params: SystemParams
    geometry: Geometry
    schedule: ScheduleSpec
    dt: float | None = None
    options: dict = field(default_factory=dict)


def _run_one(args):
    spec, seed, index = args
    return run_trajectory(spec.initial, spec.params, spec.geometry, spec.schedule, seed,
                          index=index, dt=spec.dt, **spec.options)


def run_ensemble(n: int, spec: TrajectorySpec, seed: int = 0, *, workers: int = 1,
                 start: int = 0) -> list:
    """``n`` independent trajectories, returned in index order."""
    if n < 1:
        raise ValueError("ensemble size must be at least 1")
    jobs = [(spec, seed, start + i) for i in range(n)]
    if workers <= 1:
        return [_run_one(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run_one, jobs, chunksize=max(1, n // (4 * workers))))


def survival_data(records) -> tuple:
    """(times, lost flags) for lifetime estimation."""
    times = np.array([r.end_time for r in records])
    lost = np.array([not r.survived for r in records])
    return times, lost
