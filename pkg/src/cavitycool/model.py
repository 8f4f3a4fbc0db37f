"""System parameters, lattice geometry and the local field maps.

The atom sits at the crossing of three beams: a standing-wave dipole trap
(1030 nm), the cavity mode (780 nm) with its weak intracavity lattice (785 nm),
and a retro-reflected pump (780 nm).  All field shapes are simple Gaussian
beams, without curvature or Gouy phase, which is adequate because every
Rayleigh range is far larger than the +-50 um region that is simulated.
"""

from dataclasses import dataclass, field, replace
import math

import numpy as np

from . import _kernels as K
from .units import HBAR, MASS_RB85, TWO_PI, mk_to_joule, mhz_to_rad, uk_to_joule


def resonator_waist(length: float, mirror_radius: float, wavelength: float) -> float:
    """TEM00 waist of a symmetric two-mirror resonator.

    w0^2 = (L lambda / pi) * sqrt((1 + g) / (4 (1 - g))) with g = 1 - L/R.
    """
    g = 1.0 - length / mirror_radius
    if not -1.0 < g < 1.0:
        raise ValueError(f"unstable resonator (g = {g:.4f})")
    return math.sqrt(length * wavelength / math.pi * math.sqrt((1.0 + g) / (4.0 * (1.0 - g))))


@dataclass(frozen=True)
class SystemParams:
    """Physical constants and experiment settings, all SI / rad s^-1.

    Laser and cavity frequencies are stored as the two detunings that enter
    the physics: ``delta_c`` = omega_C - omega_P and ``delta_a`` =
    omega_A - omega_P.  ``omega0`` is the peak Rabi half-frequency Omega
    (the pump Rabi frequency is 2 Omega).
    """

    g0: float = mhz_to_rad(5.0)
    kappa: float = mhz_to_rad(5.0)
    gamma: float = mhz_to_rad(3.0)
    delta_c: float = 0.0
    delta_a: float = 0.0
    omega0: float = mhz_to_rad(15.0)
    mass: float = MASS_RB85
    lambda_cavity: float = 780e-9
    lambda_trap: float = 1030e-9
    lambda_intracavity: float = 785e-9
    lambda_pump: float = 780e-9
    u_sw: float = mk_to_joule(2.5)
    stark_max: float = mhz_to_rad(100.0)
    u_ic: float = uk_to_joule(30.0)
    w_sw: float = 16e-6
    w_pump: float = 35e-6
    w_cav: float | None = None
    cavity_length: float = 0.5e-3
    mirror_radius: float = 0.05
    ic_phase: float = 0.0
    duty_bright: float = 0.2
    bright_dwell: float = 10e-6
    eta_det: float = 0.05
    background_rate: float = 0.0
    loss_rate: float = 0.0
    gravity: tuple = (0.0, 0.0, 0.0)
    pe_cap: float = 0.5

    def __post_init__(self):
        if self.w_cav is None:
            w = resonator_waist(self.cavity_length, self.mirror_radius, self.lambda_cavity)
            object.__setattr__(self, "w_cav", w)
        object.__setattr__(self, "gravity", tuple(float(x) for x in self.gravity))
        self.validate()

    def validate(self):
        positive = ("g0", "kappa", "gamma", "mass", "lambda_cavity", "lambda_trap",
                    "lambda_intracavity", "lambda_pump", "w_sw", "w_pump", "w_cav",
                    "cavity_length", "mirror_radius", "bright_dwell", "pe_cap")
        for name in positive:
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0.0):
                raise ValueError(f"{name} must be strictly positive, got {value!r}")
        nonneg = ("omega0", "u_sw", "stark_max", "u_ic", "background_rate", "loss_rate")
        for name in nonneg:
            value = getattr(self, name)
            if not (math.isfinite(value) and value >= 0.0):
                raise ValueError(f"{name} must be non-negative, got {value!r}")
        for name in ("delta_c", "delta_a", "ic_phase"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")
        if not 0.0 < self.duty_bright <= 1.0:
            raise ValueError(f"duty_bright must lie in (0, 1], got {self.duty_bright!r}")
        if not 0.0 < self.eta_det <= 1.0:
            raise ValueError(f"eta_det must lie in (0, 1], got {self.eta_det!r}")
        if len(self.gravity) != 3 or not all(math.isfinite(x) for x in self.gravity):
            raise ValueError("gravity must be a finite 3-vector")

    @property
    def dark_dwell(self) -> float:
        """Mean dark dwell fixed by the bright fraction; 0 means never dark."""
        if self.duty_bright >= 1.0:
            return 0.0
        return self.bright_dwell * (1.0 - self.duty_bright) / self.duty_bright

    def k_cavity(self) -> float:
        return TWO_PI / self.lambda_cavity

    def k_trap(self) -> float:
        return TWO_PI / self.lambda_trap

    def k_intracavity(self) -> float:
        return TWO_PI / self.lambda_intracavity

    def k_pump(self) -> float:
        return TWO_PI / self.lambda_pump

    def with_(self, **changes) -> "SystemParams":
        """Copy with changes; a derived cavity waist is recomputed."""
        if "w_cav" not in changes and any(
            k in changes for k in ("cavity_length", "mirror_radius", "lambda_cavity")
        ):
            changes["w_cav"] = None
        return replace(self, **changes)


def _unit(v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    n = np.linalg.norm(v)
    if not n > 0.0:
        raise ValueError("axis vectors must be non-zero")
    return v / n


@dataclass(frozen=True)
class Geometry:
    """Beam axes through a common crossing point.

    Default frame: standing wave along x, cavity along z, pump in the x-y
    plane at 45 degrees to the standing wave.
    """

    axis_cavity: tuple = (0.0, 0.0, 1.0)
    axis_sw: tuple = (1.0, 0.0, 0.0)
    axis_pump: tuple = (math.sqrt(0.5), math.sqrt(0.5), 0.0)
    origin: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        for name in ("axis_cavity", "axis_sw", "axis_pump"):
            object.__setattr__(self, name, tuple(_unit(getattr(self, name))))
        object.__setattr__(self, "origin", tuple(float(x) for x in self.origin))
        self.validate()

    def validate(self, tol: float = 1e-12):
        c, s, p = (np.array(a) for a in (self.axis_cavity, self.axis_sw, self.axis_pump))
        if abs(c @ s) > tol:
            raise ValueError("cavity axis must be orthogonal to the standing-wave axis")
        if abs(c @ p) > tol:
            raise ValueError("pump axis must be orthogonal to the cavity axis")
        if abs(s @ p - math.sqrt(0.5)) > tol:
            raise ValueError("pump axis must make 45 degrees with the standing-wave axis")

    @property
    def axis_perp(self) -> tuple:
        """Unit vector orthogonal to both the cavity and the trapping laser."""
        return tuple(np.cross(self.axis_cavity, self.axis_sw))

    def frame(self) -> np.ndarray:
        """Rows: standing-wave, cavity and perpendicular axes."""
        return np.array([self.axis_sw, self.axis_cavity, self.axis_perp])

    def lattice_to_lab(self, x_sw=0.0, x_cav=0.0, x_perp=0.0) -> np.ndarray:
        return np.asarray(self.origin) + np.array([x_sw, x_cav, x_perp]) @ self.frame()


@dataclass(frozen=True)
class FieldSample:
    g: float
    grad_g: np.ndarray
    stark: float
    grad_stark: np.ndarray
    omega: float
    delta_a: float
    p_e: float
    u_total: float
    grad_u: np.ndarray
    saturated: bool = field(default=False)


def pack_params(params: SystemParams, geometry: Geometry, *, friction: float = 1.0,
                noise: float = 1.0, region_sw: float = 50e-6, tube: float | None = None,
                capture_hold: float = 10e-6, blinking: bool = True,
                harmonic: tuple | None = None) -> np.ndarray:
    """Flatten parameters for the compiled kernels.

    ``harmonic`` = (omega_xyz, beta_xyz, diffusion_xyz) switches the kernels
    to a separable harmonic test well with constant friction and diffusion.
    """
    p = np.zeros(K.P_SIZE)
    p[K.P_G0] = params.g0
    p[K.P_KAPPA] = params.kappa
    p[K.P_GAMMA] = params.gamma
    p[K.P_DELTA_C] = params.delta_c
    p[K.P_DELTA_AP] = params.delta_a
    p[K.P_OMEGA0] = params.omega0
    p[K.P_MASS] = params.mass
    p[K.P_K_CAV] = params.k_cavity()
    p[K.P_K_TRAP] = params.k_trap()
    p[K.P_K_IC] = params.k_intracavity()
    p[K.P_K_PUMP] = params.k_pump()
    p[K.P_U_SW] = params.u_sw
    p[K.P_STARK] = params.stark_max
    p[K.P_U_IC] = params.u_ic
    p[K.P_W_SW] = params.w_sw
    p[K.P_W_PUMP] = params.w_pump
    p[K.P_W_CAV] = params.w_cav
    p[K.P_IC_PHASE] = params.ic_phase
    p[K.P_ORIGIN:K.P_ORIGIN + 3] = geometry.origin
    p[K.P_E_SW:K.P_E_SW + 3] = geometry.axis_sw
    p[K.P_E_CAV:K.P_E_CAV + 3] = geometry.axis_cavity
    p[K.P_E_PUMP:K.P_E_PUMP + 3] = geometry.axis_pump
    p[K.P_GRAV:K.P_GRAV + 3] = params.gravity
    p[K.P_HBAR] = HBAR
    p[K.P_FRICTION] = friction
    p[K.P_NOISE] = noise
    p[K.P_PE_CAP] = params.pe_cap
    if harmonic is not None:
        omega, beta, diff = harmonic
        p[K.P_HARMONIC] = 1.0
        p[K.P_H_OMEGA:K.P_H_OMEGA + 3] = omega
        p[K.P_H_BETA:K.P_H_BETA + 3] = beta
        p[K.P_H_DIFF:K.P_H_DIFF + 3] = diff
    p[K.P_TAU_BRIGHT] = params.bright_dwell
    p[K.P_TAU_DARK] = params.dark_dwell if blinking else 0.0
    p[K.P_LOSS_RATE] = params.loss_rate
    p[K.P_REGION_SW] = region_sw
    p[K.P_TUBE] = 3.0 * params.w_sw if tube is None else tube
    p[K.P_CAPTURE_HOLD] = capture_hold
    return p


def _check_position(position) -> np.ndarray:
    r = np.asarray(position, dtype=float).reshape(-1)
    if r.shape != (3,):
        raise ValueError("position must be a 3-vector")
    if not np.all(np.isfinite(r)):
        raise ValueError(f"non-finite position {position!r}")
    return r


def raw_fields(params: SystemParams, geometry: Geometry, position, *, trap_factor: float = 1.0,
               pump_on: bool = True, packed: np.ndarray | None = None) -> np.ndarray:
    """Kernel field vector at ``position``; layout given by ``_kernels.F_*``."""
    r = _check_position(position)
    p = pack_params(params, geometry) if packed is None else packed
    out = np.zeros(K.F_SIZE)
    K.eval_fields(p, r, float(trap_factor), 1.0 if pump_on else 0.0, out)
    return out


def sample_fields(params: SystemParams, geometry: Geometry, position) -> FieldSample:
    """Local coupling, Stark shift, pump strength, P_E and potential.

    P_E is the low-saturation expression Omega^2 / (Delta_A^2 + gamma^2) used
    as is; ``saturated`` flags points where it exceeds ``params.pe_cap``.
    """
    f = raw_fields(params, geometry, position)
    return FieldSample(
        g=f[K.F_G],
        grad_g=f[K.F_GRAD_G:K.F_GRAD_G + 3].copy(),
        stark=f[K.F_STARK],
        grad_stark=f[K.F_GRAD_STARK:K.F_GRAD_STARK + 3].copy(),
        omega=f[K.F_OMEGA],
        delta_a=f[K.F_DELTA_A],
        p_e=f[K.F_PE],
        u_total=f[K.F_U],
        grad_u=-f[K.F_FORCE:K.F_FORCE + 3].copy(),
        saturated=bool(f[K.F_PE] > params.pe_cap),
    )


@dataclass(frozen=True)
class TrapFrequencies:
    nu_sw: float
    nu_cav: float
    nu_perp: float

    def as_dict(self) -> dict:
        return {"nu_sw": self.nu_sw, "nu_cav": self.nu_cav, "nu_perp": self.nu_perp}


def curvature(params: SystemParams, geometry: Geometry, axis, step: float = 1e-10) -> float:
    """d^2 U / ds^2 at the origin along ``axis``, from the analytic force."""
    axis = _unit(axis)
    p = pack_params(params, geometry)
    o = np.asarray(geometry.origin)
    fp = raw_fields(params, geometry, o + step * axis, packed=p)[K.F_FORCE:K.F_FORCE + 3]
    fm = raw_fields(params, geometry, o - step * axis, packed=p)[K.F_FORCE:K.F_FORCE + 3]
    return -float((fp - fm) @ axis) / (2.0 * step)


def trap_frequencies(params: SystemParams, geometry: Geometry) -> TrapFrequencies:
    """Harmonic frequencies (Hz) at the origin along the three lattice axes.

    Raises ``ValueError`` if the origin is not a minimum along every axis.
    """
    names = ("standing-wave", "cavity", "perpendicular")
    axes = (geometry.axis_sw, geometry.axis_cavity, geometry.axis_perp)
    nus = []
    for name, axis in zip(names, axes):
        k = curvature(params, geometry, axis)
        if not k > 0.0:
            raise ValueError(f"no confinement along the {name} axis (curvature {k:.3e} J/m^2)")
        nus.append(math.sqrt(k / params.mass) / TWO_PI)
    return TrapFrequencies(*nus)


def max_timestep(params: SystemParams, geometry: Geometry, steps_per_period: int = 50) -> float:
    """Upper bound on the integration step: 1 / (50 nu_sw)."""
    k = curvature(params, geometry, geometry.axis_sw)
    if not k > 0.0:
        raise ValueError("standing-wave axis is not confining")
    return 1.0 / (steps_per_period * math.sqrt(k / params.mass) / TWO_PI)
