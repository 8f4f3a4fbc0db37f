"""Velocity-dependent cooling forces, scattering rate and momentum diffusion.

Every friction term has the rank-one form F = -c a (a . v) with a fixed axis
vector a: the pump wave vector for the pump-axis force, grad g for the
cavity-axis force and grad Delta_S for the two standing-wave forces (cavity
retardation and Sisyphus).  The friction coefficient along a unit direction
e is therefore beta_e = c (a . e)^2 / m.
"""

import csv
from dataclasses import dataclass, replace
import math

import numpy as np

from . import _kernels as K
from .model import Geometry, SystemParams, pack_params, raw_fields
from .units import HBAR, rad_to_mhz


@dataclass(frozen=True)
class DiffusionChannels:
    """Momentum diffusion constants in (kg m/s)^2 / s.

    A Gaussian kick of variance 2 D dt is applied per channel: ``d_pump``
    along ``axis_pump`` (both beams), ``d_cav`` along ``axis_cav`` and
    ``d_spont`` shared equally by the three Cartesian axes.
    """

    d_pump: float
    d_cav: float
    d_spont: float
    axis_pump: tuple
    axis_cav: tuple

    def along(self, e) -> float:
        """Diffusion constant projected on unit direction ``e``."""
        e = np.asarray(e, dtype=float)
        return (self.d_pump * float(np.dot(self.axis_pump, e)) ** 2
                + self.d_cav * float(np.dot(self.axis_cav, e)) ** 2
                + self.d_spont / 3.0)


@dataclass(frozen=True)
class ForceBreakdown:
    f_pump: np.ndarray
    f_cav: np.ndarray
    f_sw_cav: np.ndarray
    f_sw_sis: np.ndarray
    f_cons: np.ndarray
    r_scat: float
    diffusion: DiffusionChannels
    saturated: bool = False

    @property
    def friction(self) -> np.ndarray:
        return self.f_pump + self.f_cav + self.f_sw_cav + self.f_sw_sis

    @property
    def total(self) -> np.ndarray:
        return self.friction + self.f_cons


def _finite3(x, name) -> np.ndarray:
    a = np.asarray(x, dtype=float).reshape(-1)
    if a.shape != (3,) or not np.all(np.isfinite(a)):
        raise ValueError(f"{name} must be a finite 3-vector, got {x!r}")
    return a


def _diffusion_from(params, geometry, fields) -> DiffusionChannels:
    d = np.zeros(3)
    K.diffusion_coefficients(pack_params(params, geometry), fields, 1.0, d)
    return DiffusionChannels(float(d[0]), float(d[1]), float(d[2]),
                             tuple(geometry.axis_pump), tuple(geometry.axis_cavity))


def evaluate_forces(params: SystemParams, geometry: Geometry, position, velocity) -> ForceBreakdown:
    """All forces, the cavity scattering rate and diffusion at (r, v)."""
    r = _finite3(position, "position")
    v = _finite3(velocity, "velocity")
    p = pack_params(params, geometry)
    f = raw_fields(params, geometry, r, packed=p)
    c = np.zeros(4)
    K.friction_coefficients(p, f, 1.0, c)

    a_pump = params.k_pump() * np.asarray(geometry.axis_pump)
    grad_g = f[K.F_GRAD_G:K.F_GRAD_G + 3]
    grad_s = f[K.F_GRAD_STARK:K.F_GRAD_STARK + 3]
    return ForceBreakdown(
        f_pump=-c[0] * a_pump * (a_pump @ v),
        f_cav=-c[1] * grad_g * (grad_g @ v),
        f_sw_cav=-c[2] * grad_s * (grad_s @ v),
        f_sw_sis=-c[3] * grad_s * (grad_s @ v),
        f_cons=f[K.F_FORCE:K.F_FORCE + 3].copy(),
        r_scat=float(f[K.F_RSCAT]),
        diffusion=_diffusion_from(params, geometry, f),
        saturated=bool(f[K.F_PE] > params.pe_cap),
    )


def scattering_rate(params: SystemParams, geometry: Geometry, position) -> float:
    """Photon scattering rate into the cavity mode (1/s)."""
    return float(raw_fields(params, geometry, position)[K.F_RSCAT])


def diffusion_channels(params: SystemParams, geometry: Geometry, position) -> DiffusionChannels:
    return _diffusion_from(params, geometry, raw_fields(params, geometry, position))


# --- friction spectra ---------------------------------------------------------

MODES = ("pump_on_atom", "cavity_on_atom")
AVERAGING = ("phase", "uniform", "thermal")


@dataclass(frozen=True)
class FrictionSpectrum:
    """Per-axis friction coefficients (1/s) versus cavity detuning (rad/s)."""

    delta_c_grid: np.ndarray
    beta_pump: np.ndarray
    beta_cav: np.ndarray
    beta_sw_cav: np.ndarray
    beta_sw_sis: np.ndarray
    mode: str = "pump_on_atom"
    averaging: str = "phase"

    @property
    def beta_sw_total(self) -> np.ndarray:
        return self.beta_sw_cav + self.beta_sw_sis

    def to_csv(self, path):
        """Write the spectrum with detunings in MHz and coefficients in 1/ms."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["delta_c_mhz", "beta_pump", "beta_cav", "beta_sw_cav",
                        "beta_sw_sis", "beta_sw_total"])
            for i, dc in enumerate(self.delta_c_grid):
                row = [self.beta_pump[i], self.beta_cav[i], self.beta_sw_cav[i],
                       self.beta_sw_sis[i], self.beta_sw_total[i]]
                w.writerow([repr(float(rad_to_mhz(dc)))] + [repr(float(b * 1e-3)) for b in row])


def detuned_params(params: SystemParams, delta_c: float, mode: str) -> SystemParams:
    """Set the cavity detuning while keeping either the pump or the cavity on
    the bare atomic resonance."""
    if mode == "pump_on_atom":
        return replace(params, delta_c=float(delta_c), delta_a=0.0)
    if mode == "cavity_on_atom":
        # omega_C = omega_A  =>  omega_A - omega_P = omega_C - omega_P
        return replace(params, delta_c=float(delta_c), delta_a=float(delta_c))
    raise ValueError(f"mode must be one of {MODES}, got {mode!r}")


def _line_average(params, geometry, axis, period, term, averaging, width, n):
    """Friction coefficient of one rank-one ``term`` along unit ``axis``,
    averaged over one lattice period of travel through the origin."""
    axis = np.asarray(axis, dtype=float)
    o = np.asarray(geometry.origin)
    s = (np.arange(n) + 0.5) / n * period - 0.5 * period
    p = pack_params(params, geometry)
    k_pump = params.k_pump()
    proj2 = np.empty(n)
    local = np.empty(n)
    stark = np.empty(n)
    g2 = np.empty(n)
    omega2 = np.empty(n)
    c = np.zeros(4)
    for i, si in enumerate(s):
        f = raw_fields(params, geometry, o + si * axis, packed=p)
        K.friction_coefficients(p, f, 1.0, c)
        if term == 0:
            a = k_pump * np.asarray(geometry.axis_pump)
        elif term == 1:
            a = f[K.F_GRAD_G:K.F_GRAD_G + 3]
        else:
            a = f[K.F_GRAD_STARK:K.F_GRAD_STARK + 3]
        proj2[i] = float(a @ axis) ** 2
        local[i] = c[term] * proj2[i]
        stark[i] = f[K.F_STARK]
        g2[i] = f[K.F_G] ** 2
        omega2[i] = f[K.F_OMEGA] ** 2

    if averaging == "uniform":
        return float(local.mean()) / params.mass
    if averaging == "thermal":
        w = np.exp(-0.5 * (s / width) ** 2)
        return float((local * w).sum() / w.sum()) / params.mass

    # phase: period-mean field values inserted in the local prefactor,
    # multiplied by the mean-square projected gradient
    da = params.delta_a + stark.mean()
    lat = da * da + params.gamma ** 2
    pe = omega2.mean() / lat
    dc, kap = params.delta_c, params.kappa
    lor = kap * dc / (dc * dc + kap * kap) ** 2
    if term == 0:
        pref = 8.0 * HBAR * lor * g2.mean() * pe
    elif term == 1:
        pref = 4.0 * HBAR * lor * pe
    elif term == 2:
        pref = 4.0 * HBAR * lor * g2.mean() * pe / lat
    else:
        pref = 4.0 * HBAR * da / (2.0 * params.gamma * lat) * pe * pe
    return pref * float(proj2.mean()) / params.mass


def axis_friction(params: SystemParams, geometry: Geometry, *, averaging: str = "phase",
                  thermal_width: dict | None = None, n: int = 256) -> dict:
    """Spatially averaged beta (1/s) for each friction term along its axis.

    ``averaging``:

    * ``"phase"`` -- mean-square gradient over one lattice period times the
      prefactor evaluated at the period-mean Stark shift, coupling and pump
      strength (default);
    * ``"uniform"`` -- plain average of the local coefficient over a period;
    * ``"thermal"`` -- local coefficient weighted by a Gaussian of width
      ``thermal_width[axis]`` (m) about the antinode; defaults to the
      ground-state width of each lattice axis.
    """
    if averaging not in AVERAGING:
        raise ValueError(f"averaging must be one of {AVERAGING}, got {averaging!r}")
    if averaging == "thermal" and thermal_width is None:
        from .model import trap_frequencies

        nu = trap_frequencies(params, geometry)
        wid = {}
        for key, f in (("sw", nu.nu_sw), ("cav", nu.nu_cav), ("pump", nu.nu_sw)):
            wid[key] = math.sqrt(HBAR / (2.0 * params.mass * 2.0 * math.pi * f))
        thermal_width = wid
    wid = thermal_width or {}
    sw_period = params.lambda_trap / 2.0
    cos45 = float(np.dot(geometry.axis_pump, geometry.axis_sw))
    out = {
        "pump": _line_average(params, geometry, geometry.axis_pump, sw_period / cos45, 0,
                              averaging, wid.get("pump"), n),
        "cav": _line_average(params, geometry, geometry.axis_cavity, params.lambda_cavity, 1,
                             averaging, wid.get("cav"), n),
        "sw_cav": _line_average(params, geometry, geometry.axis_sw, sw_period, 2,
                                averaging, wid.get("sw"), n),
        "sw_sis": _line_average(params, geometry, geometry.axis_sw, sw_period, 3,
                                averaging, wid.get("sw"), n),
    }
    return out


def friction_spectrum(params: SystemParams, geometry: Geometry, delta_c_grid,
                      config_mode: str = "pump_on_atom", *, averaging: str = "phase",
                      thermal_width: dict | None = None, n: int = 256) -> FrictionSpectrum:
    """Averaged friction coefficients over a grid of cavity detunings."""
    grid = np.asarray(delta_c_grid, dtype=float).reshape(-1)
    if grid.size == 0:
        raise ValueError("delta_c_grid is empty")
    if not np.all(np.isfinite(grid)):
        raise ValueError("delta_c_grid must be finite")
    rows = []
    for dc in grid:
        b = axis_friction(detuned_params(params, dc, config_mode), geometry,
                          averaging=averaging, thermal_width=thermal_width, n=n)
        rows.append((b["pump"], b["cav"], b["sw_cav"], b["sw_sis"]))
    rows = np.array(rows)
    return FrictionSpectrum(grid, rows[:, 0], rows[:, 1], rows[:, 2], rows[:, 3],
                            mode=config_mode, averaging=averaging)
