"""Physical constants and the unit conventions used by config files.

Config files quote frequencies as ordinary frequencies in MHz (nu = omega / 2pi),
lengths in micrometres, times in microseconds and trap depths as temperatures
(mK or uK, i.e. depth / k_B).  Everything inside the package is SI with angular
frequencies in rad/s.
"""

import math

from scipy import constants as _c

HBAR = _c.hbar
H = _c.h
KB = _c.k
AMU = _c.atomic_mass
TWO_PI = 2.0 * math.pi

#: mass of 85Rb in kg
MASS_RB85 = 84.911789738 * AMU


def mhz_to_rad(nu_mhz: float) -> float:
    return TWO_PI * nu_mhz * 1e6


def rad_to_mhz(omega: float) -> float:
    return omega / (TWO_PI * 1e6)


def khz_to_hz(nu_khz: float) -> float:
    return nu_khz * 1e3


def hz_to_khz(nu: float) -> float:
    return nu / 1e3


def um_to_m(x_um: float) -> float:
    return x_um * 1e-6


def m_to_um(x: float) -> float:
    return x / 1e-6


def nm_to_m(x_nm: float) -> float:
    return x_nm * 1e-9


def m_to_nm(x: float) -> float:
    return x / 1e-9


def us_to_s(t_us: float) -> float:
    return t_us * 1e-6


def s_to_us(t: float) -> float:
    return t / 1e-6


def ms_to_s(t_ms: float) -> float:
    return t_ms * 1e-3


def s_to_ms(t: float) -> float:
    return t / 1e-3


def ns_to_s(t_ns: float) -> float:
    return t_ns * 1e-9


def s_to_ns(t: float) -> float:
    return t / 1e-9


def mk_to_joule(t_mk: float) -> float:
    """Trap depth quoted as a temperature in mK -> energy in J."""
    return KB * t_mk * 1e-3


def joule_to_mk(energy: float) -> float:
    return energy / KB / 1e-3


def uk_to_joule(t_uk: float) -> float:
    return KB * t_uk * 1e-6


def joule_to_uk(energy: float) -> float:
    return energy / KB / 1e-6
