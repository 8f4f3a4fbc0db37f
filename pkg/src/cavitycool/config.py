"""Flat ``key = value`` scenario files.

One setting per line, ``#`` starts a comment.  The unit is part of the key
name: ``_mhz`` / ``_khz`` / ``_hz`` are ordinary frequencies (nu, not omega),
``_um`` / ``_mm`` / ``_nm`` lengths, ``_ns`` / ``_us`` / ``_ms`` / ``_s``
times and ``_mk`` / ``_uk`` trap depths quoted as temperatures.  Unknown keys,
duplicates and out-of-range values are errors; all problems in a file are
reported together with their line numbers.

Settings omitted from a file take the defaults of the scenario ``kind``
(see :data:`KIND_DEFAULTS`) and then the global defaults listed in the
shipped ``default.cfg``.  ``seed`` defaults to 0.
"""

from dataclasses import dataclass, field
from importlib import resources
import math

from . import units as U
from .dynamics import Launch, ScheduleSpec, ThermalWell
from .model import Geometry, SystemParams

KINDS = ("capture", "storage", "lifetime_sweep", "histogram", "frictionmap", "calibrate")


class ConfigError(ValueError):
    """Aggregated configuration problems; ``errors`` holds (line, key, message)."""

    def __init__(self, errors):
        self.errors = list(errors)
        lines = []
        for line, key, msg in self.errors:
            where = f"line {line}: " if line else ""
            lines.append(f"{where}{key}: {msg}" if key else f"{where}{msg}")
        super().__init__("\n".join(lines))


# --- value parsers ------------------------------------------------------------

def _float(text):
    v = float(text)
    if not math.isfinite(v):
        raise ValueError("must be finite")
    return v


def _int(text):
    v = float(text)
    if v != int(v):
        raise ValueError("must be an integer")
    return int(v)


def _bool(text):
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError("must be true or false")


def _word(text):
    return text.strip()


def _vector(text):
    parts = text.replace(",", " ").split()
    if len(parts) != 3:
        raise ValueError("must be three numbers")
    return tuple(_float(p) for p in parts)


def _floats(text):
    parts = [p for p in text.replace(",", " ").split() if p]
    if not parts:
        raise ValueError("must list at least one number")
    return tuple(_float(p) for p in parts)


def _windows(text):
    """``a-b, c-d`` in the key's time unit; ``none`` for no pump at all."""
    t = text.strip().lower()
    if t in ("none", "off"):
        return ()
    if t in ("all", "on", "always"):
        return None
    out = []
    for chunk in text.split(","):
        a, sep, b = chunk.strip().partition("-")
        if not sep:
            raise ValueError("windows are written start-end, comma separated")
        out.append((_float(a), _float(b)))
    return tuple(out)


@dataclass(frozen=True)
class Key:
    parse: object
    scale: float = 1.0
    check: str = ""
    doc: str = ""

    def to_si(self, value):
        if self.scale == 1.0 or value is None or isinstance(value, (bool, str)):
            return value
        if isinstance(value, tuple):
            if value and isinstance(value[0], tuple):
                return tuple((a * self.scale, b * self.scale) for a, b in value)
            return tuple(v * self.scale for v in value)
        return value * self.scale


MHZ = U.TWO_PI * 1e6
UK = U.KB * 1e-6
MK = U.KB * 1e-3

KEYS = {
    # scenario
    "kind": Key(_word, doc="capture | storage | lifetime_sweep | histogram | frictionmap | calibrate"),
    "seed": Key(_int, check=">=0"),
    "n_trajectories": Key(_int, check=">0"),
    "dt_ns": Key(_float, 1e-9, ">0", "fixed step; default is the largest whole ns below 1/(50 nu_sw)"),
    # system parameters
    "g0_mhz": Key(_float, MHZ, ">0"),
    "kappa_mhz": Key(_float, MHZ, ">0"),
    "gamma_mhz": Key(_float, MHZ, ">0"),
    "delta_c_mhz": Key(_float, MHZ, "", "cavity minus pump"),
    "delta_a_mhz": Key(_float, MHZ, "", "atom minus pump, without the Stark shift"),
    "pump_rabi_mhz": Key(_float, MHZ, ">=0", "pump Rabi frequency 2 Omega"),
    "mass_amu": Key(_float, U.AMU, ">0"),
    "lambda_cavity_nm": Key(_float, 1e-9, ">0"),
    "lambda_trap_nm": Key(_float, 1e-9, ">0"),
    "lambda_intracavity_nm": Key(_float, 1e-9, ">0"),
    "lambda_pump_nm": Key(_float, 1e-9, ">0"),
    "trap_depth_mk": Key(_float, MK, ">=0"),
    "stark_shift_mhz": Key(_float, MHZ, ">=0"),
    "intracavity_depth_uk": Key(_float, UK, ">=0"),
    "w_sw_um": Key(_float, 1e-6, ">0"),
    "w_pump_um": Key(_float, 1e-6, ">0"),
    "w_cav_um": Key(_float, 1e-6, ">0", "omit to derive from the resonator geometry"),
    "cavity_length_mm": Key(_float, 1e-3, ">0"),
    "mirror_radius_mm": Key(_float, 1e-3, ">0"),
    "intracavity_phase": Key(_float, 1.0, "", "rad, offset of the 785 nm lattice"),
    "duty_bright": Key(_float, 1.0, "(0,1]"),
    "bright_dwell_us": Key(_float, 1e-6, ">0"),
    "eta_det": Key(_float, 1.0, "(0,1]"),
    "background_rate_hz": Key(_float, 1.0, ">=0", "detector background counts/s"),
    "loss_rate_hz": Key(_float, 1.0, ">=0", "background-gas loss rate"),
    "gravity_ms2": Key(_vector, 1.0, "", "m/s^2"),
    "pe_cap": Key(_float, 1.0, ">0", "P_E above this is counted as a validity violation"),
    # geometry
    "axis_cavity": Key(_vector),
    "axis_sw": Key(_vector),
    "axis_pump": Key(_vector),
    # schedule
    "duration_ms": Key(_float, 1e-3, ">0"),
    "mod_eps": Key(_float, 1.0, "[0,1)"),
    "mod_freq_khz": Key(_float, 1e3, ">=0"),
    "pump_windows_ms": Key(_windows, 1e-3, "", "all | none | a-b, c-d"),
    "filter_start_ms": Key(_float, 1e-3, ">=0"),
    "filter_duration_ms": Key(_float, 1e-3, ">=0"),
    "ramp_us": Key(_float, 1e-6, ">0"),
    "filter_floor": Key(_float, 1.0, "[0,1]"),
    # integrator options
    "blinking": Key(_bool),
    "friction_scale": Key(_float, 1.0, ">=0"),
    "noise_scale": Key(_float, 1.0, ">=0"),
    "region_sw_um": Key(_float, 1e-6, ">0"),
    # initial conditions
    "initial": Key(_word, doc="launch | thermal"),
    "launch_temperature_mk": Key(_float, 1e-3, ">0", "K"),
    "start_well": Key(_int),
    "transverse_temperature_uk": Key(_float, 1e-6, ">0", "K"),
    "initial_temperature_uk": Key(_float, 1e-6, ">0", "K"),
    "initial_well": Key(_int),
    # analysis / kind-specific
    "rate_bin_us": Key(_float, 1e-6, ">0", "bin of the capture rate trace"),
    "settle_fraction": Key(_float, 1.0, "(0,1)"),
    "settle_hold": Key(_int, check=">0"),
    "count_bin_ms": Key(_float, 1e-3, ">0"),
    "sweep_delta_c_mhz": Key(_floats, MHZ),
    "include_pump_off": Key(_bool),
    "friction_mode": Key(_word, doc="pump_on_atom | cavity_on_atom"),
    "averaging": Key(_word, doc="phase | uniform | thermal"),
    "delta_c_min_mhz": Key(_float, MHZ),
    "delta_c_max_mhz": Key(_float, MHZ),
    "delta_c_steps": Key(_int, check=">1"),
    "n_max": Key(_int, check=">0"),
    "atom_weights": Key(_floats, 1.0, "", "probability of 0..n_max atoms per bin"),
    "histogram_bins": Key(_int, check=">0", doc="number of 10 ms count intervals"),
    "well_spread_um": Key(_float, 1e-6, ">=0", "rms spread of trap sites along the standing wave"),
}

PARAM_KEYS = {
    "g0_mhz": "g0", "kappa_mhz": "kappa", "gamma_mhz": "gamma", "delta_c_mhz": "delta_c",
    "delta_a_mhz": "delta_a", "mass_amu": "mass", "lambda_cavity_nm": "lambda_cavity",
    "lambda_trap_nm": "lambda_trap", "lambda_intracavity_nm": "lambda_intracavity",
    "lambda_pump_nm": "lambda_pump", "trap_depth_mk": "u_sw", "stark_shift_mhz": "stark_max",
    "intracavity_depth_uk": "u_ic", "w_sw_um": "w_sw", "w_pump_um": "w_pump", "w_cav_um": "w_cav",
    "cavity_length_mm": "cavity_length", "mirror_radius_mm": "mirror_radius",
    "intracavity_phase": "ic_phase", "duty_bright": "duty_bright", "bright_dwell_us": "bright_dwell",
    "eta_det": "eta_det", "background_rate_hz": "background_rate", "loss_rate_hz": "loss_rate",
    "gravity_ms2": "gravity", "pe_cap": "pe_cap",
}

#: per-kind defaults, in config units, applied under the file's own values
KIND_DEFAULTS = {
    "capture": {
        "delta_c_mhz": 2.0, "pump_rabi_mhz": 50.0, "duration_ms": 1.0, "n_trajectories": 20,
        "initial": "launch", "start_well": -4, "region_sw_um": 50.0,
    },
    "storage": {
        "pump_windows_ms": "none", "duration_ms": 6000.0, "loss_rate_hz": 1 / 2.7,
        "n_trajectories": 50, "initial": "thermal", "count_bin_ms": 10.0,
    },
    "lifetime_sweep": {
        "mod_eps": 0.3, "mod_freq_khz": 25.0, "duration_ms": 20.0, "n_trajectories": 500,
        "initial": "thermal", "sweep_delta_c_mhz": "-5, 0, 5, 50", "include_pump_off": "true",
    },
    "histogram": {"histogram_bins": 2000, "n_max": 3},
    "frictionmap": {},
    "calibrate": {"delta_c_mhz": 2.0},
}


def default_text() -> str:
    return resources.files("cavitycool").joinpath("data/default.cfg").read_text()


def parse_lines(text: str):
    """(values, lines, errors) for one file; values are in config units."""
    values, lines, errors = {}, {}, []
    for n, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep or not key:
            errors.append((n, None, f"expected 'key = value', got {raw.strip()!r}"))
            continue
        if key not in KEYS:
            errors.append((n, key, "unknown key"))
            continue
        if key in values:
            errors.append((n, key, f"duplicate key (first set on line {lines[key]})"))
            continue
        try:
            values[key] = KEYS[key].parse(value)
        except ValueError as exc:
            errors.append((n, key, f"invalid value {value.strip()!r}: {exc}"))
            continue
        msg = _range_error(KEYS[key].check, values[key])
        if msg:
            errors.append((n, key, msg))
        lines[key] = n
    return values, lines, errors


def _range_error(check, v):
    if not check or isinstance(v, (tuple, str, bool)) or v is None:
        return None
    ok = {
        ">0": v > 0, ">=0": v >= 0, ">1": v > 1, "(0,1]": 0 < v <= 1,
        "[0,1)": 0 <= v < 1, "[0,1]": 0 <= v <= 1, "(0,1)": 0 < v < 1,
    }[check]
    return None if ok else f"value {v!r} out of range {check}"


@dataclass(frozen=True)
class Scenario:
    """Fully resolved scenario: physics objects plus the settings they came from.

    ``values`` keeps every setting in config units (the manifest records it);
    ``settings`` holds the kind-specific analysis options in SI.
    """

    kind: str
    params: SystemParams
    geometry: Geometry
    schedule: ScheduleSpec
    n_trajectories: int
    seed: int
    initial: object
    dt: float | None
    options: dict
    settings: dict
    values: dict = field(default_factory=dict)

    def with_seed(self, seed: int) -> "Scenario":
        from dataclasses import replace

        v = dict(self.values)
        v["seed"] = int(seed)
        return replace(self, seed=int(seed), values=v)


def _defaults():
    values, _, errors = parse_lines(default_text())
    if errors:  # pragma: no cover - shipped file is tested
        raise ConfigError(errors)
    return values


def validate_config(text: str, *, overrides: dict | None = None) -> Scenario:
    """Parse and validate a scenario file; raises :class:`ConfigError`.

    ``overrides`` are config-unit values (e.g. from the command line) that take
    precedence over the file.
    """
    user, lines, errors = parse_lines(text)
    if errors:
        raise ConfigError(errors)
    kind = (overrides or {}).get("kind", user.get("kind", "capture"))
    if kind not in KINDS:
        raise ConfigError([(lines.get("kind"), "kind", f"must be one of {', '.join(KINDS)}")])

    values = _defaults()
    values.pop("w_cav_um", None)
    for k, v in KIND_DEFAULTS[kind].items():
        values[k] = KEYS[k].parse(str(v)) if isinstance(v, str) else v
    values.update(user)
    values.update(overrides or {})
    values["kind"] = kind
    return _build(values, lines)


def resolve_default(kind: str = "capture") -> Scenario:
    return validate_config(f"kind = {kind}\n")


def _build(values, lines) -> Scenario:
    errors = []

    def err(key, msg):
        errors.append((lines.get(key), key, msg))

    si = {k: KEYS[k].to_si(v) for k, v in values.items()}
    kind = values["kind"]

    kw = {attr: si[k] for k, attr in PARAM_KEYS.items() if k in si}
    kw["omega0"] = 0.5 * si["pump_rabi_mhz"]
    try:
        params = SystemParams(**kw)
    except ValueError as exc:
        err(None, f"system parameters: {exc}")
        params = None
    try:
        geometry = Geometry(si["axis_cavity"], si["axis_sw"], si["axis_pump"])
    except ValueError as exc:
        err("axis_pump", str(exc))
        geometry = None
    try:
        schedule = ScheduleSpec(
            duration=si["duration_ms"], mod_eps=si["mod_eps"], mod_freq=si["mod_freq_khz"],
            pump_windows=si["pump_windows_ms"], filter_start=si["filter_start_ms"],
            filter_duration=si["filter_duration_ms"], ramp=si["ramp_us"],
            filter_floor=si["filter_floor"])
    except ValueError as exc:
        err("duration_ms", f"schedule: {exc}")
        schedule = None

    initial = None
    if values["initial"] == "launch":
        initial = Launch(si["launch_temperature_mk"], values["start_well"],
                         si["transverse_temperature_uk"])
    elif values["initial"] == "thermal":
        initial = ThermalWell(si["initial_temperature_uk"], values["initial_well"])
    else:
        err("initial", "must be 'launch' or 'thermal'")

    if values["friction_mode"] not in ("pump_on_atom", "cavity_on_atom"):
        err("friction_mode", "must be pump_on_atom or cavity_on_atom")
    if values["averaging"] not in ("phase", "uniform", "thermal"):
        err("averaging", "must be phase, uniform or thermal")

    if kind == "lifetime_sweep":
        if not values.get("sweep_delta_c_mhz"):
            err("sweep_delta_c_mhz", "lifetime_sweep needs a detuning grid")
        if not (values["mod_eps"] > 0 and values["mod_freq_khz"] > 0):
            err("mod_eps", "lifetime_sweep needs a trap modulation (mod_eps > 0, mod_freq_khz > 0)")
    if kind == "frictionmap" and not values["delta_c_max_mhz"] > values["delta_c_min_mhz"]:
        err("delta_c_max_mhz", "must exceed delta_c_min_mhz")
    if kind == "histogram":
        w = values.get("atom_weights")
        if w is not None:
            if len(w) != values["n_max"] + 1:
                err("atom_weights", f"needs n_max + 1 = {values['n_max'] + 1} entries")
            elif any(x < 0 for x in w) or not math.isclose(sum(w), 1.0, rel_tol=1e-9):
                err("atom_weights", "must be non-negative and sum to 1")
    if errors:
        raise ConfigError(errors)

    options = {"blinking": values["blinking"], "friction": si["friction_scale"],
               "noise": si["noise_scale"], "region_sw": si["region_sw_um"]}
    keys = ("rate_bin_us", "settle_fraction", "settle_hold", "count_bin_ms", "sweep_delta_c_mhz",
            "include_pump_off", "friction_mode", "averaging", "delta_c_min_mhz", "delta_c_max_mhz",
            "delta_c_steps", "n_max", "atom_weights", "histogram_bins", "well_spread_um")
    settings = {k: si[k] for k in keys if k in si}
    return Scenario(kind, params, geometry, schedule, values["n_trajectories"], values["seed"],
                    initial, si.get("dt_ns"), options, settings, dict(values))


def format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if v is None:
        return "all"
    if isinstance(v, tuple):
        if not v:
            return "none"
        if isinstance(v[0], tuple):
            return ", ".join(f"{float(a)!r}-{float(b)!r}" for a, b in v)
        return ", ".join(repr(float(x)) for x in v)
    return repr(float(v)) if isinstance(v, float) else str(v)


def dump(values: dict) -> str:
    """Config text that parses back to ``values``."""
    return "".join(f"{k} = {format_value(values[k])}\n" for k in sorted(values))
