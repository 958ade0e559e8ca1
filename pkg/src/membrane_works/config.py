"""Toolkit configuration file.

Grammar: INI-style sections of ``key = value`` lines; ``#`` and ``;`` start
comments. Section and key names are fixed and unknown ones are rejected.
Keys carry their unit as a suffix (``side_length_um``, ``kappa_ext_khz``,
``linewidth_millihz``); values are converted to SI on load.

Every key is optional and defaults to the reference device::

    [membrane]
    side_length_um = 500
    thickness_nm = 50
    density_kg_m3 = 3210
    stress_x_mpa = 242.95
    stress_y_mpa = 245.81
    youngs_modulus_gpa = 437
    poisson_ratio = 0.268

    [system]
    cavity_ghz = 5.39
    kappa_ext_khz = 100.25
    kappa_int_khz = 100
    g0_hz = 10
    temperature_mk = 10
    mode1_freq_khz = 871.93
    mode1_linewidth_millihz = 8.13
    mode1_energy_decay_millihz = 6.13
    mode2_freq_khz = 885.39
    mode2_linewidth_millihz = 5.63
    mode2_energy_decay_millihz = 4.4

    [swap]
    period_s = 2.1
    period_convention = oscillation      # or: exchange
    detuning_khz = 1800
    duration_s = 10
    balance = 1                          # G1 / G2
    mismatch_hz = 0
    damping = energy                     # or: linewidth
    model = adiabatic                    # or: explicit
    cavity_damping = true
    lossless = false
    imbalance_db = 3
    cooling_ratio = 1000
    cooling_duration_s = 0.02
    excitation_phonons = 10000
    excitation_duration_s = 0.02
    readout_gain_per_s = 20
    readout_duration_s = 0.005
    samples_per_phase = 1000

    [analysis]
    mean_stress = mean                   # or: x, y
    tau_grid = octave                    # or: comma-separated seconds
    seed = 0
    n_seeds = 100
    noise_hz = 10
    min_segments = 3

    [output]
    directory = membrane_works_out
    verbosity = warning
"""

from __future__ import annotations

import configparser
import decimal
import hashlib
import math
from dataclasses import dataclass, field
from pathlib import Path

from .electromech import (
    EMSystem,
    MechModeParams,
    ProtocolSchedule,
    bose_occupation,
    coupling_for_period,
    reference_schedule,
)
from .errors import ValidationError
from .membrane import MembraneSpec


def _positive(x):
    return math.isfinite(x) and x > 0


def _nonneg(x):
    return math.isfinite(x) and x >= 0


def _finite(x):
    return math.isfinite(x)


def _choice(*options):
    def check(x):
        return x in options
    check.options = options
    return check


# key -> (kind, default, scale to SI, check)
SCHEMA = {
    "membrane": {
        "side_length_um": ("float", 500.0, 1e-6, _positive),
        "thickness_nm": ("float", 50.0, 1e-9, _positive),
        "density_kg_m3": ("float", 3210.0, 1.0, _positive),
        "stress_x_mpa": ("float", 242.95, 1e6, _positive),
        "stress_y_mpa": ("float", 245.81, 1e6, _positive),
        "youngs_modulus_gpa": ("float", 437.0, 1e9, _positive),
        "poisson_ratio": ("float", 0.268, 1.0, lambda x: 0 <= x < 0.5),
    },
    "system": {
        "cavity_ghz": ("float", 5.39, 1e9, _positive),
        "kappa_ext_khz": ("float", 100.25, 1e3, _positive),
        "kappa_int_khz": ("float", 100.0, 1e3, _positive),
        "g0_hz": ("float", 10.0, 1.0, _positive),
        "temperature_mk": ("float", 10.0, 1e-3, _positive),
        "mode1_freq_khz": ("float", 871.93, 1e3, _positive),
        "mode1_linewidth_millihz": ("float", 8.13, 1e-3, _positive),
        "mode1_energy_decay_millihz": ("float", 6.13, 1e-3, _positive),
        "mode2_freq_khz": ("float", 885.39, 1e3, _positive),
        "mode2_linewidth_millihz": ("float", 5.63, 1e-3, _positive),
        "mode2_energy_decay_millihz": ("float", 4.4, 1e-3, _positive),
    },
    "swap": {
        "period_s": ("float", 2.1, 1.0, _positive),
        "period_convention": ("str", "oscillation", None, _choice("oscillation", "exchange")),
        "detuning_khz": ("float", 1800.0, 1e3, lambda x: math.isfinite(x) and x != 0),
        "duration_s": ("float", 10.0, 1.0, _positive),
        "balance": ("float", 1.0, 1.0, _positive),
        "mismatch_hz": ("float", 0.0, 1.0, _finite),
        "damping": ("str", "energy", None, _choice("energy", "linewidth")),
        "model": ("str", "adiabatic", None, _choice("adiabatic", "explicit")),
        "cavity_damping": ("bool", True, None, None),
        "lossless": ("bool", False, None, None),
        "imbalance_db": ("float", 3.0, 1.0, _nonneg),
        "cooling_ratio": ("float", 1000.0, 1.0, _nonneg),
        "cooling_duration_s": ("float", 0.02, 1.0, _positive),
        "excitation_phonons": ("float", 1e4, 1.0, _positive),
        "excitation_duration_s": ("float", 0.02, 1.0, _positive),
        "readout_gain_per_s": ("float", 20.0, 1.0, _nonneg),
        "readout_duration_s": ("float", 0.005, 1.0, _positive),
        "samples_per_phase": ("int", 1000, None, lambda x: x >= 2),
    },
    "analysis": {
        "mean_stress": ("str", "mean", None, _choice("mean", "x", "y")),
        "tau_grid": ("taus", None, None, None),
        "seed": ("int", 0, None, lambda x: 0 <= x < 2 ** 64),
        "n_seeds": ("int", 100, None, lambda x: x >= 2),
        "noise_hz": ("float", 10.0, 1.0, _nonneg),
        "min_segments": ("int", 3, None, lambda x: x >= 1),
    },
    "output": {
        "directory": ("str", "membrane_works_out", None, lambda x: bool(x)),
        "verbosity": ("str", "warning", None, _choice("debug", "info", "warning", "error")),
    },
}


def _parse_value(section, key, raw):
    kind, _, scale, check = SCHEMA[section][key]
    name = f"{section}.{key}"
    try:
        if kind == "float":
            # decimal scaling gives the correctly rounded SI value (50 nm -> 5e-08)
            value = float(decimal.Decimal(raw.strip()) * decimal.Decimal(repr(scale)))
        elif kind == "int":
            value = int(raw)
        elif kind == "bool":
            low = raw.strip().lower()
            if low not in ("true", "false", "yes", "no", "1", "0", "on", "off"):
                raise ValueError(raw)
            value = low in ("true", "yes", "1", "on")
        elif kind == "taus":
            low = raw.strip().lower()
            value = None if low == "octave" else tuple(float(t) for t in raw.split(",") if t.strip())
            if value is not None and (not value or not all(_positive(t) for t in value)):
                raise ValueError(raw)
        else:
            value = raw.strip()
    except (ValueError, decimal.InvalidOperation):
        raise ValidationError(f"{name}: cannot parse {raw!r} as {kind}", field=name) from None
    if check is not None and not check(value):
        hint = f" (one of {', '.join(check.options)})" if hasattr(check, "options") else ""
        raise ValidationError(f"{name}: value {raw!r} is out of range{hint}", field=name)
    return value


@dataclass(frozen=True)
class ToolkitConfig:
    """Parsed configuration in SI units, keyed as ``values[section][key]``."""

    values: dict = field(repr=False)
    source: str | None = None
    digest: str = ""

    def __getitem__(self, section):
        return self.values[section]

    def membrane_spec(self) -> MembraneSpec:
        m = self.values["membrane"]
        return MembraneSpec(
            m["side_length_um"], m["thickness_nm"], m["density_kg_m3"], m["stress_x_mpa"],
            m["stress_y_mpa"], m["youngs_modulus_gpa"], m["poisson_ratio"],
        )

    def mean_stress(self) -> float:
        m = self.values["membrane"]
        rule = self.values["analysis"]["mean_stress"]
        if rule == "x":
            return m["stress_x_mpa"]
        if rule == "y":
            return m["stress_y_mpa"]
        return 0.5 * (m["stress_x_mpa"] + m["stress_y_mpa"])

    def em_system(self) -> EMSystem:
        s = self.values["system"]
        temp = s["temperature_mk"]
        modes = tuple(
            MechModeParams(
                s[f"mode{i}_freq_khz"], s[f"mode{i}_linewidth_millihz"], s[f"mode{i}_energy_decay_millihz"],
                s["g0_hz"], bose_occupation(s[f"mode{i}_freq_khz"], temp),
            )
            for i in (1, 2)
        )
        return EMSystem(s["cavity_ghz"], s["kappa_ext_khz"], s["kappa_int_khz"], modes)

    def swap_coupling(self) -> float:
        w = self.values["swap"]
        return coupling_for_period(w["period_s"], w["period_convention"])

    def schedule(self, system: EMSystem | None = None) -> ProtocolSchedule:
        w = self.values["swap"]
        return reference_schedule(
            system or self.em_system(),
            swap_period_s=w["period_s"],
            convention=w["period_convention"],
            detuning=w["detuning_khz"],
            swap_duration=w["duration_s"],
            balance=w["balance"],
            mismatch=w["mismatch_hz"],
            cooling_ratio=w["cooling_ratio"],
            cooling_duration=w["cooling_duration_s"],
            excitation_phonons=w["excitation_phonons"],
            excitation_duration=w["excitation_duration_s"],
            readout_gain_rate=w["readout_gain_per_s"],
            readout_duration=w["readout_duration_s"],
        )

    def sim_options(self) -> dict:
        w = self.values["swap"]
        opts = {
            "damping": w["damping"],
            "swap_model": w["model"],
            "cavity_damping": w["cavity_damping"],
            "samples_per_phase": w["samples_per_phase"],
        }
        if w["lossless"]:
            opts.update(damping_scale=0.0, cavity_damping=False)
        return opts


def _defaults():
    return {sec: {k: spec[1] if spec[2] is None else _parse_value(sec, k, repr(spec[1])) for k, spec in keys.items()}
            for sec, keys in SCHEMA.items()}


def parse_config(text: str, source: str | None = None) -> ToolkitConfig:
    parser = configparser.ConfigParser(
        interpolation=None, inline_comment_prefixes=("#", ";"), strict=True, empty_lines_in_values=False
    )
    parser.optionxform = str
    try:
        parser.read_string(text, source=source or "<config>")
    except configparser.Error as exc:
        raise ValidationError(f"config syntax error: {exc}", field="config") from None
    values = _defaults()
    for section in parser.sections():
        if section not in SCHEMA:
            raise ValidationError(f"unknown config section [{section}]", field=section)
        for key, raw in parser.items(section):
            if key not in SCHEMA[section]:
                raise ValidationError(f"unknown key {key!r} in [{section}]", field=f"{section}.{key}")
            values[section][key] = _parse_value(section, key, raw)
    digest = hashlib.sha256(text.encode()).hexdigest()
    cfg = ToolkitConfig(values, source, digest)
    # validate referenced blocks now rather than at first use
    cfg.membrane_spec()
    cfg.em_system()
    return cfg


def load_config(path=None) -> ToolkitConfig:
    """Read ``path``; ``None`` gives the reference defaults."""
    if path is None:
        return parse_config("", None)
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ValidationError(f"cannot read config {p}: {exc.strerror}", field="config") from None
    return parse_config(text, str(p))
