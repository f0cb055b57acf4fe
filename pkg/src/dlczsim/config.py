"""Line-oriented experiment configuration.

The file format is ``dotted.key = value`` with one entry per line and
``#`` comments, chosen so parameter sweeps diff cleanly.  Physical
quantities must carry a unit suffix (``50 ns``, ``0.3 mW``, ``5.2 MHz``,
``100 um``, ``3.5 mW/cm^2``); bare numbers are rejected for them.
Frequencies are quoted as ordinary (linear) frequencies and stored as
angular rates.  Emission chooses, per value, a display unit that
round-trips bit-exactly, so ``parse(emit(config)) == config`` holds.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, replace

from .physics import AtomSpec, EnsembleSpec, ReadoutSpec, chi_from_od, ensemble_is_consistent
from .source import DECOHERENCE_LAWS, NUMBER_LAWS, SourceModel, TrialTiming, check_timing

SCHEMA_VERSION = 1

TIME_UNITS = {"s": 1.0, "ms": 1e-3, "us": 1e-6, "ns": 1e-9}
POWER_UNITS = {"W": 1.0, "mW": 1e-3, "uW": 1e-6}
LENGTH_UNITS = {"m": 1.0, "mm": 1e-3, "um": 1e-6, "nm": 1e-9}
INTENSITY_UNITS = {"W/m^2": 1.0, "mW/cm^2": 10.0}
FREQUENCY_UNITS = {  # linear frequency suffixes, stored as angular rad/s
    "rad/s": 1.0,
    "Hz": 2.0 * math.pi,
    "kHz": 2.0 * math.pi * 1e3,
    "MHz": 2.0 * math.pi * 1e6,
    "GHz": 2.0 * math.pi * 1e9,
}

_DIMENSIONS = {
    "time": TIME_UNITS,
    "power": POWER_UNITS,
    "length": LENGTH_UNITS,
    "intensity": INTENSITY_UNITS,
    "frequency": FREQUENCY_UNITS,
}
_DISPLAY_ORDER = {
    "time": ("ns", "us", "ms", "s"),
    "power": ("mW", "uW", "W"),
    "length": ("um", "nm", "mm", "m"),
    "intensity": ("mW/cm^2", "W/m^2"),
    "frequency": ("MHz", "rad/s"),
}


class ConfigError(ValueError):
    """Invalid configuration file or inconsistent parameter set."""


def parse_quantity(text: str, dimension: str, key: str = "?") -> float:
    """Parse ``"50 ns"`` style values into SI (angular for frequencies)."""
    units = _DIMENSIONS[dimension]
    parts = text.split()
    if len(parts) != 2:
        raise ConfigError(
            f"{key}: physical quantity needs an explicit unit, got {text!r}")
    value, unit = parts
    if unit not in units:
        raise ConfigError(f"{key}: unknown {dimension} unit {unit!r}")
    try:
        return float(value) * units[unit]
    except ValueError:
        raise ConfigError(f"{key}: cannot parse number {value!r}")


def format_quantity(value: float, dimension: str) -> str:
    """Emit with the nicest display unit that round-trips exactly."""
    value = float(value)
    units = _DIMENSIONS[dimension]
    for unit in _DISPLAY_ORDER[dimension]:
        scaled = value / units[unit]
        if scaled * units[unit] == value and (value == 0 or 1e-4 <= abs(scaled) < 1e7):
            return f"{scaled!r} {unit}"
    si_unit = next(u for u, f in units.items() if f == 1.0)
    return f"{value!r} {si_unit}"


@dataclass(frozen=True)
class SweepSpec:
    """One swept variable with the per-point source scaling."""

    variable: str
    values: tuple
    retrieval_scaling: str = "none"
    retrieval_max: float = 0.5
    retrieval_od_half: float = 3.0

    VARIABLES = ("od", "power", "delay", "mean_excitation")

    def __post_init__(self):
        if self.variable not in self.VARIABLES:
            raise ConfigError(f"unknown sweep variable {self.variable!r}")
        if len(self.values) < 1:
            raise ConfigError("sweep needs at least one value")
        if self.retrieval_scaling not in ("none", "saturating_quadratic"):
            raise ConfigError(
                f"unknown retrieval scaling {self.retrieval_scaling!r}")


@dataclass(frozen=True)
class ProbeSpec:
    """Probe-pulse settings for the optical-depth commands."""

    od: float | None = None
    duration: float = 500e-9
    rise_time: float = 30e-9
    sample_period: float = 1e-9
    n_samples: int = 4096
    detuning: float = 0.0
    noise: float = 0.0
    scan_points: int = 11
    scan_span: float = 2.0 * math.pi * 30e6

    def __post_init__(self):
        if self.od is not None and self.od < 0:
            raise ConfigError("probe.od must be >= 0")
        if self.noise < 0:
            raise ConfigError("probe.noise must be >= 0")
        if self.scan_points < 5:
            raise ConfigError("probe.scan_points must be >= 5")


@dataclass(frozen=True)
class ExperimentConfig:
    """Complete description of one run; hashable for provenance."""

    atom: AtomSpec
    ensemble: EnsembleSpec
    readout: ReadoutSpec
    model: SourceModel
    timing: TrialTiming
    seed: int
    schema_version: int = SCHEMA_VERSION
    chi_auto: bool = False
    sweep: SweepSpec | None = None
    probe: ProbeSpec | None = None

    def __post_init__(self):
        check_timing(self.model, self.timing)
        if not ensemble_is_consistent(self.ensemble, self.atom):
            raise ConfigError(
                "ensemble.n_atoms does not reproduce ensemble.od through the "
                "single-atom cross section")
        if self.chi_auto:
            expected = chi_from_od(self.ensemble.od, self.atom)
            if not math.isclose(self.readout.chi, expected, rel_tol=1e-12):
                raise ConfigError("chi_auto set but chi does not match 1 + beta*OD")

    @property
    def config_hash(self) -> str:
        digest = hashlib.sha256(emit_config(self).encode()).hexdigest()
        return digest[:16]

    def at_sweep_point(self, value: float) -> "ExperimentConfig":
        """Specialize the config to one sweep point (sweep removed)."""
        if self.sweep is None:
            raise ConfigError("config has no sweep section")
        var = self.sweep.variable
        cfg = replace(self, sweep=None)
        if var == "od":
            ensemble = replace(self.ensemble, od=value, n_atoms=None)
            readout = self.readout
            if self.chi_auto:
                readout = replace(readout, chi=chi_from_od(value, self.atom))
            model = self.model
            if self.sweep.retrieval_scaling == "saturating_quadratic":
                half = self.sweep.retrieval_od_half
                eff = self.sweep.retrieval_max * value ** 2 / (value ** 2 + half ** 2)
                model = replace(model, retrieval_efficiency=eff)
            return replace(cfg, ensemble=ensemble, readout=readout, model=model)
        if var == "power":
            return replace(cfg, readout=replace(self.readout, power=value))
        if var == "delay":
            return replace(cfg, model=replace(self.model, write_read_delay=value))
        return replace(cfg, model=replace(self.model, mean_excitation=value))


def _parse_lines(text: str) -> dict[str, str]:
    entries: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key or not value:
            raise ConfigError(f"line {lineno}: empty key or value")
        if key in entries:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        entries[key] = value
    return entries


def _take(entries, key, default=None, required=False):
    if key in entries:
        return entries.pop(key)
    if required:
        raise ConfigError(f"missing required key {key!r}")
    return default


def _float(text: str, key: str) -> float:
    try:
        return float(text)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse number {text!r}")


def _int(text: str, key: str) -> int:
    try:
        return int(text)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse integer {text!r}")


def parse_config(text: str) -> ExperimentConfig:
    entries = _parse_lines(text)

    version = _int(_take(entries, "schema_version", str(SCHEMA_VERSION)), "schema_version")
    if version != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema_version {version}")
    seed = _int(_take(entries, "seed", required=True), "seed")

    atom = AtomSpec(
        gamma=parse_quantity(_take(entries, "atom.gamma", required=True),
                             "frequency", "atom.gamma"),
        wavelength=parse_quantity(_take(entries, "atom.wavelength", required=True),
                                  "length", "atom.wavelength"),
        i_sat=parse_quantity(_take(entries, "atom.i_sat", required=True),
                             "intensity", "atom.i_sat"),
    )

    n_atoms = _take(entries, "ensemble.n_atoms")
    ensemble = EnsembleSpec(
        od=_float(_take(entries, "ensemble.od", required=True), "ensemble.od"),
        waist=parse_quantity(_take(entries, "ensemble.waist", required=True),
                             "length", "ensemble.waist"),
        n_atoms=None if n_atoms is None else _float(n_atoms, "ensemble.n_atoms"),
    )

    timing = TrialTiming(
        trial_period=parse_quantity(_take(entries, "timing.trial_period", required=True),
                                    "time", "timing.trial_period"),
        write_duration=parse_quantity(_take(entries, "timing.write_duration", required=True),
                                      "time", "timing.write_duration"),
        read_duration=parse_quantity(_take(entries, "timing.read_duration", required=True),
                                     "time", "timing.read_duration"),
        apd_window=parse_quantity(_take(entries, "timing.apd_window", required=True),
                                  "time", "timing.apd_window"),
        n_trials=_int(_take(entries, "timing.n_trials", required=True),
                      "timing.n_trials"),
    )

    chi_text = _take(entries, "readout.chi", "auto")
    chi_auto = chi_text.strip().lower() == "auto"
    chi = chi_from_od(ensemble.od, atom) if chi_auto else _float(chi_text, "readout.chi")
    readout = ReadoutSpec(
        power=parse_quantity(_take(entries, "readout.power", required=True),
                             "power", "readout.power"),
        alpha=_float(_take(entries, "readout.alpha", required=True), "readout.alpha"),
        chi=chi,
        dt=parse_quantity(_take(entries, "readout.dt", required=True),
                          "time", "readout.dt"),
        read_duration=timing.read_duration,
        alpha_power_unit=_take(entries, "readout.alpha_power_unit", "mW"),
    )

    coherence_text = _take(entries, "model.coherence_time", required=True)
    coherence = math.inf if coherence_text.strip() == "inf" else \
        parse_quantity(coherence_text, "time", "model.coherence_time")
    model = SourceModel(
        mean_excitation=_float(_take(entries, "model.mean_excitation", required=True),
                               "model.mean_excitation"),
        field1_cond_efficiency=_float(
            _take(entries, "model.field1_cond_efficiency", required=True),
            "model.field1_cond_efficiency"),
        field1_noise=_float(_take(entries, "model.field1_noise", required=True),
                            "model.field1_noise"),
        retrieval_efficiency=_float(
            _take(entries, "model.retrieval_efficiency", required=True),
            "model.retrieval_efficiency"),
        chain_efficiency=_float(_take(entries, "model.chain_efficiency", required=True),
                                "model.chain_efficiency"),
        field2_background_rate=_float(
            _take(entries, "model.field2_background_rate", required=True),
            "model.field2_background_rate"),
        coherence_time=coherence,
        write_read_delay=parse_quantity(
            _take(entries, "model.write_read_delay", required=True),
            "time", "model.write_read_delay"),
        number_law=_take(entries, "model.number_law", "thermal"),
        decoherence_law=_take(entries, "model.decoherence_law", "exponential"),
    )
    if model.number_law not in NUMBER_LAWS or model.decoherence_law not in DECOHERENCE_LAWS:
        raise ConfigError("unknown model law")

    sweep = None
    sweep_keys = [k for k in entries if k.startswith("sweep.")
                  and k.split(".", 1)[1] in SweepSpec.VARIABLES]
    if len(sweep_keys) > 1:
        raise ConfigError("only one swept variable is supported per config")
    if sweep_keys:
        key = sweep_keys[0]
        variable = key.split(".", 1)[1]
        raw_values = [v.strip() for v in _take(entries, key).split(",")]
        if variable == "power":
            values = tuple(parse_quantity(v, "power", key) for v in raw_values)
        elif variable == "delay":
            values = tuple(parse_quantity(v, "time", key) for v in raw_values)
        else:
            values = tuple(_float(v, key) for v in raw_values)
        sweep = SweepSpec(
            variable=variable,
            values=values,
            retrieval_scaling=_take(entries, "sweep.retrieval_scaling", "none"),
            retrieval_max=_float(_take(entries, "sweep.retrieval_max", "0.5"),
                                 "sweep.retrieval_max"),
            retrieval_od_half=_float(_take(entries, "sweep.retrieval_od_half", "3.0"),
                                     "sweep.retrieval_od_half"),
        )

    probe = None
    if any(k.startswith("probe.") for k in entries):
        od_text = _take(entries, "probe.od")
        probe = ProbeSpec(
            od=None if od_text is None else _float(od_text, "probe.od"),
            duration=parse_quantity(_take(entries, "probe.duration", "500 ns"),
                                    "time", "probe.duration"),
            rise_time=parse_quantity(_take(entries, "probe.rise_time", "30 ns"),
                                     "time", "probe.rise_time"),
            sample_period=parse_quantity(_take(entries, "probe.sample_period", "1 ns"),
                                         "time", "probe.sample_period"),
            n_samples=_int(_take(entries, "probe.n_samples", "4096"), "probe.n_samples"),
            detuning=parse_quantity(_take(entries, "probe.detuning", "0 MHz"),
                                    "frequency", "probe.detuning"),
            noise=_float(_take(entries, "probe.noise", "0"), "probe.noise"),
            scan_points=_int(_take(entries, "probe.scan_points", "11"),
                             "probe.scan_points"),
            scan_span=parse_quantity(_take(entries, "probe.scan_span", "30 MHz"),
                                     "frequency", "probe.scan_span"),
        )

    if entries:
        raise ConfigError(f"unknown config keys: {', '.join(sorted(entries))}")

    return ExperimentConfig(atom=atom, ensemble=ensemble, readout=readout,
                            model=model, timing=timing, seed=seed,
                            schema_version=version, chi_auto=chi_auto,
                            sweep=sweep, probe=probe)


def emit_config(cfg: ExperimentConfig) -> str:
    """Canonical text form; hashing and round-trip-exact."""
    lines = [
        f"schema_version = {cfg.schema_version}",
        f"seed = {cfg.seed}",
        f"atom.gamma = {format_quantity(cfg.atom.gamma, 'frequency')}",
        f"atom.wavelength = {format_quantity(cfg.atom.wavelength, 'length')}",
        f"atom.i_sat = {format_quantity(cfg.atom.i_sat, 'intensity')}",
        f"ensemble.od = {float(cfg.ensemble.od)!r}",
        f"ensemble.waist = {format_quantity(cfg.ensemble.waist, 'length')}",
    ]
    if cfg.ensemble.n_atoms is not None:
        lines.append(f"ensemble.n_atoms = {float(cfg.ensemble.n_atoms)!r}")
    lines += [
        f"readout.power = {format_quantity(cfg.readout.power, 'power')}",
        f"readout.alpha = {float(cfg.readout.alpha)!r}",
        f"readout.alpha_power_unit = {cfg.readout.alpha_power_unit}",
        "readout.chi = auto" if cfg.chi_auto else f"readout.chi = {float(cfg.readout.chi)!r}",
        f"readout.dt = {format_quantity(cfg.readout.dt, 'time')}",
        f"model.mean_excitation = {float(cfg.model.mean_excitation)!r}",
        f"model.field1_cond_efficiency = {float(cfg.model.field1_cond_efficiency)!r}",
        f"model.field1_noise = {float(cfg.model.field1_noise)!r}",
        f"model.retrieval_efficiency = {float(cfg.model.retrieval_efficiency)!r}",
        f"model.chain_efficiency = {float(cfg.model.chain_efficiency)!r}",
        f"model.field2_background_rate = {float(cfg.model.field2_background_rate)!r}",
        "model.coherence_time = inf" if math.isinf(cfg.model.coherence_time)
        else f"model.coherence_time = {format_quantity(cfg.model.coherence_time, 'time')}",
        f"model.write_read_delay = {format_quantity(cfg.model.write_read_delay, 'time')}",
        f"model.number_law = {cfg.model.number_law}",
        f"model.decoherence_law = {cfg.model.decoherence_law}",
        f"timing.trial_period = {format_quantity(cfg.timing.trial_period, 'time')}",
        f"timing.write_duration = {format_quantity(cfg.timing.write_duration, 'time')}",
        f"timing.read_duration = {format_quantity(cfg.timing.read_duration, 'time')}",
        f"timing.apd_window = {format_quantity(cfg.timing.apd_window, 'time')}",
        f"timing.n_trials = {cfg.timing.n_trials}",
    ]
    if cfg.sweep is not None:
        var = cfg.sweep.variable
        if var == "power":
            rendered = ", ".join(format_quantity(v, "power") for v in cfg.sweep.values)
        elif var == "delay":
            rendered = ", ".join(format_quantity(v, "time") for v in cfg.sweep.values)
        else:
            rendered = ", ".join(repr(float(v)) for v in cfg.sweep.values)
        lines.append(f"sweep.{var} = {rendered}")
        lines.append(f"sweep.retrieval_scaling = {cfg.sweep.retrieval_scaling}")
        lines.append(f"sweep.retrieval_max = {float(cfg.sweep.retrieval_max)!r}")
        lines.append(f"sweep.retrieval_od_half = {float(cfg.sweep.retrieval_od_half)!r}")
    if cfg.probe is not None:
        p = cfg.probe
        if p.od is not None:
            lines.append(f"probe.od = {float(p.od)!r}")
        lines += [
            f"probe.duration = {format_quantity(p.duration, 'time')}",
            f"probe.rise_time = {format_quantity(p.rise_time, 'time')}",
            f"probe.sample_period = {format_quantity(p.sample_period, 'time')}",
            f"probe.n_samples = {p.n_samples}",
            f"probe.detuning = {format_quantity(p.detuning, 'frequency')}",
            f"probe.noise = {float(p.noise)!r}",
            f"probe.scan_points = {p.scan_points}",
            f"probe.scan_span = {format_quantity(p.scan_span, 'frequency')}",
        ]
    return "\n".join(lines) + "\n"


def load_config(path) -> ExperimentConfig:
    with open(path) as fh:
        return parse_config(fh.read())


def save_config(cfg: ExperimentConfig, path) -> None:
    with open(path, "w") as fh:
        fh.write(emit_config(cfg))
