"""Batch command-line pipeline: simulate -> analyze -> wavepacket -> fit
-> report, plus the optical-depth probes.

Every command is deterministic in its inputs and flags; each run writes
a manifest recording the configuration hash and digests of the files it
read and wrote.  Exit codes: 0 success, 1 usage error, 2 data error,
3 fit non-convergence.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from concurrent.futures import ProcessPoolExecutor
import dataclasses
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__, inference, odprobe, physics, source, stats
from .stats import float_repr as _r
from .config import ConfigError, ExperimentConfig, ProbeSpec, load_config
from .inference import FitConvergenceError
from .odprobe import FitError
from .source import EventFileError, child_seed

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NOCONVERGENCE = 3


@dataclass
class RunManifest:
    """Provenance record for one pipeline stage."""

    stage: str
    config_hash: str
    tool_version: str
    inputs: dict = field(default_factory=dict)
    outputs: dict = field(default_factory=dict)
    wall_clock_s: float = 0.0


def _digest(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


class _ManifestWriter:
    def __init__(self, stage: str, config_hash: str = ""):
        self.manifest = RunManifest(stage=stage, config_hash=config_hash,
                                    tool_version=__version__)
        self.t0 = time.monotonic()

    def add_input(self, path):
        path = Path(path)
        self.manifest.inputs[str(path)] = _digest(path)

    def add_output(self, path):
        path = Path(path)
        self.manifest.outputs[str(path)] = _digest(path)

    def write(self, directory):
        self.manifest.wall_clock_s = time.monotonic() - self.t0
        out = Path(directory) / f"{self.manifest.stage}.manifest.json"
        with open(out, "w") as fh:
            json.dump(asdict(self.manifest), fh, indent=2, sort_keys=True)
            fh.write("\n")
        return out


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="dlczsim",
                     description="photon-pair source simulator and analysis pipeline")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="generate detection events from a config")
    sim.add_argument("--config", required=True)
    sim.add_argument("--out-dir", required=True)
    sim.add_argument("--seed", type=int, default=None, help="override the config seed")
    sim.add_argument("--workers", type=int, default=1)
    sim.add_argument("--binary-events", action="store_true",
                     help="write the binary event format instead of csv")

    ana = sub.add_parser("analyze", help="coincidence statistics from event files")
    ana.add_argument("inputs", nargs="+", help="event files or sweep directories")
    ana.add_argument("--format", choices=("text", "csv"), default="text")
    ana.add_argument("--n-trials", type=int, default=None,
                     help="trial count for binary event files")

    wav = sub.add_parser("wavepacket", help="bin field-2 arrival times")
    wav.add_argument("inputs", nargs="+", help="event files or sweep directories")
    wav.add_argument("--bin-ns", type=float, default=None,
                     help="bin width in ns (default: config dt from point metadata)")

    fit = sub.add_parser("fit", help="fit wavepackets; reduce sweeps to scaling fits")
    fit.add_argument("inputs", nargs="+", help="wavepacket files or sweep directories")
    fit.add_argument("--fit-mode", choices=("global", "per-curve"), default=None,
                     help="default: global for multiple curves, per-curve for one")
    fit.add_argument("--curve-weights", default=None,
                     help="comma list of per-curve weights, e.g. to down-weight "
                          "low powers")
    fit.add_argument("--format", choices=("text", "csv"), default="text")

    scan = sub.add_parser("scan-od", help="optical depth from a detuning scan")
    scan.add_argument("--config", required=True)
    scan.add_argument("--out-dir", required=True)
    scan.add_argument("--scan-file", default=None,
                      help="measured scan to fit instead of simulating one")
    scan.add_argument("--fit-on", choices=("transmission", "od"), default="transmission")
    scan.add_argument("--format", choices=("text", "csv"), default="text")

    pulse = sub.add_parser("od-pulse", help="optical depth from pulse distortion")
    pulse.add_argument("--config", required=True)
    pulse.add_argument("--out-dir", required=True)
    pulse.add_argument("--input-trace", default=None)
    pulse.add_argument("--output-trace", default=None)
    pulse.add_argument("--format", choices=("text", "csv"), default="text")

    rep = sub.add_parser("report", help="vector plots from analysis artifacts")
    rep.add_argument("inputs", nargs="+", help="sweep directories")
    rep.add_argument("--out-dir", required=True)
    return parser


# ---------------------------------------------------------------------------
# simulate

def _point_dirname(variable: str, value: float) -> str:
    return f"{variable}_{value:g}"


def _point_metadata(cfg: ExperimentConfig, variable: str | None, value,
                    seed: int) -> dict:
    return {
        "variable": variable,
        "value": value,
        "seed": seed,
        "config_hash": cfg.config_hash,
        "n_trials": cfg.timing.n_trials,
        "power_w": cfg.readout.power,
        "od": cfg.ensemble.od,
        "chi": cfg.readout.chi,
        "alpha": cfg.readout.alpha,
        "dt_s": cfg.readout.dt,
        "read_duration_s": cfg.timing.read_duration,
        "delay_s": cfg.model.write_read_delay,
        "mean_excitation": cfg.model.mean_excitation,
    }


def _simulate_point(cfg: ExperimentConfig, out_dir: Path, seed: int,
                    variable, value, workers: int, binary: bool) -> list[Path]:
    out_dir.mkdir(parents=True, exist_ok=True)
    events = source.simulate(cfg.atom, cfg.readout, cfg.model, cfg.timing,
                             seed, workers=workers, config_key=cfg.config_hash)
    written = []
    if binary:
        path = out_dir / "events.bin"
        source.write_events_binary(events, path)
    else:
        path = out_dir / "events.csv"
        source.write_events_csv(events, path)
    written.append(path)
    meta_path = out_dir / "point.json"
    with open(meta_path, "w") as fh:
        json.dump(_point_metadata(cfg, variable, value, seed), fh,
                  indent=2, sort_keys=True)
        fh.write("\n")
    written.append(meta_path)
    return written


def _simulate_point_star(args):
    return _simulate_point(*args)


def cmd_simulate(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    out_root = Path(args.out_dir)
    out_root.mkdir(parents=True, exist_ok=True)
    manifest = _ManifestWriter("simulate", cfg.config_hash)
    manifest.add_input(args.config)

    if cfg.sweep is None:
        written = _simulate_point(cfg, out_root, cfg.seed, None, None,
                                  args.workers, args.binary_events)
        for path in written:
            manifest.add_output(path)
    else:
        tasks = []
        for i, value in enumerate(cfg.sweep.values):
            pcfg = cfg.at_sweep_point(value)
            pdir = out_root / _point_dirname(cfg.sweep.variable, value)
            tasks.append((pcfg, pdir, child_seed(cfg.seed, i),
                          cfg.sweep.variable, value, 1, args.binary_events))
        if args.workers > 1:
            with ProcessPoolExecutor(max_workers=args.workers) as pool:
                results = list(pool.map(_simulate_point_star, tasks))
        else:
            results = [_simulate_point(*task) for task in tasks]
        for written in results:
            for path in written:
                manifest.add_output(path)
    manifest.write(out_root)
    return EXIT_OK


# ---------------------------------------------------------------------------
# shared input discovery

def _discover_points(inputs) -> list[Path]:
    """Resolve event files / point dirs / sweep roots into point dirs or
    event file paths, in deterministic order."""
    found: list[Path] = []
    for item in inputs:
        path = Path(item)
        if path.is_file():
            found.append(path)
            continue
        if not path.is_dir():
            raise FileNotFoundError(f"no such input: {path}")
        if (path / "events.csv").exists() or (path / "events.bin").exists():
            found.append(path)
            continue
        subdirs = sorted(p for p in path.iterdir() if p.is_dir()
                         and ((p / "events.csv").exists() or (p / "events.bin").exists()))
        if not subdirs:
            raise FileNotFoundError(f"no event files under {path}")
        found.extend(subdirs)
    return found


def _read_point_events(point: Path, n_trials_override=None):
    """(events, point_dir, meta) for a point dir or a bare event file."""
    if point.is_file():
        directory = point.parent
        event_path = point
    else:
        directory = point
        event_path = point / "events.csv"
        if not event_path.exists():
            event_path = point / "events.bin"
    meta = {}
    meta_path = directory / "point.json"
    if meta_path.exists():
        with open(meta_path) as fh:
            meta = json.load(fh)
    if event_path.suffix == ".bin":
        trial_range = None
        n = n_trials_override or meta.get("n_trials")
        if n is not None:
            trial_range = (0, int(n))
        events = source.read_events_binary(event_path, trial_range,
                                           meta.get("config_hash"))
    else:
        events = source.read_events_csv(event_path)
    return events, directory, meta, event_path


# ---------------------------------------------------------------------------
# analyze

SUMMARY_HEADER = ("value,n_trials,p1,p1_err,p2,p2_err,p12,p12_err,p122,p122_err,"
                  "pc,pc_err,pcc,pcc_err,g2c,g2c_err,g12,g12_err")


def cmd_analyze(args) -> int:
    points = _discover_points(args.inputs)
    manifest = _ManifestWriter("analyze")
    summary_rows = []
    single = len(points) == 1
    for point in points:
        events, directory, meta, event_path = _read_point_events(
            point, args.n_trials)
        manifest.add_input(event_path)
        st = stats.accumulate(events)
        text = stats.stats_report_text(st)
        csv = stats.stats_report_csv(st)
        stem = "stats" if point.is_dir() else f"{event_path.stem}.stats"
        (directory / f"{stem}.txt").write_text(text)
        (directory / f"{stem}.csv").write_text(csv)
        manifest.add_output(directory / f"{stem}.txt")
        manifest.add_output(directory / f"{stem}.csv")
        if single:
            sys.stdout.write(text if args.format == "text" else csv)
        value = meta.get("value")
        if value is None:
            value = meta.get("od", "")
        row = [str(value), str(st.n_trials)]
        for name, est, err in st.as_rows():
            row.extend([repr(est), repr(err)])
        summary_rows.append(",".join(row))
        if not manifest.manifest.config_hash and st.config_key:
            manifest.manifest.config_hash = st.config_key

    roots = {p if p.is_dir() else p.parent for p in points}
    if len(points) > 1 and len({p.parent for p in points if p.is_dir()}) == 1:
        root = next(iter({p.parent for p in points if p.is_dir()}))
        summary = root / "stats_summary.csv"
        summary.write_text(SUMMARY_HEADER + "\n" + "\n".join(summary_rows) + "\n")
        manifest.add_output(summary)
        roots = {root}
    manifest.write(sorted(roots)[0])
    return EXIT_OK


# ---------------------------------------------------------------------------
# wavepacket

def cmd_wavepacket(args) -> int:
    points = _discover_points(args.inputs)
    manifest = _ManifestWriter("wavepacket")
    for point in points:
        events, directory, meta, event_path = _read_point_events(point)
        manifest.add_input(event_path)
        dt = args.bin_ns * 1e-9 if args.bin_ns else meta.get("dt_s")
        if dt is None:
            raise ConfigError("no bin width: give --bin-ns or a point.json with dt_s")
        read_duration = _read_window_from_events(events, meta)
        timing = source.TrialTiming(
            trial_period=max(read_duration * 4, 1e-6), write_duration=read_duration,
            read_duration=read_duration, apd_window=max(read_duration * 4, 1e-6),
            n_trials=events.n_trials)
        wp = stats.histogram_wavepacket(events, timing, float(dt))
        extra = {}
        if "power_w" in meta:
            extra["power_mw"] = meta["power_w"] * 1e3
        for key in ("od", "chi", "alpha", "value", "variable", "delay_s"):
            if meta.get(key) is not None:
                extra[key] = meta[key]
        out = directory / "wavepacket.csv"
        stats.write_wavepacket(wp, out, extra)
        manifest.add_output(out)
        if not manifest.manifest.config_hash and events.config_key:
            manifest.manifest.config_hash = events.config_key
    manifest.write(_common_root(points))
    return EXIT_OK


def _read_window_from_events(events, meta) -> float:
    if meta.get("read_duration_s"):
        return float(meta["read_duration_s"])
    f2 = events.channel >= 2
    if not np.any(f2):
        return 840e-9
    # round the largest tag up to a tidy window
    t_max = events.time_ns[f2].max() * 1e-9
    return float(np.ceil(t_max * 1e9 / 10.0) * 10.0 * 1e-9)


def _common_root(points) -> Path:
    dirs = {p if p.is_dir() else p.parent for p in points}
    parents = {d.parent for d in dirs}
    if len(dirs) > 1 and len(parents) == 1:
        return next(iter(parents))
    return sorted(dirs)[0]


# ---------------------------------------------------------------------------
# fit

def _fit_report_lines(fit: inference.WavepacketFit, fmt: str,
                      config_hash: str | None = None) -> str:
    rows = fit.report_rows()
    if fmt == "csv":
        body = "\n".join(f"{k},{_r(v)}" for k, v in rows)
        head = "name,value\n"
        if config_hash:
            head += f"config_hash,{config_hash}\n"
        return head + body + "\n"
    lines = ["# dlczsim fit v1"]
    if config_hash:
        lines.append(f"# config_hash = {config_hash}")
    lines.append(f"chi = {fit.chi.value:.9g} +- {fit.chi.error:.4g}")
    lines.append(f"alpha = {fit.alpha.value:.9g} +- {fit.alpha.error:.4g}")
    for key, value in rows[4:]:
        lines.append(f"{key} = {value:.9g}")
    return "\n".join(lines) + "\n"


def _discover_wavepackets(inputs) -> list[Path]:
    found = []
    for item in inputs:
        path = Path(item)
        if path.is_file():
            found.append(path)
        elif path.is_dir():
            if (path / "wavepacket.csv").exists():
                found.append(path / "wavepacket.csv")
            else:
                subs = sorted(p / "wavepacket.csv" for p in path.iterdir()
                              if (p / "wavepacket.csv").exists())
                if not subs:
                    raise FileNotFoundError(f"no wavepacket files under {path}")
                found.extend(subs)
        else:
            raise FileNotFoundError(f"no such input: {path}")
    return found


def cmd_fit(args) -> int:
    files = _discover_wavepackets(args.inputs)
    manifest = _ManifestWriter("fit")
    curves, metas = [], []
    for path in files:
        wp, meta = stats.read_wavepacket(path)
        manifest.add_input(path)
        if "power_mw" not in meta:
            raise ConfigError(f"{path}: wavepacket lacks power_mw metadata")
        curves.append((wp, float(meta["power_mw"]) * 1e-3))
        metas.append((path, meta))
        if not manifest.manifest.config_hash and wp.config_key:
            manifest.manifest.config_hash = wp.config_key

    weights = None
    if args.curve_weights:
        weights = [float(w) for w in args.curve_weights.split(",")]
    mode = args.fit_mode or ("per-curve" if len(curves) == 1 else "global")
    atom = physics.AtomSpec.cesium_d2()

    root = _common_root([p.parent for p, _ in metas])
    run_hash = manifest.manifest.config_hash or None
    if mode == "global":
        fit = inference.fit_wavepacket(curves, atom, mode="global", weights=weights)
        out = root / ("fit.csv" if args.format == "csv" else "fit.txt")
        out.write_text(_fit_report_lines(fit, args.format, run_hash))
        sys.stdout.write(_fit_report_lines(fit, args.format, run_hash))
        manifest.add_output(out)
    else:
        fits = inference.fit_wavepacket(curves, atom, mode="per-curve",
                                        weights=weights)
        scaling_rows = []
        for (path, meta), fit in zip(metas, fits):
            out = path.parent / ("fit.csv" if args.format == "csv" else "fit.txt")
            out.write_text(_fit_report_lines(fit, args.format,
                                             fit_meta_hash(meta)))
            manifest.add_output(out)
            if meta.get("od") is not None:
                tau = physics.superradiant_decay_time(fit.chi.value, atom)
                scaling_rows.append((float(meta["od"]), fit, tau))
        distinct_ods = {row[0] for row in scaling_rows}
        if len(distinct_ods) >= 2:
            _write_scaling_reports(scaling_rows, root, args.format, manifest,
                                   atom, run_hash)
    manifest.write(root)
    return EXIT_OK


def fit_meta_hash(meta: dict) -> str | None:
    value = meta.get("config_hash")
    return str(value) if value else None


def _write_scaling_reports(scaling_rows, root: Path, fmt: str, manifest, atom,
                           config_hash: str | None = None) -> None:
    scaling_rows.sort(key=lambda r: r[0])
    points = [(od, fit.chi.value, fit.chi.error) for od, fit, _ in scaling_rows]
    coop = inference.fit_cooperativity(points)
    lines = ["# dlczsim scaling v1"]
    if config_hash:
        lines.append(f"# config_hash = {config_hash}")
    lines += [
        f"beta = {coop.beta.value:.9g} +- {coop.beta.error:.4g}",
        f"beta_dof = {coop.dof}",
        f"beta_chi_squared_reduced = {coop.chi_squared_reduced:.9g}",
    ]
    table = ["od,chi,chi_err,alpha,alpha_err,tau_sp_ns"]
    for od, fit, tau in scaling_rows:
        table.append(f"{_r(od)},{_r(fit.chi.value)},{_r(fit.chi.error)},"
                     f"{_r(fit.alpha.value)},{_r(fit.alpha.error)},{_r(tau * 1e9)}")

    summary = root / "stats_summary.csv"
    if summary.exists():
        manifest.add_input(summary)
        rows = _read_summary(summary)
        slope_points = [(r["value"], r["pc"], r["pc_err"], r["p2"], r["p2_err"])
                        for r in rows]
        try:
            slope = inference.fit_threshold_slope(slope_points)
            lines.append(f"slope_s = {slope.s.value:.9g} +- {slope.s.error:.4g}")
            if slope.od_threshold is not None:
                lines.append(f"od_threshold_g12 = {slope.od_threshold:.9g}")
            lines.append(f"slope_dof = {slope.dof}")
        except ValueError as exc:
            lines.append(f"slope_s = unavailable ({exc})")

    (root / "scaling.txt").write_text("\n".join(lines) + "\n")
    (root / "scaling.csv").write_text("\n".join(table) + "\n")
    manifest.add_output(root / "scaling.txt")
    manifest.add_output(root / "scaling.csv")
    sys.stdout.write("\n".join(lines) + "\n")


def _read_summary(path: Path) -> list[dict]:
    lines = path.read_text().strip().splitlines()
    header = lines[0].split(",")
    rows = []
    for line in lines[1:]:
        parts = line.split(",")
        row = {}
        for key, value in zip(header, parts):
            try:
                row[key] = float(value)
            except ValueError:
                row[key] = float("nan")
        rows.append(row)
    return rows


# ---------------------------------------------------------------------------
# optical-depth commands

def _probe_from_config(cfg: ExperimentConfig):
    probe = cfg.probe if cfg.probe is not None else ProbeSpec()
    od = probe.od if probe.od is not None else cfg.ensemble.od
    return probe, od


def cmd_scan_od(args) -> int:
    cfg = load_config(args.config)
    probe, od_true = _probe_from_config(cfg)
    out_root = Path(args.out_dir)
    out_root.mkdir(parents=True, exist_ok=True)
    manifest = _ManifestWriter("scan-od", cfg.config_hash)
    manifest.add_input(args.config)

    if args.scan_file:
        points = odprobe.read_scan(args.scan_file)
        manifest.add_input(args.scan_file)
        truth_line = ""
    else:
        deltas = np.linspace(-0.5 * probe.scan_span, 0.5 * probe.scan_span,
                             probe.scan_points)
        trans = odprobe.transmission_spectrum(deltas, od_true, cfg.atom)
        if probe.noise > 0:
            rng = np.random.default_rng(child_seed(cfg.seed, 0x5CA7))
            trans = np.clip(trans * (1.0 + probe.noise * rng.standard_normal(len(deltas))),
                            1e-12, 1.0)
        points = list(zip(deltas, trans))
        odprobe.write_scan(points, out_root / "scan.csv")
        manifest.add_output(out_root / "scan.csv")
        truth_line = f"od_true = {_r(od_true)}\n"

    estimate = odprobe.od_lorentzian_scan(points, cfg.atom, on=args.fit_on)
    report = (f"# dlczsim od-scan v1\n# config_hash = {cfg.config_hash}\n{truth_line}"
              f"method = {estimate.method}\n"
              f"od = {estimate.od.value:.9g} +- {estimate.od.error:.4g}\n")
    csv = ("method,od,od_err\n"
           f"{estimate.method},{_r(estimate.od.value)},{_r(estimate.od.error)}\n")
    (out_root / "od_scan.txt").write_text(report)
    (out_root / "od_scan.csv").write_text(csv)
    manifest.add_output(out_root / "od_scan.txt")
    manifest.add_output(out_root / "od_scan.csv")
    sys.stdout.write(report if args.format == "text" else csv)
    manifest.write(out_root)
    return EXIT_OK


def cmd_od_pulse(args) -> int:
    cfg = load_config(args.config)
    probe, od_true = _probe_from_config(cfg)
    out_root = Path(args.out_dir)
    out_root.mkdir(parents=True, exist_ok=True)
    manifest = _ManifestWriter("od-pulse", cfg.config_hash)
    manifest.add_input(args.config)

    if args.input_trace and args.output_trace:
        pulse_in = odprobe.read_pulse_trace(args.input_trace, probe.detuning)
        pulse_out = odprobe.read_pulse_trace(args.output_trace, probe.detuning)
        manifest.add_input(args.input_trace)
        manifest.add_input(args.output_trace)
        truth_line = ""
    elif args.input_trace or args.output_trace:
        raise ConfigError("give both --input-trace and --output-trace, or neither")
    else:
        pulse_in = odprobe.flat_top_pulse(probe.duration, probe.sample_period,
                                          probe.rise_time, probe.n_samples)
        pulse_in = odprobe.ProbePulse(pulse_in.amplitude, pulse_in.sample_period,
                                      probe.detuning)
        propagated = odprobe.propagate(pulse_in, od_true, cfg.atom)
        amp = np.abs(propagated.amplitude)
        if probe.noise > 0:
            rng = np.random.default_rng(child_seed(cfg.seed, 0x0D9))
            amp = amp + probe.noise * np.abs(pulse_in.amplitude).max() \
                * rng.standard_normal(len(amp))
        pulse_out = odprobe.ProbePulse(np.abs(amp), pulse_in.sample_period,
                                       probe.detuning)
        odprobe.write_pulse_trace(pulse_in, out_root / "pulse_in.csv")
        odprobe.write_pulse_trace(pulse_out, out_root / "pulse_out.csv")
        manifest.add_output(out_root / "pulse_in.csv")
        manifest.add_output(out_root / "pulse_out.csv")
        truth_line = f"od_true = {_r(od_true)}\n"

    shape = odprobe.od_pulse_shape(pulse_in, pulse_out, cfg.atom)
    # CW-style log ratio: average the central fifth of the flat top to
    # tame per-sample noise
    center = int(np.argmax(np.abs(pulse_in.amplitude)))
    half = max(1, int(0.1 * probe.duration / pulse_in.sample_period))
    sel = slice(max(center - half, 0), center + half + 1)
    v_i = float(pulse_in.intensity[sel].mean())
    v_f = float(np.clip(pulse_out.intensity[sel].mean(), 1e-300, v_i))
    ratio = odprobe.od_log_ratio(v_i, v_f)
    report = (f"# dlczsim od-pulse v1\n# config_hash = {cfg.config_hash}\n{truth_line}"
              f"od_pulse_shape = {shape.od.value:.9g} +- {shape.od.error:.4g}\n"
              f"od_log_ratio = {ratio.od.value:.9g}\n")
    csv = ("method,od,od_err\n"
           f"pulse_shape,{_r(shape.od.value)},{_r(shape.od.error)}\n"
           f"log_ratio,{_r(ratio.od.value)},{_r(ratio.od.error)}\n")
    (out_root / "od_pulse.txt").write_text(report)
    (out_root / "od_pulse.csv").write_text(csv)
    manifest.add_output(out_root / "od_pulse.txt")
    manifest.add_output(out_root / "od_pulse.csv")
    sys.stdout.write(report if args.format == "text" else csv)
    manifest.write(out_root)
    return EXIT_OK


# ---------------------------------------------------------------------------
# report

def cmd_report(args) -> int:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out_root = Path(args.out_dir)
    out_root.mkdir(parents=True, exist_ok=True)
    manifest = _ManifestWriter("report")
    produced = 0

    for item in args.inputs:
        root = Path(item)
        if not root.is_dir():
            raise FileNotFoundError(f"no such directory: {root}")
        produced += _report_threshold(root, out_root, manifest, plt)
        produced += _report_wavepackets(root, out_root, manifest, plt)
        produced += _report_cooperativity(root, out_root, manifest, plt)
    if produced == 0:
        raise FileNotFoundError("inputs contain no analyzed artifacts to plot")
    manifest.write(out_root)
    return EXIT_OK


def _savefig(fig, path, plt):
    fig.savefig(path, metadata={"CreationDate": None})
    plt.close(fig)


def _report_threshold(root, out_root, manifest, plt) -> int:
    summary = root / "stats_summary.csv"
    if not summary.exists():
        return 0
    rows = _read_summary(summary)
    manifest.add_input(summary)
    od = np.array([r["value"] for r in rows])
    pc = np.array([r["pc"] for r in rows])
    pc_err = np.array([r["pc_err"] for r in rows])
    p2 = np.array([r["p2"] for r in rows])
    order = np.argsort(od)
    od, pc, pc_err, p2 = od[order], pc[order], pc_err[order], p2[order]

    fig, ax = plt.subplots(figsize=(5.0, 3.6))
    ax.errorbar(od, pc, yerr=pc_err, fmt="s", color="k", label="conditional")
    ax.plot(od, p2, "--", color="tab:blue", label="unconditional")
    ax.set_xlabel("optical depth")
    ax.set_ylabel("detection probability")
    ax.legend(frameon=False, fontsize=8)
    inset = fig.add_axes([0.62, 0.25, 0.3, 0.35])
    good = pc - p2 > 0
    inset.loglog(od[good], (pc - p2)[good], "o", ms=3, color="tab:red")
    inset.set_xlabel("OD", fontsize=7)
    inset.set_ylabel("excess", fontsize=7)
    inset.tick_params(labelsize=6)
    path = out_root / "threshold.pdf"
    _savefig(fig, path, plt)
    manifest.add_output(path)

    table = ["od,pc,pc_err,p2,excess"]
    for i in range(len(od)):
        table.append(f"{_r(od[i])},{_r(pc[i])},{_r(pc_err[i])},{_r(p2[i])},{_r(pc[i] - p2[i])}")
    data_path = out_root / "plotdata_threshold.csv"
    data_path.write_text("\n".join(table) + "\n")
    manifest.add_output(data_path)
    return 1


def _report_wavepackets(root, out_root, manifest, plt) -> int:
    files = sorted(root.glob("*/wavepacket.csv"))
    if not files and (root / "wavepacket.csv").exists():
        files = [root / "wavepacket.csv"]
    if not files:
        return 0
    atom = physics.AtomSpec.cesium_d2()
    n = len(files)
    ncols = 2
    nrows = (n + ncols - 1) // ncols
    fig, axes = plt.subplots(nrows, ncols, figsize=(7.0, 2.2 * nrows),
                             squeeze=False, sharex=True)
    table = ["panel,label,chi,alpha"]
    for i, path in enumerate(files):
        wp, meta = stats.read_wavepacket(path)
        manifest.add_input(path)
        ax = axes[i // ncols][i % ncols]
        t_ns = wp.t_centers * 1e9
        norm = wp.pc_total if wp.pc_total else 1.0
        ax.plot(t_ns, wp.pc / norm, "o", ms=2, mfc="none", color="k")
        ax.plot(t_ns, wp.p2 / norm, "--", lw=0.8, color="tab:blue")
        label = f"{meta.get('variable', 'point')}={meta.get('value', i)}"
        fit_path = path.parent / "fit.txt"
        if fit_path.exists():
            fit_vals = _parse_fit_report(fit_path)
            manifest.add_input(fit_path)
            readout = physics.ReadoutSpec(
                power=float(meta["power_mw"]) * 1e-3, alpha=fit_vals["alpha"],
                chi=fit_vals["chi"], dt=wp.bin_width,
                read_duration=wp.n_bins * wp.bin_width)
            model = physics.wavepacket_density(wp.t_centers, readout, atom)
            ax.plot(t_ns, model, "-", lw=1.0, color="tab:red")
            table.append(f"{i},{label},{_r(fit_vals['chi'])},{_r(fit_vals['alpha'])}")
        ax.set_title(label, fontsize=8)
    for j in range(n, nrows * ncols):
        axes[j // ncols][j % ncols].axis("off")
    fig.supxlabel("time since read turn-on (ns)", fontsize=9)
    fig.supylabel("normalized conditional probability", fontsize=9)
    fig.tight_layout()
    path = out_root / "wavepackets.pdf"
    _savefig(fig, path, plt)
    manifest.add_output(path)
    data_path = out_root / "plotdata_wavepackets.csv"
    data_path.write_text("\n".join(table) + "\n")
    manifest.add_output(data_path)
    return 1


def _parse_fit_report(path: Path) -> dict:
    values = {}
    for line in path.read_text().splitlines():
        if line.startswith("#") or "=" not in line:
            continue
        key, rest = (s.strip() for s in line.split("=", 1))
        values[key] = float(rest.split("+-")[0])
    return values


def _report_cooperativity(root, out_root, manifest, plt) -> int:
    scaling = root / "scaling.csv"
    if not scaling.exists():
        return 0
    manifest.add_input(scaling)
    rows = _read_summary(scaling)
    od = np.array([r["od"] for r in rows])
    chi = np.array([r["chi"] for r in rows])
    chi_err = np.array([r["chi_err"] for r in rows])
    alpha = np.array([r["alpha"] for r in rows])
    alpha_err = np.array([r["alpha_err"] for r in rows])
    tau = np.array([r["tau_sp_ns"] for r in rows])
    coop = inference.fit_cooperativity(list(zip(od, chi, chi_err)))

    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(4.6, 5.4), sharex=True)
    ax1.errorbar(od, chi, yerr=chi_err, fmt="o", color="k")
    grid = np.linspace(0, od.max() * 1.05, 50)
    ax1.plot(grid, 1.0 + coop.beta.value * grid, "-", color="tab:red")
    ax1.set_ylabel("cooperativity")
    ax2.errorbar(od, alpha, yerr=alpha_err, fmt="o", color="k")
    ax2.set_ylabel("alpha")
    ax2.set_xlabel("optical depth")
    inset = fig.add_axes([0.58, 0.72, 0.3, 0.16])
    inset.plot(od, tau, "s", ms=3, color="tab:purple")
    inset.set_ylabel("tau (ns)", fontsize=7)
    inset.tick_params(labelsize=6)
    path = out_root / "cooperativity.pdf"
    _savefig(fig, path, plt)
    manifest.add_output(path)

    table = ["od,chi,chi_err,alpha,alpha_err,tau_sp_ns,beta,beta_err"]
    for i in range(len(od)):
        table.append(f"{_r(od[i])},{_r(chi[i])},{_r(chi_err[i])},{_r(alpha[i])},"
                     f"{_r(alpha_err[i])},{_r(tau[i])},{_r(coop.beta.value)},"
                     f"{_r(coop.beta.error)}")
    data_path = out_root / "plotdata_cooperativity.csv"
    data_path.write_text("\n".join(table) + "\n")
    manifest.add_output(data_path)
    return 1


# ---------------------------------------------------------------------------

_COMMANDS = {
    "simulate": cmd_simulate,
    "analyze": cmd_analyze,
    "wavepacket": cmd_wavepacket,
    "fit": cmd_fit,
    "scan-od": cmd_scan_od,
    "od-pulse": cmd_od_pulse,
    "report": cmd_report,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (FitConvergenceError, FitError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NOCONVERGENCE
    except (ConfigError, EventFileError, ValueError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
