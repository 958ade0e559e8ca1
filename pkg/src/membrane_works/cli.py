"""``membrane-works`` command-line front end.

Exit status: 0 on success (warnings allowed), 2 on invalid input or usage,
3 when a computation fails on valid input. Every run writes
``manifest.json`` next to its outputs.
"""

from __future__ import annotations

import argparse
import hashlib
import logging
import os
import sys
import time
import warnings
from pathlib import Path

from . import __version__, electromech, io, kernels
from .config import load_config
from .errors import ComputationError, MembraneWorksError, ValidationError
from .membrane import ModeIndex
from .spectral import fit_lorentzian, fit_ringdown, synth_ringdown, synth_spectrum
from .stability import allan_curve, fit_noise_model, synth_frequency_series
from .stress import (
    ModeRecord,
    assign_indices,
    fit_biaxial_stress,
    resolution_study,
    synth_mode_table,
)

log = logging.getLogger("membrane_works")

EXIT_OK, EXIT_VALIDATION, EXIT_COMPUTATION = 0, 2, 3


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


class Run:
    """Collects inputs and outputs of one subcommand for the manifest."""

    def __init__(self, args, cfg):
        self.args = args
        self.cfg = cfg
        self.out = Path(args.out or cfg["output"]["directory"])
        self.out.mkdir(parents=True, exist_ok=True)
        self.inputs = {}
        self.outputs = []
        self.warnings = []
        self.seed = args.seed if args.seed is not None else cfg["analysis"]["seed"]
        self.t0 = time.perf_counter()

    def input(self, path):
        self.inputs[str(path)] = sha256_file(path)
        return path

    def path(self, name) -> Path:
        p = self.out / name
        self.outputs.append(name)
        return p

    def warn(self, message):
        log.warning(message)
        self.warnings.append(message)

    def manifest(self, status):
        io.write_json(self.out / "manifest.json", {
            "subcommand": self.args.command,
            "toolkit_version": __version__,
            "kernel_backend": kernels.BACKEND,
            "config_path": self.cfg.source,
            "config_digest": self.cfg.digest,
            "input_digests": self.inputs,
            "seed": self.seed,
            "outputs": self.outputs,
            "warnings": self.warnings,
            "status": status,
            "wall_clock_s": time.perf_counter() - self.t0,
        })


def cmd_fit_stress(run: Run):
    args, cfg = run.args, run.cfg
    modes = io.read_mode_table(run.input(args.table))
    if not modes:
        raise ValidationError(f"no modes in {args.table}", field="table")
    spec = cfg.membrane_spec()
    if any(m.index is None for m in modes):
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            assigned = assign_indices([m.frequency for m in modes], spec)
        for w in caught:
            run.warn(str(w.message))
        modes = [ModeRecord(m.frequency, a.index, q=m.q) for m, a in zip(modes, assigned)]
    result = fit_biaxial_stress(modes, spec.side_length, spec.density)
    payload = result.as_dict()
    if args.resolution_seeds:
        a = cfg["analysis"]
        study = resolution_study(result_spec(spec, result), [m.index for m in modes], a["noise_hz"],
                                 args.resolution_seeds, run.seed, args.jobs)
        ex, ey = study.empirical_resolution()
        payload["resolution_study"] = {"noise_hz": a["noise_hz"], "n_seeds": study.n_seeds, "seed": run.seed,
                                       "stress_x_std_pa": ex, "stress_y_std_pa": ey}
    if args.format == "csv":
        io.write_stress_plot(run.path("fit_stress_plot.csv"), result)
    else:
        payload["plot"] = [list(r) for r in result.plot_rows()]
    io.write_json(run.path("fit_stress.json"), payload)
    print(f"sigma_x = {result.stress_x / 1e6:.4f} MPa  sigma_y = {result.stress_y / 1e6:.4f} MPa  "
          f"R^2 = {result.r_squared:.6f}")


def result_spec(spec, result):
    return spec.with_stress(result.stress_x, result.stress_y)


def cmd_fit_peak(run: Run):
    spectrum = io.read_spectrum(run.input(run.args.spectrum))
    window = tuple(run.args.window) if run.args.window else None
    fit = fit_lorentzian(spectrum, window=window)
    io.write_json(run.path("fit_peak.json"), fit.as_dict())
    print(f"f0 = {fit.center:.6f} Hz  linewidth = {fit.linewidth:.6g} Hz  Q = {fit.q:.4g}")


def cmd_ringdown(run: Run):
    trace = io.read_ringdown(run.input(run.args.trace))
    fit = fit_ringdown(trace, min_segments=run.cfg["analysis"]["min_segments"])
    io.write_json(run.path("ringdown.json"), fit.as_dict())
    print(f"energy decay rate = {fit.rate:.6g} +/- {fit.rate_err:.2g} 1/s")


def cmd_allan(run: Run):
    args, cfg = run.args, run.cfg
    series = io.read_series(run.input(args.series), sample_interval=args.sample_interval)
    curve = allan_curve(series, cfg["analysis"]["tau_grid"])
    for tau, why in curve.skipped:
        run.warn(f"tau = {tau:g} s skipped: {why}")
    payload = {"n_samples": series.n_samples, "sample_interval_s": series.sample_interval, "f0_hz": series.f0}
    if args.format == "csv":
        io.write_allan_curve(run.path("allan.csv"), curve)
    else:
        payload["curve"] = {"tau_s": curve.tau, "sigma": curve.sigma, "n_diffs": curve.n_diffs}
    try:
        fit = fit_noise_model(curve, exponent=args.exponent)
        payload["noise_fit"] = fit.as_dict()
        print(f"A = {fit.amplitude:.4g}  exponent = {fit.exponent:.3f}  "
              f"white_noise_consistent = {fit.white_noise_consistent}")
    except MembraneWorksError as exc:
        payload["noise_fit"] = None
        payload["noise_fit_error"] = str(exc)
        run.warn(f"noise-model fit failed: {exc}")
    io.write_json(run.path("allan.json"), payload)


def cmd_simulate_swap(run: Run):
    args, cfg = run.args, run.cfg
    system = cfg.em_system()
    sched = cfg.schedule(system)
    if args.mismatch_hz is not None:
        w = cfg["swap"]
        tones = electromech.swap_tones(system, cfg.swap_coupling(), w["detuning_khz"], w["balance"],
                                       args.mismatch_hz)
        sched = electromech.ProtocolSchedule(
            sched.with_phase("swapping", tones=tones).phases, sched.detuning, allow_mismatch=True
        )
    opts = cfg.sim_options()
    if args.lossless:
        opts.update(damping_scale=0.0, cavity_damping=False)
    trace = electromech.simulate(system, sched, **opts)
    swap = electromech.first_swap(trace)
    payload = swap.as_dict()
    payload.update(
        swap_coupling_hz=electromech.effective_swap_coupling(system, sched),
        period_convention=cfg["swap"]["period_convention"],
        configured_period_s=cfg["swap"]["period_s"],
        simulated_time_s=float(trace.time[-1]),
        kernel_backend=trace.backend,
    )
    if args.band:
        band = electromech.efficiency_band(system, sched, cfg["swap"]["imbalance_db"], **opts)
        payload["efficiency_band"] = band
    if args.format == "csv":
        io.write_trace(run.path("swap_trace.csv"), trace)
    io.write_json(run.path("swap.json"), payload)
    print(f"transfer efficiency = {swap.efficiency:.4f}  first exchange at {swap.exchange_time:.4f} s")


def cmd_synth(run: Run):
    args, cfg = run.args, run.cfg
    seed = run.seed
    if args.kind == "mode-table":
        spec = cfg.membrane_spec()
        if args.count is not None and args.max_freq_hz is not None:
            raise ValidationError("give only one of --count and --max-freq-hz", field="count")
        if args.count is None and args.max_freq_hz is None:
            args.max_freq_hz = 2.556e6
        modes = synth_mode_table(spec, count=args.count, max_frequency=args.max_freq_hz,
                                 noise_hz=args.noise, seed=seed)
        if args.unassigned:
            modes = [ModeRecord(m.frequency) for m in modes]
        io.write_mode_table(run.path(args.name or "mode_table.csv"), modes)
    elif args.kind == "spectrum":
        s = synth_spectrum(args.center_hz, args.linewidth_hz, noise=args.noise, seed=seed)
        io.write_spectrum(run.path(args.name or "spectrum.csv"), s)
    elif args.kind == "ringdown":
        tr = synth_ringdown(args.rate, args.duration_s, args.sample_interval_s, args.gate_period_s,
                            duty=args.duty, noise=args.noise, seed=seed)
        io.write_ringdown(run.path(args.name or "ringdown.csv"), tr)
    elif args.kind == "freq-series":
        series = synth_frequency_series(args.series_kind, args.n_samples, args.sample_interval_s,
                                        args.center_hz, level=args.level, seed=seed)
        io.write_series(run.path(args.name or "freq_series.csv"), series)
    print(f"wrote {run.outputs[-1]} to {run.out}")


COMMANDS = {
    "fit-stress": cmd_fit_stress,
    "fit-peak": cmd_fit_peak,
    "ringdown": cmd_ringdown,
    "allan": cmd_allan,
    "simulate-swap": cmd_simulate_swap,
    "synth": cmd_synth,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="toolkit config file (INI)")
    common.add_argument("--out", help="output directory (default from config)")
    common.add_argument("--seed", type=int, help="random seed (default from config)")
    common.add_argument("--jobs", type=int, default=1, help="worker processes for Monte-Carlo work")
    common.add_argument("--format", choices=("csv", "json"), default="csv",
                        help="write tables as CSV files or embed them in the JSON result")

    p = argparse.ArgumentParser(prog="membrane-works", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("fit-stress", parents=[common], help="fit biaxial stress to a mode table")
    s.add_argument("table")
    s.add_argument("--resolution-seeds", type=int, default=0,
                   help="also run a Monte-Carlo resolution study with this many seeds")

    s = sub.add_parser("fit-peak", parents=[common], help="Lorentzian fit of a PSD")
    s.add_argument("spectrum")
    s.add_argument("--window", type=float, nargs=2, metavar=("LO_HZ", "HI_HZ"))

    s = sub.add_parser("ringdown", parents=[common], help="energy decay rate from a gated ring-down")
    s.add_argument("trace")

    s = sub.add_parser("allan", parents=[common], help="Allan deviation and noise-model fit")
    s.add_argument("series")
    s.add_argument("--sample-interval", type=float, help="override the sample interval (s)")
    s.add_argument("--exponent", type=float, help="fix the power-law exponent")

    s = sub.add_parser("simulate-swap", parents=[common], help="simulate the two-mode swap protocol")
    s.add_argument("--lossless", action="store_true", help="turn off all damping")
    s.add_argument("--mismatch-hz", type=float, help="offset of the swap-tone separation (Hz)")
    s.add_argument("--band", action="store_true", help="also report the tone-imbalance efficiency band")

    s = sub.add_parser("synth", parents=[common], help="generate synthetic input data")
    s.add_argument("kind", choices=("mode-table", "spectrum", "ringdown", "freq-series"))
    s.add_argument("--name", help="output file name")
    s.add_argument("--count", type=int)
    s.add_argument("--max-freq-hz", type=float)
    s.add_argument("--unassigned", action="store_true", help="leave m, n blank")
    s.add_argument("--noise", type=float, default=0.0)
    s.add_argument("--center-hz", type=float, default=871.93e3)
    s.add_argument("--linewidth-hz", type=float, default=8.13e-3)
    s.add_argument("--rate", type=float, default=4.4e-3, help="energy decay rate (1/s)")
    s.add_argument("--duration-s", type=float, default=600.0)
    s.add_argument("--sample-interval-s", type=float, default=1.0)
    s.add_argument("--gate-period-s", type=float, default=60.0)
    s.add_argument("--duty", type=float, default=0.5)
    s.add_argument("--series-kind", default="white",
                   choices=("white", "random_walk", "constant", "alternating", "ramp", "wander"))
    s.add_argument("--n-samples", type=int, default=4096)
    s.add_argument("--level", type=float, default=1e-9)
    return p


def _setup_logging():
    level = os.environ.get("MEMBRANE_WORKS_LOG", "warning").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s: %(message)s")


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    run = None
    try:
        cfg = load_config(args.config)
        if "MEMBRANE_WORKS_LOG" not in os.environ:
            logging.getLogger().setLevel(cfg["output"]["verbosity"].upper())
        if args.jobs < 1:
            raise ValidationError("--jobs must be >= 1", field="jobs")
        run = Run(args, cfg)
        if args.config:
            run.input(args.config)
        COMMANDS[args.command](run)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        if run:
            run.manifest("validation_error")
        return EXIT_VALIDATION
    except ComputationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        if run:
            run.manifest("computation_error")
        return EXIT_COMPUTATION
    run.manifest("ok")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
