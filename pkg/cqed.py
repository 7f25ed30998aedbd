#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Command-line front end.

    cqed.py simulate   --config high_flux.cfg --seed 1 --cycles 4997 --out run1/
    cqed.py analyze    {g2,pulse-avg,background,conditional,pdeltak,estimators} ...
    cqed.py efficiency --config high_flux.cfg --grid-points 65 --out efficiency.csv
    cqed.py calibrate  --config high_flux.cfg --target-hz 1530 --write-config calibrated.cfg

Exit codes: 0 ok, 1 unexpected failure, 2 invalid input or config,
3 malformed click file, 4 integrator failure, 5 calibration failure,
6 statistics undefined for the data.
"""

import argparse
import logging
import os
import sys

import app_logs
import click_stats
import conditioning
from cavity_dynamics import INTEGRATOR_ATOL, INTEGRATOR_METHOD, INTEGRATOR_RTOL, TWO_PI, tabulate_efficiency
from clickfile import read_clicks, write_clicks, write_manifest, write_truth
from config import dump_config, load_config
from errors import CqedError, ValidationError
from reports import write_csv, write_svg_chart, write_text
from source_sim import (DEFAULT_TABLE_POINTS, PILOT_CYCLES, PILOT_SEED, ConfigBundle, DetectorModel,
                        calibrate_flux, run_experiment)

logger = logging.getLogger("cqed")

DEFAULT_NOISE_HZ = DetectorModel().dark_rate


def _bundle(path):
    return load_config(path) if path else ConfigBundle()


def _write_manifest(directory, args, bundle=None):
    """manifest.txt in directory: every command-line argument, then the resolved config."""
    manifest = {"command": args.command}
    manifest.update((key, value) for key, value in vars(args).items() if key not in ("command", "func"))
    if bundle is not None:
        for line in dump_config(bundle).splitlines():
            if "=" in line:
                key, value = (part.strip() for part in line.split("=", 1))
                manifest[f"config.{key}"] = value
    write_manifest(os.path.join(directory or ".", "manifest.txt"), manifest)


def cmd_simulate(args) -> int:
    bundle = _bundle(args.config)
    if args.cycles < 1:
        raise ValidationError(f"--cycles must be >= 1, got {args.cycles}")
    progress = app_logs.progress_enabled(args.quiet)

    app_logs.info(f"Simulating {args.cycles} cycles with seed {args.seed}")
    table = tabulate_efficiency(bundle.cavity, args.grid_points, progress=progress)
    output = run_experiment(bundle, args.cycles, args.seed, table=table,
                            workers=args.workers, progress=progress)

    os.makedirs(args.out, exist_ok=True)
    write_clicks(os.path.join(args.out, "clicks.csv"), output.clicks, seed=args.seed)
    write_truth(os.path.join(args.out, "truth.csv"), output.truth)
    _write_manifest(args.out, args, bundle)
    app_logs.ok(f"{len(output.clicks)} clicks written to {args.out}")
    return 0


def _load_stream(args):
    if not args.input:
        raise ValidationError(f"analyze {args.mode} needs --in <clicks.csv>")
    clicks, _ = read_clicks(args.input)
    return clicks


def _noise_rate(args) -> float:
    if args.inoise is None:
        app_logs.warn(f"No --inoise given; using the default dark rate {DEFAULT_NOISE_HZ} 1/s")
        return DEFAULT_NOISE_HZ
    return args.inoise


def _analyze_estimators(args):
    if args.ibar is None or args.inoise is None:
        raise ValidationError("analyze estimators needs --ibar and --inoise")
    rates = click_stats.RateSummary.from_rates(args.ibar, args.inoise)
    g2_min, g2_max = click_stats.estimator_extrema(rates)
    pair_min, pair_max = click_stats.photon_pair_extrema(rates)
    logger.info(f"I={rates.i_bar} I_N={rates.i_noise} I_P={rates.i_photon}: "
                f"g2_N={click_stats.noise_floor(rates):.3f} g2_P in [{pair_min:.3f}, {pair_max:.3f}]")
    print(f"g2_min={g2_min:.3f} g2_max={g2_max:.3f}")


def _analyze_g2(args):
    clicks = _load_stream(args)
    range_ns = int(round(args.range_us * 1000))
    hist = click_stats.g2_histogram(clicks, args.bin_ns, range_ns)
    path = os.path.join(args.out, "g2.csv")
    write_csv(path, ("lag_ns", "g2", "raw_pairs", "sigma"),
              zip(hist.centers_ns, hist.g2, hist.raw_pairs.astype(int), hist.sigma))
    if args.svg:
        write_svg_chart(os.path.join(args.out, "g2.svg"), hist.centers_ns, {"g2": hist.g2},
                        title="Intensity correlation", x_label="lag (ns)", y_label="g2", step=True)
    app_logs.ok(f"g2 histogram written to {path}")


def _analyze_pulse_avg(args):
    clicks = _load_stream(args)
    rate = click_stats.pulse_averaged_rate(clicks, args.detector, args.phase_bin_ns)
    path = os.path.join(args.out, "pulse_avg.csv")
    write_csv(path, ("phase_ns", "rate_hz"), zip(rate.phase_ns, rate.rate))
    if args.svg:
        write_svg_chart(os.path.join(args.out, "pulse_avg.svg"), rate.phase_ns, {"rate": rate.rate},
                        title="Pulse-averaged count rate", x_label="phase (ns)", y_label="rate (1/s)",
                        step=True)
    app_logs.ok(f"Pulse-averaged rate ({rate.n_periods} periods) written to {path}")


def _analyze_background(args):
    clicks = _load_stream(args)
    rates = click_stats.summarize_rates(clicks, _noise_rate(args))
    background = click_stats.background_correlation(
        click_stats.pulse_averaged_rate(clicks, 1, args.phase_bin_ns),
        click_stats.pulse_averaged_rate(clicks, 2, args.phase_bin_ns))
    split = click_stats.split_background(background, rates)

    path = os.path.join(args.out, "background.csv")
    write_csv(path, ("tau_ns", "g2_background"), zip(background.tau_ns, background.g2))
    write_csv(os.path.join(args.out, "background_split.csv"),
              ("tau_ns", "g2_background", "g2_noise", "g2_different_atom"),
              zip(split.tau_ns, split.total, split.noise, split.different_atom))
    if args.svg:
        write_svg_chart(os.path.join(args.out, "background.svg"), split.tau_ns,
                        {"total": split.total, "noise": split.noise, "different atom": split.different_atom},
                        title="Background correlation", x_label="tau (ns)", y_label="g2")
    print(f"g2C_min={background.g2_min:.3f} g2C_max={background.g2_max:.3f}")
    app_logs.ok(f"Background correlation written to {path}")


def _conditioning_inputs(args):
    clicks = _load_stream(args)
    stats = conditioning.conditioning_stats(clicks, _noise_rate(args), args.eta)
    pulses = conditioning.bin_clicks_to_pulses(clicks)
    series = conditioning.select_triggered(pulses)
    return stats, pulses, series


def _analyze_conditional(args):
    stats, _, series = _conditioning_inputs(args)
    result = conditioning.conditional_g2(series, args.delta_range)
    off_peak = result.off_peak_summary()

    path = os.path.join(args.out, "conditional_g2.csv")
    write_csv(path, ("delta_i", "g2", "n_events", "sigma"),
              zip(result.delta_i, result.g2, result.n_events.astype(int), result.sigma))
    summary = (f"n_bar_P = {stats.n_bar_p:.4e}\n"
               f"n_bar_N = {stats.n_bar_n:.4e}\n"
               f"p_atom = {stats.p_atom:.4f}\n"
               f"M = {series.size}\n"
               f"g2(0) = {result.at(0):.4f} +- {result.sigma[args.delta_range]:.4f} "
               f"(n_e = {int(result.n_events[args.delta_range])})\n"
               f"g2_off_peak = {off_peak.g2_mean:.4f} +- {off_peak.sigma:.4f} "
               f"(mean n_e = {off_peak.n_events_mean:.1f})\n")
    write_text(os.path.join(args.out, "summary.txt"), summary)
    if args.svg:
        write_svg_chart(os.path.join(args.out, "conditional_g2.svg"), result.delta_i, {"g2": result.g2},
                        title="Conditional pulse-to-pulse correlation", x_label="delta i", y_label="g2",
                        errors={"g2": result.sigma})
    print(summary, end="")
    app_logs.ok(f"Conditional g2 written to {path}")


def _analyze_pdeltak(args):
    stats, pulses, series = _conditioning_inputs(args)
    result = conditioning.conditional_emission_probability(pulses, series, stats, args.delta_range)
    path = os.path.join(args.out, "pdeltak.csv")
    write_csv(path, ("delta_k", "p_bar", "sigma"), zip(result.delta_k, result.p_bar, result.sigma))
    if args.svg:
        write_svg_chart(os.path.join(args.out, "pdeltak.svg"), result.delta_k, {"p_bar": result.p_bar},
                        title="Conditional emission probability", x_label="delta k", y_label="p",
                        errors={"p_bar": result.sigma})
    app_logs.ok(f"Emission probabilities written to {path}")


ANALYZERS = {
    "g2": _analyze_g2,
    "pulse-avg": _analyze_pulse_avg,
    "background": _analyze_background,
    "conditional": _analyze_conditional,
    "pdeltak": _analyze_pdeltak,
    "estimators": _analyze_estimators,
}


def cmd_analyze(args) -> int:
    if args.mode != "estimators":
        os.makedirs(args.out, exist_ok=True)
    ANALYZERS[args.mode](args)
    if args.mode != "estimators":
        _write_manifest(args.out, args)
    return 0


def cmd_efficiency(args) -> int:
    bundle = _bundle(args.config)
    table = tabulate_efficiency(bundle.cavity, args.grid_points,
                                progress=app_logs.progress_enabled(args.quiet))
    comments = [f"integrator={INTEGRATOR_METHOD} atol={INTEGRATOR_ATOL:g} rtol={INTEGRATOR_RTOL:g}",
                f"escape_fraction={bundle.cavity.escape_fraction:g}"]
    rows = zip(table.g_grid / TWO_PI, table.g_grid / table.g_max if table.g_max > 0 else table.g_grid,
               table.probabilities, table.escape_weighted(table.g_grid))
    write_csv(args.out, ("g_eff_hz", "g_over_gmax", "probability", "escape_weighted"), rows, comments)
    _write_manifest(os.path.dirname(args.out), args, bundle)
    app_logs.ok(f"Optimal coupling: {table.probabilities[-1]:.4f} raw, "
                f"{float(table.escape_weighted(table.g_max)):.4f} through the output coupler")
    return 0


def cmd_calibrate(args) -> int:
    bundle = _bundle(args.config)
    progress = app_logs.progress_enabled(args.quiet)
    table = tabulate_efficiency(bundle.cavity, args.grid_points, progress=progress)
    rate_lambda = calibrate_flux(args.target_hz, bundle, table=table,
                                 pilot_cycles=args.pilot_cycles, seed=args.seed, progress=progress)
    print(f"rate_lambda={rate_lambda:.3f}")
    if args.write_config:
        write_text(args.write_config, dump_config(bundle.with_rate(rate_lambda)))
        _write_manifest(os.path.dirname(args.write_config), args, bundle.with_rate(rate_lambda))
        app_logs.ok(f"Calibrated config written to {args.write_config}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cqed.py",
                                     description="Cavity-QED single-photon source: simulation and photon statistics")
    parser.add_argument("--log-file", default=app_logs.LOG_FILE, help="log file (default: %(default)s)")
    parser.add_argument("--quiet", action="store_true", help="no progress bars or console log")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate click stream and ground truth")
    p.add_argument("--config", help="config file (defaults when omitted)")
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--cycles", type=int, required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--workers", type=int, default=None, help="parallel workers (capped by CQED_THREADS)")
    p.add_argument("--grid-points", type=int, default=DEFAULT_TABLE_POINTS)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("analyze", help="photon statistics of a click file")
    p.add_argument("mode", choices=sorted(ANALYZERS))
    p.add_argument("--in", dest="input", help="click-stream file")
    p.add_argument("--out", default=".", help="output directory (default: %(default)s)")
    p.add_argument("--svg", action="store_true", help="also write an SVG chart")
    p.add_argument("--bin-ns", type=int, default=click_stats.DEFAULT_BIN_NS)
    p.add_argument("--range-us", type=float, default=click_stats.DEFAULT_RANGE_NS / 1000)
    p.add_argument("--phase-bin-ns", type=int, default=click_stats.PHASE_BIN_NS)
    p.add_argument("--detector", type=int, choices=(1, 2), default=None)
    p.add_argument("--delta-range", type=int, default=conditioning.DEFAULT_DELTA_RANGE)
    p.add_argument("--ibar", type=float, help="mean count rate per detector (1/s)")
    p.add_argument("--inoise", type=float, help="noise count rate per detector (1/s)")
    p.add_argument("--eta", type=float, default=conditioning.DEFAULT_ETA)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("efficiency", help="tabulate emission probability against coupling")
    p.add_argument("--config")
    p.add_argument("--grid-points", type=int, default=DEFAULT_TABLE_POINTS)
    p.add_argument("--out", required=True, help="CSV file")
    p.set_defaults(func=cmd_efficiency)

    p = sub.add_parser("calibrate", help="find the atom rate giving a target photon rate")
    p.add_argument("--config")
    p.add_argument("--target-hz", type=float, required=True, help="target I_P per detector (1/s)")
    p.add_argument("--pilot-cycles", type=int, default=PILOT_CYCLES)
    p.add_argument("--seed", type=int, default=PILOT_SEED)
    p.add_argument("--grid-points", type=int, default=DEFAULT_TABLE_POINTS)
    p.add_argument("--write-config", help="write the calibrated config here")
    p.set_defaults(func=cmd_calibrate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    app_logs.setup_logging(args.log_file, console=not args.quiet)

    try:
        return args.func(args)
    except CqedError as e:
        logging.error(f"{type(e).__name__}: {e}")
        app_logs.fail(str(e))
        return e.exit_code
    except Exception as e:
        logging.exception(f"Unexpected failure: {e}")
        app_logs.fail(f"unexpected failure: {e}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
