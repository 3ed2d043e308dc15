"""Command-line interface: ``clickhomodyne simulate|sweep|analyze``.

Exit codes: 0 success, 2 configuration or usage error, 3 I/O error,
4 analysis precondition failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import os
import sys
from dataclasses import replace
from datetime import datetime, timezone
from pathlib import Path

from . import __version__
from .hbt import g2_curve, g2_curve_csv, g2_scan_csv
from .homodyne import (
    analyze_sweep,
    clearance_report,
    default_dark_threshold,
    difference_series,
    log_flux_grid,
    rate_normalized_variance,
    run_sweep,
    shot_noise_reference,
    sweep_csv,
)
from .model import PS_PER_S, AnalysisError, ConfigError, config_to_dict, load_config, validate_config
from .simgen import simulate_detector_pair
from .timetag import (
    StreamFormatError,
    atomic_write_bytes,
    bin_counts,
    binned_csv,
    encode_stream,
    read_stream,
)

SEED_ENV = "CLICKHOMODYNE_SEED"

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_ANALYSIS = 4


def _write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def _load(args):
    """Config file plus command-line overrides.

    Seed precedence: ``--seed`` > $CLICKHOMODYNE_SEED > config file.
    """
    cfg = load_config(args.config)
    seed = cfg.seed
    if os.environ.get(SEED_ENV):
        try:
            seed = int(os.environ[SEED_ENV])
        except ValueError:
            raise ConfigError(f"{SEED_ENV}: not an integer") from None
    if args.seed is not None:
        seed = args.seed
    cfg = replace(cfg, seed=seed)
    if args.duration_s is not None:
        cfg = replace(cfg, duration_ps=int(round(args.duration_s * PS_PER_S)))
    if args.dead_time_ns is not None:
        dt = int(round(args.dead_time_ns * 1000))
        cfg = replace(cfg, detector_a=replace(cfg.detector_a, dead_time_ps=dt),
                      detector_b=replace(cfg.detector_b, dead_time_ps=dt))
    return validate_config(cfg)


def parse_flux_spec(spec: str):
    """``log:<start>:<stop>:<points>`` or a comma-separated list of fluxes."""
    try:
        if spec.startswith("log:"):
            start, stop, points = spec[4:].split(":")
            points = int(points)
            if points < 1 or float(start) <= 0 or float(stop) < float(start):
                raise ValueError
            if points == 1:
                return [float(start)]
            return log_flux_grid(float(start), float(stop), points)
        fluxes = [float(f) for f in spec.split(",") if f.strip()]
        if not fluxes or any(f < 0 for f in fluxes):
            raise ValueError
        return fluxes
    except ValueError:
        raise ConfigError(f"bad flux spec {spec!r}") from None


def cmd_simulate(args) -> int:
    cfg = _load(args)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    a, b = simulate_detector_pair(cfg)
    files = {}
    for name, stream in (("channel_a.ttg", a), ("channel_b.ttg", b)):
        data = encode_stream(stream)
        atomic_write_bytes(out / name, data)
        files[name] = {"sha256": hashlib.sha256(data).hexdigest(), "tags": len(stream)}
    manifest = {
        "tool": f"clickhomodyne {__version__}",
        "created_utc": datetime.now(timezone.utc).isoformat(timespec="seconds"),
        "seed": cfg.seed,
        "config": config_to_dict(cfg),
        "files": files,
    }
    _write_text(out / "manifest.json", json.dumps(manifest, indent=2) + "\n")
    for name, info in files.items():
        print(f"{name}: {info['tags']} tags  sha256={info['sha256']}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _load(args)
    fluxes = sorted(parse_flux_spec(args.flux_spec))
    durations = [cfg.duration_ps] * len(fluxes)
    if args.long_points:
        long_ps = int(round(args.long_duration_s * PS_PER_S))
        for i in range(min(args.long_points, len(fluxes))):
            durations[i] = long_ps
    bin_ps = int(round(args.bin_width_ns * 1000))
    want_g2 = args.g2_csv is not None
    results = run_sweep(cfg, fluxes, durations, bin_width_ps=bin_ps, jobs=args.jobs,
                        g2_tau=0 if want_g2 else None,
                        min_coincidences=args.min_coincidences)
    points = [r[0] for r in results] if want_g2 else results
    if want_g2:
        scan = [(p.lo_flux_set_hz, r[1]) for p, r in zip(points, results)]
        _write_text(args.g2_csv, g2_scan_csv(scan, bin_ps))

    threshold = args.dark_threshold_hz
    if threshold is None:
        threshold = default_dark_threshold(cfg)
    report_path = args.report or str(Path(args.out_csv).with_suffix(".report.json"))
    try:
        result = analyze_sweep(points, threshold, args.max_dev)
    except AnalysisError:
        _write_text(args.out_csv, sweep_csv(points))
        raise
    _write_text(args.out_csv, sweep_csv(points, result.v_dc_hz))
    _write_text(report_path, clearance_report(result))
    print(clearance_report(result), end="")
    return EXIT_OK


def cmd_analyze(args) -> int:
    streams = [read_stream(f) for f in args.files]
    if len(streams) != 2:
        raise AnalysisError("analyze needs exactly two time-tag files")
    sa, sb = streams
    if sa.duration_ps != sb.duration_ps:
        raise AnalysisError(f"stream durations differ ({sa.duration_ps} vs {sb.duration_ps} ps)")
    bin_ps = int(round(args.bin_width_ns * 1000))
    if bin_ps > sa.duration_ps:
        raise AnalysisError("bin width exceeds stream duration")
    a, b = bin_counts(sa, bin_ps), bin_counts(sb, bin_ps)
    if args.export_bins:
        _write_text(args.export_bins, binned_csv(a, b))

    if args.mode == "homodyne":
        var, rel = rate_normalized_variance(difference_series(a, b))
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["n_samples", "bin_width_ns", "rate_a_hz", "rate_b_hz",
                    "variance_rate_hz", "variance_rel_err", "shot_noise_ref_hz"])
        w.writerow([len(a), f"{args.bin_width_ns:g}", repr(sa.rate_hz), repr(sb.rate_hz),
                    repr(var), repr(rel), repr(shot_noise_reference(sa.rate_hz + sb.rate_hz))])
        text = buf.getvalue()
    else:
        text = g2_curve_csv(g2_curve(a, b, args.tau_range))

    if args.out:
        _write_text(args.out, text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _add_run_options(p):
    p.add_argument("config", help="key=value configuration file")
    p.add_argument("--seed", type=int, default=None,
                   help=f"RNG seed (overrides ${SEED_ENV} and the config file)")
    p.add_argument("--duration-s", type=float, default=None,
                   help="measurement time per point in seconds (default: config duration_ps)")
    p.add_argument("--dead-time-ns", type=float, default=None,
                   help="dead time of both channels in ns (default: config values)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="clickhomodyne",
        description="Simulate and analyze balanced homodyne detection with click detectors.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="write channel A/B time-tag files and a manifest")
    _add_run_options(p)
    p.add_argument("out_dir")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("sweep", help="LO flux sweep with clearance analysis")
    _add_run_options(p)
    p.add_argument("flux_spec", help="log:<start>:<stop>:<points> or comma list, in photons/s")
    p.add_argument("out_csv")
    p.add_argument("--report", default=None,
                   help="clearance report path (default: <out_csv>.report.json)")
    p.add_argument("--bin-width-ns", type=float, default=500.0)
    p.add_argument("--long-points", type=int, default=0,
                   help="number of lowest-flux points measured for --long-duration-s")
    p.add_argument("--long-duration-s", type=float, default=5.0)
    p.add_argument("--max-dev", type=float, default=0.1,
                   help="allowed |log10(variance/shot noise)| in the linear regime")
    p.add_argument("--dark-threshold-hz", type=float, default=None,
                   help="detected-flux cutoff for the dark floor (default: 10%% of total dark rate)")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--g2-csv", default=None, help="also write g2(0) per flux to this CSV")
    p.add_argument("--min-coincidences", type=int, default=10,
                   help="flag g2 points with fewer coincidences as low-statistics")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("analyze", help="analyze a pair of time-tag files")
    p.add_argument("files", nargs=2, metavar="FILE")
    p.add_argument("--mode", choices=["homodyne", "g2"], default="homodyne")
    p.add_argument("--bin-width-ns", type=float, default=500.0)
    p.add_argument("--tau-range", type=int, default=20)
    p.add_argument("--out", default=None, help="output CSV (default: stdout)")
    p.add_argument("--export-bins", default=None,
                   help="also write bin_index,count_a,count_b,diff CSV here")
    p.set_defaults(func=cmd_analyze)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, StreamFormatError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except AnalysisError as exc:
        print(f"analysis error: {exc}", file=sys.stderr)
        return EXIT_ANALYSIS


if __name__ == "__main__":
    sys.exit(main())
