"""Batch command-line front end.

Subcommands: scan, tags, analyze, tomo, sweep.  Every run is driven by a TOML
config (--config) whose `scenario` must match the subcommand; data go to files
in the output directory (--out, else $FWMPAIRS_OUT, else the working
directory), one-line result summaries go to stdout, and diagnostics go to
stderr.  Exit codes: 0 success, 2 config validation, 3 steady-state solver
failure, 4 synthesis capacity, 5 unsorted tag input, 6 optimizer failure.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

from .atomic import NoUniqueSteadyState
from .config import ConfigError, load_config
from .pipelines import run_analyze, run_scan, run_sweep, run_tags, run_tomo
from .streams import CapacityExceeded, UnsortedStream
from .tomography import OptimizerFailed

OUT_DIR_ENV = "FWMPAIRS_OUT"

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVER = 3
EXIT_CAPACITY = 4
EXIT_UNSORTED = 5
EXIT_OPTIMIZER = 6


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fwmpairs",
        description="Warm-vapor photon-pair source simulation and analysis",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    commands = {
        "scan": "Doppler-weighted scattering profile over a velocity grid",
        "tags": "synthesize a signal/idler time-tag file",
        "analyze": "coincidence, g_si, heralding, and linewidth metrics from tags",
        "tomo": "maximum-likelihood two-qubit tomography from a counts CSV",
        "sweep": "grid of synthesize+analyze runs as long-form CSV",
    }
    for name, help_text in commands.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="TOML run configuration")
        p.add_argument("--out", default=None, help=f"output directory (default ${OUT_DIR_ENV} or .)")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        if name == "sweep":
            p.add_argument("--workers", type=int, default=1,
                           help="concurrent grid points (output is order-independent)")
    return parser


def _resolve_out_dir(flag_value: str | None) -> Path:
    if flag_value is not None:
        return Path(flag_value)
    env = os.environ.get(OUT_DIR_ENV)
    return Path(env) if env else Path(".")


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)

    try:
        job = load_config(args.config, expected_scenario=args.command,
                          seed_override=args.seed)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    workers = getattr(args, "workers", 1)
    if workers < 1:
        print("config error: --workers must be >= 1", file=sys.stderr)
        return EXIT_CONFIG

    out_dir = _resolve_out_dir(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    try:
        if args.command == "scan":
            summary = run_scan(job, out_dir)
            print(
                f"peak {summary['peak_velocity_mps']:.2f} m/s "
                f"(predicted {summary['predicted_velocity_mps']:.2f} m/s), "
                f"mb_overlap {summary['mb_overlap']}"
            )
        elif args.command == "tags":
            summary = run_tags(job, out_dir)
            print(
                f"wrote {summary['path']}: "
                f"signal {summary['signal_tags']} tags "
                f"({_rate(summary['signal_rate_per_s'])}), "
                f"idler {summary['idler_tags']} tags "
                f"({_rate(summary['idler_rate_per_s'])})"
            )
        elif args.command == "analyze":
            summary = run_analyze(job, out_dir)
            print(
                f"coincidence rate {_rate(summary['coincidence_rate_per_s'])}, "
                f"gsi peak {summary['gsi_peak']}, heralding {summary['heralding']}"
            )
        elif args.command == "tomo":
            summary = run_tomo(job, out_dir)
            print(
                f"fidelity {summary['fidelity_phi_plus']:.4f}, "
                f"lower bound {summary['fidelity_lower_bound']:.4f}"
            )
        else:
            summary = run_sweep(job, out_dir, workers=workers)
            print(f"sweep: {summary['ok']}/{summary['points']} points ok")
    except NoUniqueSteadyState as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except CapacityExceeded as exc:
        print(f"capacity error: {exc}", file=sys.stderr)
        return EXIT_CAPACITY
    except UnsortedStream as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_UNSORTED
    except OptimizerFailed as exc:
        print(f"optimizer error: {exc}", file=sys.stderr)
        return EXIT_OPTIMIZER
    except ValueError as exc:
        # malformed input data discovered mid-run (e.g. bad channel bytes)
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_UNSORTED if args.command == "analyze" else EXIT_CONFIG
    return EXIT_OK


def _rate(value) -> str:
    return "n/a" if value is None else f"{value:.6g}/s"


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
