"""Command-line entry point.

Subcommands mirror the experiment sweeps (distance, wdm, stability) plus
`calibrate`, which re-measures the channel-model constants by Monte Carlo and
freezes them to a calibration file.

Exit codes: 0 success, 1 configuration error, 2 some sweep points failed.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys

from . import harness
from .calibration import measure_delay_scale, mdl_accumulation_table
from .config import ExperimentConfig, load_config
from .core import Seed
from .errors import ConfigError


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ccfsim",
        description="Coupled-core fiber transmission simulator and metrics harness",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("distance", "tau_m and sigma_rms versus span count, with law fits"),
        ("wdm", "per-WDM-channel net/achievable rates"),
        ("stability", "repeated redraws at a fixed distance"),
        ("calibrate", "Monte Carlo calibration of channel-model constants"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", default=None, help="JSON config file")
        p.add_argument("--seed", type=int, default=None, help="override master seed")
        p.add_argument("--out", default="out", help="output directory")
        p.add_argument(
            "--full",
            action="store_true",
            help="paper scale: 24 modes, all WDM slots simulated (slow)",
        )
        p.add_argument("--workers", type=int, default=None, help="parallel workers")
    return parser


def _prepare_config(args) -> ExperimentConfig:
    config = load_config(args.config)
    if args.seed is not None:
        config.run = dataclasses.replace(config.run, master_seed=args.seed)
    if args.workers is not None:
        config.run = dataclasses.replace(config.run, workers=args.workers)
    if args.full:
        print("warning: --full runs 24-mode, all-slot simulations; expect a long run")
        config = config.full_scale()
    return config.validate()


def _run_calibrate(config: ExperimentConfig, out_dir: str) -> int:
    seed = Seed(config.run.master_seed, ("calibrate",))
    delay = measure_delay_scale(
        seed, n_modes=config.run.n_modes, smd_coeff=config.link.smd_coeff_ps_sqrt_km
    )
    table = mdl_accumulation_table(
        seed,
        sorted(set(config.run.sweep_span_counts)),
        n_modes=config.run.n_modes,
        sigma_g_db=max(config.link.sigma_g_db, 0.05),
        trials=300,
    )
    payload = {
        "schema_version": config.schema_version,
        "config_hash": config.config_hash(),
        "delay_scale": delay,
        "mdl_accumulation": {str(k): v for k, v in table.items()},
    }
    import os

    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, "calibration.json")
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"delay_scale = {delay['delay_scale']:.6f} "
          f"(measured width {delay['measured_width_ps']:.2f} ps, "
          f"target {delay['target_width_ps']:.2f} ps)")
    for k, v in table.items():
        print(f"mdl accumulation f({k}) = {v:.4f}")
    print(f"wrote {path}")
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = _prepare_config(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1

    if args.command == "calibrate":
        return _run_calibrate(config, args.out)

    runner = {
        "distance": harness.run_distance_sweep,
        "wdm": harness.run_wdm_sweep,
        "stability": harness.run_stability_sweep,
    }[args.command]
    try:
        report = runner(config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    paths = harness.emit_outputs(report, args.out, args.command, config)
    for kind, path in paths.items():
        print(f"{kind}: {path}")
    if args.command == "distance" and report.fit_a_ps_sqrt_km is not None:
        print(f"fit a = {report.fit_a_ps_sqrt_km:.2f} ps/sqrt(km)")
        if report.fit_sigma_g_db is not None:
            print(f"fit sigma_g = {report.fit_sigma_g_db:.3f} dB")
    if args.command == "wdm":
        totals = report.totals()
        print(
            f"totals: net {totals['net_rate_tbps']:.2f} Tb/s, "
            f"achievable {totals['achievable_rate_tbps']:.2f} Tb/s"
        )
    if report.errors:
        print(f"{len(report.errors)} sweep point(s) failed", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
