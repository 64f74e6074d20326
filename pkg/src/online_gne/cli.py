"""Command-line entry point: run, report and validate experiments."""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .experiment import (
    ConfigError, CorruptRun, execute, list_presets, load_config, preset_path, report, validate,
)
from .learner import InvariantViolation

EXIT_OK, EXIT_INVARIANT, EXIT_CONFIG = 0, 1, 2


def _resolve(config: str) -> Path:
    p = Path(config)
    if p.exists() or p.suffix == ".toml":
        return p
    return preset_path(config)


def _load(args):
    return load_config(_resolve(args.config), seed=args.seed, horizon=args.horizon, out=args.out,
                       no_invariant_checks=getattr(args, "no_invariant_checks", False),
                       workers=getattr(args, "workers", None))


def _print_summary(summary):
    print(f"horizons: {summary['horizons'][0]} .. {summary['horizons'][-1]} "
          f"({len(summary['horizons'])} points), seeds: {summary['n_seeds']}")
    print(f"mean max_i Reg_i(T)/T = {summary['mean_final_max_regret_avg']:.6g}")
    print(f"mean R_g(T)/T         = {summary['mean_final_violation_avg']:.6g}")
    print(f"invariants: {summary.get('invariants', 'unknown')}")
    for seed, info in summary["seeds"].items():
        line = (f"  seed {seed}: regret slope {info['regret_slope']}, "
                f"violation slope {info['violation_slope']}")
        if info["comparator_fallback_fraction"] > 0:
            line += (f", comparator set empty at {100 * info['comparator_fallback_fraction']:.0f}% "
                     "of horizons (action-set fallback)")
        if "final_tracking_error" in info:
            line += (f", tracking error {info['final_tracking_error']:.4g}, "
                     f"averaged error {info['final_averaged_error']:.4g}")
        print(line)


def cmd_run(args) -> int:
    try:
        cfg = _load(args)
    except (ConfigError, ValueError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        summary = execute(cfg)
    except InvariantViolation as e:
        print(f"invariant violated: {e}", file=sys.stderr)
        return EXIT_INVARIANT
    print(f"wrote {cfg.out}")
    _print_summary(summary)
    return EXIT_OK


def cmd_report(args) -> int:
    try:
        summary = report(args.run_dir)
    except (CorruptRun, ConfigError, ValueError) as e:
        print(f"report error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    _print_summary(summary)
    return EXIT_OK


def cmd_validate(args) -> int:
    try:
        cfg = _load(args)
        for check, detail in validate(cfg):
            print(f"ok  {check}: {detail}")
    except (ConfigError, ValueError) as e:
        print(f"invalid: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


def cmd_presets(args) -> int:
    for name in list_presets():
        print(name)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="online-gne", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    def overrides(p):
        p.add_argument("config", help="TOML config path or preset name")
        p.add_argument("--seed", type=int, help="run a single seed instead of the config list")
        p.add_argument("--horizon", type=int, help="override the number of rounds")
        p.add_argument("--out", help="override the output directory")

    p = sub.add_parser("run", help="run an experiment and write logs and reports")
    overrides(p)
    p.add_argument("--no-invariant-checks", action="store_true",
                   help="skip per-round bound checks")
    p.add_argument("--workers", type=int, help="threads for per-player updates")
    p.set_defaults(fn=cmd_run)

    p = sub.add_parser("report", help="recompute metrics from a run directory")
    p.add_argument("run_dir")
    p.set_defaults(fn=cmd_report)

    p = sub.add_parser("validate", help="check a config without running it")
    overrides(p)
    p.set_defaults(fn=cmd_validate)

    p = sub.add_parser("presets", help="list bundled configs")
    p.set_defaults(fn=cmd_presets)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
