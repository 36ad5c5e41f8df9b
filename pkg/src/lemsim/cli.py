"""Command-line entry point: ``lemsim {train,evaluate,manipulate,sweep,compare}``."""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

from .config import load_config
from .data import ConfigError, ProfileError

log = logging.getLogger("lemsim")


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--market", choices=["LEM_A", "LEM_B", "custom"])
    p.add_argument("--battery-kwh", type=float)
    p.add_argument("--manipulation", choices=["on", "off"])
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--output-dir", help="where artifacts are written")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override any config key (repeatable)")


def _config(args):
    overrides = {}
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        overrides[k.strip()] = v.strip()
    # dedicated flags, when given, take precedence over --set
    flags = {
        "market": args.market, "battery_kwh": args.battery_kwh, "seed": args.seed, "epochs": args.epochs,
        "output_dir": args.output_dir,
        "manipulation": None if args.manipulation is None else args.manipulation == "on",
    }
    overrides.update({k: v for k, v in flags.items() if v is not None})
    return load_config(args.config, overrides)


def _print_report(report) -> None:
    for scenario, per_group in report.benefits.items():
        cells = "  ".join(f"G{g}: {v:9.4f}" for g, v in sorted(per_group.items()))
        print(f"{report.label:<16} {scenario:<12} {cells}")


def cmd_train(args) -> int:
    from .experiment import run_experiment

    cfg = _config(args)
    report = run_experiment(cfg)
    _print_report(report)
    print(f"artifacts written to {cfg.output_dir}")
    return 0


def cmd_evaluate(args) -> int:
    from .experiment import evaluate_checkpoints

    cfg = _config(args)
    report = evaluate_checkpoints(cfg, args.checkpoints)
    _print_report(report)
    return 0


def cmd_manipulate(args) -> int:
    from .experiment import manipulated_series
    from .maddpg import roster_from_config

    cfg = _config(args)
    prices, _, curves = manipulated_series(cfg, roster_from_config(cfg), output_dir=cfg.output_dir)
    if curves:
        print(f"VAE-GAN final reconstruction MSE (normalized): {curves[-1]['mse']:.6f}")
    print(f"manipulated prices written to {Path(cfg.output_dir) / 'prices.csv'}")
    return 0


def cmd_sweep(args) -> int:
    from .experiment import sweep

    cfg = _config(args)
    for report in sweep(cfg, cfg.output_dir):
        _print_report(report)
    return 0


def cmd_compare(args) -> int:
    from .experiment import BenefitReport, compare

    reports = [BenefitReport.load(p) for p in args.reports]
    rows = compare(reports, args.scenario or None)
    fields = list(rows[0])
    writer = csv.DictWriter(sys.stdout if not args.out else open(args.out, "w", newline=""),
                            fieldnames=fields, lineterminator="\n")
    writer.writeheader()
    for r in rows:
        writer.writerow({k: (f"{v:.6f}" if isinstance(v, float) else v) for k, v in r.items()})
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lemsim", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train agents, evaluate, write reports")
    _add_common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="evaluate saved agent checkpoints")
    _add_common(p)
    p.add_argument("--checkpoints", required=True, help="directory with agent_<id>.npz files")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("manipulate", help="fit the price adversary and export manipulated prices")
    _add_common(p)
    p.set_defaults(func=cmd_manipulate)

    p = sub.add_parser("sweep", help="both markets x both battery sizes, nominal and manipulated")
    _add_common(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("compare", help="side-by-side group benefits from report.json files")
    p.add_argument("reports", nargs="+")
    p.add_argument("--scenario", action="append", choices=["nominal", "manipulated"],
                   help="scenario per report, in order (default: nominal for all)")
    p.add_argument("--out", help="write CSV here instead of stdout")
    p.set_defaults(func=cmd_compare)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, ProfileError, ValueError, OSError) as exc:
        print(f"lemsim: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
