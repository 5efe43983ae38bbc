"""Command-line entry point: ``isacsim {tradeoff,rician,power,converge,validate}``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from .metrics import BANDS
from .experiments import (SystemConfig, convergence_trace, power_report, rician_sweep,
                          tradeoff_sweep, validate, write_csv)


def parse_grid(text: str) -> list:
    """``"0:1:0.1"`` (inclusive range) or ``"0.1,0.5,0.9"``."""
    if ":" in text:
        parts = [float(p) for p in text.split(":")]
        if len(parts) != 3 or parts[2] <= 0:
            raise argparse.ArgumentTypeError(f"bad range {text!r}; use start:stop:step")
        start, stop, step = parts
        n = int(np.floor((stop - start) / step + 1e-9)) + 1
        return [round(start + j * step, 10) for j in range(n)]
    return [float(p) for p in text.split(",") if p]


def _config(args) -> SystemConfig:
    cfg = SystemConfig.load(args.config) if args.config else SystemConfig()
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.trials is not None:
        changes["seeds"] = args.trials
    if args.modes:
        changes["modes"] = args.modes.split(",")
    if args.weights:
        changes["weights"] = parse_grid(args.weights)
    if args.workers is not None:
        changes["workers"] = args.workers
    if args.restarts is not None:
        changes["sca"] = {**cfg.sca, "restarts": args.restarts}
    return cfg.replace(**changes) if changes else cfg


def _bands(args, default) -> list:
    bands = args.band.split(",") if args.band else list(default)
    for b in bands:
        if b not in ("narrow", "wide"):
            raise SystemExit(f"unknown band {b!r}")
    return bands


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON configuration file")
    common.add_argument("--out", default="results", help="output directory")
    common.add_argument("--seed", type=int, help="master seed")
    common.add_argument("--trials", type=int, help="number of channel realisations")
    common.add_argument("--modes", help="comma list of duplex modes (full,half)")
    common.add_argument("--band", help="comma list of bands (narrow,wide)")
    common.add_argument("--weights", help="weight grid, start:stop:step or comma list")
    common.add_argument("--degrees", action="store_true", help="report root-CRB in degrees")
    common.add_argument("--workers", type=int, help="worker processes")
    common.add_argument("--restarts", type=int, help="SCA random restarts per point")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="isacsim", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("tradeoff", parents=[common], help="rate/CRB tradeoff sweep")
    p = sub.add_parser("rician", parents=[common], help="sweep over the Rician factor")
    p.add_argument("--betas", default="-10:20:5", help="Rician factors in dB")
    sub.add_parser("power", parents=[common], help="communication vs sensing power")
    p = sub.add_parser("converge", parents=[common], help="per-iteration trace of one run")
    p.add_argument("--weight", type=float, default=0.5)
    p.add_argument("--mode", choices=("full", "half"), default="full")
    p.add_argument("--trial", type=int, default=0, help="channel realisation index")
    p = sub.add_parser("validate", parents=[common], help="run oracles and mutation canaries")
    p.add_argument("--quick", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    cfg = _config(args)
    out = Path(args.out)

    if args.command == "tradeoff":
        rows = [p.row() for b in _bands(args, [cfg.band])
                for p in tradeoff_sweep(cfg.for_band(b))]
        print(write_csv(out / "tradeoff.csv", rows, cfg))
    elif args.command == "rician":
        rows = [{"band": b, **r} for b in _bands(args, [cfg.band])
                for r in rician_sweep(cfg.for_band(b), parse_grid(args.betas),
                                      degrees=args.degrees)]
        print(write_csv(out / "rician.csv", rows, cfg))
    elif args.command == "power":
        print(write_csv(out / "power.csv", power_report(cfg, _bands(args, BANDS)), cfg))
    elif args.command == "converge":
        rows = [{"band": b, **r} for b in _bands(args, [cfg.band])
                for r in convergence_trace(cfg.for_band(b), args.weight, args.mode, args.trial)]
        print(write_csv(out / "converge.csv", rows, cfg))
    elif args.command == "validate":
        checks = validate(cfg, quick=args.quick)
        for c in checks:
            print(f"{'PASS' if c.passed else 'FAIL'}  {c.name}: {c.measured:.3e} "
                  f"(tolerance {c.tolerance:.0e})")
        rows = [{"check": c.name, "passed": c.passed, "measured": c.measured,
                 "tolerance": c.tolerance} for c in checks]
        write_csv(out / "validate.csv", rows, cfg)
        return 0 if all(c.passed for c in checks) else 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
