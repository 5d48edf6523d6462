"""Command-line entry point: ``neuramstrat {train,stratify,estimate,compare,sweep}``."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from .experiments import (
    ConfigError,
    ExperimentConfig,
    Pipeline,
    StageError,
    compare_command,
    load_configs,
    run_experiment,
    sweep_command,
    write_table,
)

log = logging.getLogger("neuramstrat")


def _configs(args) -> list[ExperimentConfig]:
    if not args.config:
        raise ConfigError("--config is required")
    out = []
    for path in args.config:
        out.extend(load_configs(path))
    if args.seed is not None:
        out = [dataclasses.replace(c, seed=args.seed) for c in out]
    return out


def _single(args) -> ExperimentConfig:
    cfgs = _configs(args)
    if len(cfgs) != 1:
        raise ConfigError(f"{args.command} takes exactly one configuration, got {len(cfgs)}")
    return cfgs[0]


def cmd_train(args) -> int:
    cfg = _single(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    pipe = Pipeline(cfg.seed)
    for name in filter(None, (cfg.model, cfg.lf_model)):
        hmap = pipe.manifold(cfg, name)
        hmap.save(out / f"manifold_{name}.json")
        rep = hmap.model.training_report
        print(f"{name}: final loss {rep.final_loss:.3e} after {rep.epochs} epochs on {rep.dataset_size} points")
    return 0


def cmd_stratify(args) -> int:
    cfg = _single(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    strat = Pipeline(cfg.seed).stratification(cfg)
    strat.save(out / "stratification.json")
    print(" ".join(f"{a:.6g}" for a in strat.breakpoints))
    return 0


def cmd_estimate(args) -> int:
    cfg = _single(args)
    row = run_experiment(cfg, args.out, args.threads)
    print(write_table([row], None), end="")
    return 0


def cmd_compare(args) -> int:
    rows = compare_command(_configs(args), args.out, args.threads)
    print(write_table(rows, None), end="")
    return 0


def cmd_sweep(args) -> int:
    cfg = _single(args)
    values = [int(v) for v in args.values.split(",") if v.strip()]
    rows = sweep_command(cfg, args.param, values, args.out, args.threads)
    print(write_table(rows, None), end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="neuramstrat", description="NeurAM-stratified Monte Carlo experiments")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name: str, fn, help_: str):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--config", action="append", help="JSON config (repeatable for compare)")
        sp.add_argument("--seed", type=int, default=None, help="master seed, overrides the config")
        sp.add_argument("--out", default="results", help="output directory")
        sp.add_argument("--threads", type=int, default=1, help="worker threads for repetitions")
        sp.set_defaults(func=fn)
        return sp

    add("train", cmd_train, "train NeurAM maps and save them")
    add("stratify", cmd_stratify, "build and save a stratification")
    add("estimate", cmd_estimate, "run repeated estimates for one config")
    add("compare", cmd_compare, "tabulate several estimators against MC")
    sw = add("sweep", cmd_sweep, "repeat one config over several N or S")
    sw.add_argument("--param", choices=("N", "S"), default="N")
    sw.add_argument("--values", required=True, help="comma-separated values")
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.threads < 1:
        print("error: --threads must be positive", file=sys.stderr)
        return 2
    try:
        return args.func(args)
    except (ConfigError, json.JSONDecodeError, FileNotFoundError, TypeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
