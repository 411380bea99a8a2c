"""Command-line entry point: train, predict, sweep, eval-hv, gen-data."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from ..numkernel.autodiff import NumericError
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .commands import (cmd_eval_hv, cmd_gen_data, cmd_predict, cmd_sweep, cmd_train, dump_json,
                       load_affinity, load_bundle, parse_preference)
from .config import ConfigError, RunConfig, load_config, parse_config

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3

__all__ = ["main", "ConfigError", "RunConfig", "load_config", "parse_config", "Checkpoint",
           "load_checkpoint", "save_checkpoint", "cmd_train", "cmd_predict", "cmd_sweep",
           "cmd_eval_hv", "cmd_gen_data", "load_bundle", "load_affinity", "parse_preference"]


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dynmtl", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)
    for name, hint in (("train", "train all stages and write checkpoints"),
                       ("predict", "print the tree and cost for one preference"),
                       ("sweep", "evaluate a preference grid"),
                       ("eval-hv", "hypervolume with and without weight adaptation"),
                       ("gen-data", "write the synthetic suite to disk")):
        s = sub.add_parser(name, help=hint)
        s.add_argument("--config", type=Path, help="run config JSON (default: OUT/config.json)")
        s.add_argument("--out", type=Path, help="output / checkpoint directory")
        s.add_argument("--seed", type=int, help="overrides the config seed")
        if name == "predict":
            s.add_argument("--r", required=True, help="task preference, e.g. 0.5,0.3,0.2")
            s.add_argument("--c", type=float, default=0.0, help="cost preference in [0, 1]")
        if name == "sweep":
            s.add_argument("--grid", type=int, help="simplex points per c value")
    return p


def _resolve(args) -> tuple[RunConfig, Path]:
    if args.config is None:
        if args.out is None or args.command in ("train", "gen-data"):
            raise ConfigError("--config: required")
        path = args.out / "config.json"
    else:
        path = args.config
    cfg = load_config(path, args.seed)
    out = args.out if args.out is not None else (Path(cfg.out) if cfg.out else None)
    if out is None:
        raise ConfigError("out: no output directory (set it in the config or pass --out)")
    return cfg, out


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s",
                        stream=sys.stderr)
    args = _parser().parse_args(argv)
    try:
        cfg, out = _resolve(args)
        if args.command == "train":
            cmd_train(cfg, out)
        elif args.command == "gen-data":
            cmd_gen_data(cfg, out)
        else:
            bundle = load_bundle(cfg, out)
            if args.command == "predict":
                pref = parse_preference(args.r, args.c, bundle.anchor.n_tasks)
                print(dump_json(cmd_predict(bundle, pref)))
            elif args.command == "sweep":
                if args.grid is not None and args.grid < 1:
                    raise ConfigError("--grid: must be positive")
                print(dump_json(cmd_sweep(cfg, bundle, out, args.grid).summary))
            else:
                print(dump_json(cmd_eval_hv(cfg, bundle)))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericError, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK
