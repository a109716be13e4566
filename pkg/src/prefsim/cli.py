"""Command-line driver: one subcommand per pipeline stage plus ``run``."""

from __future__ import annotations

import argparse
import json
import logging
import sys

from .config import ConfigError, config_from_dict, load_config
from .pipeline import (STAGES, ConfigMismatchError, aggregate, run_filter, run_pipeline,
                       run_shaping, run_transfer)
from .plots import emit_plots

log = logging.getLogger("prefsim")

# subcommand -> pipeline stages it runs
STAGE_COMMANDS = {
    "gen-data": ["gen-data", "label-variant"],
    "train-encoder": ["train-method"],
    "train-bt": ["train-method"],
    "relabel": ["relabel"],
    "train-iql": ["train-policy"],
    "evaluate": ["evaluate"],
}
PROTOCOLS = {"filter": run_filter, "transfer": run_transfer, "train-ddpg": run_shaping}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML or JSON experiment config")
    common.add_argument("--preset", choices=("paper", "desk"), default=None,
                        help="size preset applied under the config (default: desk)")
    common.add_argument("--outdir", help="override the config's output directory")
    common.add_argument("--seed", type=int, action="append",
                        help="run only this seed (repeatable)")
    common.add_argument("--stage", choices=STAGES, help="with 'run': run only this stage")
    common.add_argument("-v", "--verbose", action="store_true")
    p = argparse.ArgumentParser(prog="prefsim", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("run", parents=[common], help="full pipeline for every seed, then report")
    for name in STAGE_COMMANDS:
        sub.add_parser(name, parents=[common], help=f"pipeline stage(s): {', '.join(STAGE_COMMANDS[name])}")
    for name in PROTOCOLS:
        sub.add_parser(name, parents=[common], help=f"{name} protocol")
    sub.add_parser("report", parents=[common], help="aggregate finished seeds")
    sub.add_parser("plot", parents=[common], help="render figures from outputs")
    return p


def _config(args):
    overrides = {"outdir": args.outdir} if args.outdir else {}
    if args.config:
        return load_config(args.config, args.preset, **overrides)
    return config_from_dict(overrides, args.preset)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _config(args)
    except (ConfigError, OSError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    seeds = args.seed or cfg.seeds
    try:
        return _dispatch(args, cfg, seeds)
    except ConfigMismatchError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


def _dispatch(args, cfg, seeds) -> int:
    cmd = args.command
    if cmd == "train-encoder" and cfg.method != "sara":
        print(f"train-encoder needs method 'sara', config has {cfg.method!r}", file=sys.stderr)
        return 2
    if cmd == "train-bt" and cfg.method not in ("bt", "bt-adt"):
        print(f"train-bt needs method 'bt' or 'bt-adt', config has {cfg.method!r}", file=sys.stderr)
        return 2
    if cmd in ("run", *STAGE_COMMANDS):
        stages = [args.stage] if cmd == "run" and args.stage else STAGE_COMMANDS.get(cmd, STAGES)
        res = run_pipeline(cfg, stages, seeds)
        for k, f in sorted(res.failures.items()):
            print(f"seed {k}: stage {f['stage']} failed: {f['error']}", file=sys.stderr)
        if res.report:
            print(json.dumps(res.report["rows"], sort_keys=True))
        return 0 if res.ok and sorted(res.completed) == sorted(seeds) else 1
    if cmd == "report":
        rep = aggregate(cfg, seeds)
        if rep is None:
            print("no finished seeds to report", file=sys.stderr)
            return 1
        print(json.dumps(rep["rows"], sort_keys=True))
        return 0 if not rep["meta"]["missing_seeds"] else 1
    if cmd in PROTOCOLS:
        print(json.dumps(PROTOCOLS[cmd](cfg, seeds), sort_keys=True, default=str))
        return 0
    if cmd == "plot":
        written, missing = emit_plots(cfg.outdir)
        for p in written:
            print(p)
        for m in missing:
            print(f"missing input: {m}", file=sys.stderr)
        return 0 if written else 1
    raise AssertionError(cmd)


if __name__ == "__main__":
    sys.exit(main())
