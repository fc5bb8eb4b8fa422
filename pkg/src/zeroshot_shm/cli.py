"""Command-line interface.

Exit codes: 0 success, 2 configuration error, 3 data error,
4 no checkpoint passes the score-cap selection rule.
"""

from __future__ import annotations

import argparse
import logging
import sys

from . import pipeline
from .config import ConfigError, load_config, parse_assignment
from .gan import SelectionError
from .signals import DataError
from .synth import SimulationError

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_SELECTION = 0, 2, 3, 4

_FLAG_KEYS = ("w", "seed", "max_iterations", "dataset", "out_dir", "workers")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="zeroshot-shm", description="Zero-shot transfer damage detection.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override any config key")
    common.add_argument("--w", type=int)
    common.add_argument("--seed", type=int)
    common.add_argument("--max-iterations", type=int)
    common.add_argument("--dataset", help="directory holding manifest.json")
    common.add_argument("--out", dest="out_dir", help="output directory")
    common.add_argument("--workers", type=int)
    common.add_argument("-v", "--verbose", action="store_true")

    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("synth", parents=[common], help="write the synthetic source/target fixture")
    p = sub.add_parser("train-source", parents=[common], help="train the source discriminator")
    p.add_argument("--resume", help="checkpoint to continue from")
    p = sub.add_parser("adapt", parents=[common], help="build the spectral mapping")
    p.add_argument("--checkpoint")
    p.add_argument("--target-healthy", help="target no-damage CSV (defaults to the configured one)")
    p = sub.add_parser("tune-threshold", parents=[common], help="fit the detection threshold")
    p.add_argument("--checkpoint")
    p.add_argument("--mapping")
    p = sub.add_parser("detect", parents=[common], help="score one target CSV")
    p.add_argument("csv")
    p.add_argument("--checkpoint")
    p.add_argument("--mapping")
    p.add_argument("--threshold")
    p.add_argument("--scores-out")
    p = sub.add_parser("evaluate", parents=[common], help="per-case AUC and P/R/F1 report")
    p.add_argument("--checkpoint")
    p.add_argument("--mapping")
    p.add_argument("--threshold")
    sub.add_parser("run-all", parents=[common], help="synth (if needed), train, adapt, tune, evaluate")
    return parser


def _config_from_args(args):
    overrides = dict(parse_assignment(s) for s in args.set)
    for key in _FLAG_KEYS:
        value = getattr(args, key, None)
        if value is not None:
            overrides[key] = value
    return load_config(args.config, overrides)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(levelname)s %(message)s")
    try:
        cfg = _config_from_args(args)
        cmd = args.command
        if cmd == "synth":
            result = pipeline.cmd_synth(cfg)
        elif cmd == "train-source":
            result = pipeline.cmd_train_source(cfg, resume=args.resume)
        elif cmd == "adapt":
            result = pipeline.cmd_adapt(cfg, args.checkpoint, args.target_healthy)
        elif cmd == "tune-threshold":
            result = pipeline.cmd_tune_threshold(cfg, args.checkpoint, args.mapping)
        elif cmd == "detect":
            result = pipeline.cmd_detect(cfg, args.csv, args.checkpoint, args.mapping, args.threshold, args.scores_out)
        elif cmd == "evaluate":
            result = pipeline.cmd_evaluate(cfg, args.checkpoint, args.mapping, args.threshold)
        else:
            result = pipeline.run_all(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, SimulationError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except SelectionError as exc:
        print(f"selection failed: {exc}", file=sys.stderr)
        return EXIT_SELECTION
    print(result)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
