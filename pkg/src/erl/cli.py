"""Command-line entry point: ``erl gen-dataset | train | eval | plot``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .checkpoint import CheckpointError
from .envs import ENV_NAMES, GenerationError
from .harness import (BACKENDS, SplitError, evaluate_checkpoint, gen_dataset, load_run_config,
                      plot_curves, train)
from .trainer import ConfigError
from .trainer.config import ALGOS, ABLATIONS


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="erl", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen-dataset", help="write disjoint train/eval instance files")
    gen.add_argument("--env", choices=ENV_NAMES, required=True)
    gen.add_argument("--out", default="data", help="output directory (default: data)")
    gen.add_argument("--train-count", type=int, default=10_000)
    gen.add_argument("--eval-count", type=int, default=100)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--size", type=int, default=None,
                     help="fix the grid side length instead of sampling it")

    tr = sub.add_parser("train", help="run ERL or RLVR training from a YAML config")
    tr.add_argument("--config", required=True)
    tr.add_argument("--env", choices=ENV_NAMES)
    tr.add_argument("--algo", choices=ALGOS)
    tr.add_argument("--ablate", choices=[a for a in ABLATIONS if a])
    tr.add_argument("--seed", type=int)
    tr.add_argument("--backend", choices=BACKENDS)
    tr.add_argument("--out", dest="out_dir", help="run directory (overrides out_dir)")

    ev = sub.add_parser("eval", help="deploy-form evaluation of a checkpoint")
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--dataset", required=True, help="an eval-split instance file")
    ev.add_argument("--samples", type=int, default=4, help="samples per prompt (default: 4)")
    ev.add_argument("--seed", type=int, default=0)
    ev.add_argument("--corpus", help="corpus file for qa (default: next to the training data)")
    ev.add_argument("--report", help="write the per-instance report as JSON here")

    pl = sub.add_parser("plot", help="smoothed reward curves from metrics CSVs")
    pl.add_argument("csv", nargs="+")
    pl.add_argument("--out", default="curves.png")
    pl.add_argument("--window", type=int, default=5)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "gen-dataset":
            paths = gen_dataset(args.env, args.out, args.train_count, args.eval_count,
                                args.seed, args.size)
            for name, path in paths.items():
                print(f"{name}: {path}")
        elif args.command == "train":
            overrides = {"env": args.env, "algo": args.algo, "ablation": args.ablate,
                         "seed": args.seed, "backend": args.backend, "out_dir": args.out_dir}
            run = load_run_config(args.config, overrides)
            ck = train(run)
            print(f"finished iteration {ck.iteration}; outputs in {run.out_dir}")
        elif args.command == "eval":
            report = evaluate_checkpoint(args.checkpoint, args.dataset, args.samples, args.seed,
                                         args.corpus)
            print(f"mean reward {report.mean_reward:.4f} over {len(report.rows)} episodes")
            if args.report:
                Path(args.report).write_text(json.dumps(
                    {"mean_reward": report.mean_reward, "per_instance": report.per_instance(),
                     "rows": report.rows}, indent=2))
        elif args.command == "plot":
            print(plot_curves(args.csv, args.out, args.window))
    except ConfigError as exc:
        print(exc, file=sys.stderr)
        return 2
    except (SplitError, CheckpointError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except GenerationError as exc:
        print(f"generation failed: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
