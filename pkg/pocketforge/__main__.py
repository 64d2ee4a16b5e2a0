# Copyright (C) 2024 The pocketforge authors.
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
# http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or
# implied.
# See the License for the specific language governing permissions and
# limitations under the License.
#
from typing import List, Optional
import argparse
import logging
import sys

from . import __version__, pipelines
from .config import (
    CACHE_PATH,
    DEFAULT_SIGMA,
    DEFAULT_THREADS,
    EVAL_K,
    EVAL_POINTS,
    LOG_LEVEL,
    SIGMA_PRESETS,
)
from .dataset import SPLITS
from .logger import basic_config

GRADCHECK_TOLERANCE = 1e-4


def _sigma(args) -> float:
    if args.sigma is not None:
        return args.sigma
    if args.sigma_preset is not None:
        return SIGMA_PRESETS[args.sigma_preset]
    return DEFAULT_SIGMA


def _add_sigma(parser: argparse.ArgumentParser):
    parser.add_argument("--sigma", type=float, default=None)
    parser.add_argument(
        "--sigma-preset", choices=sorted(SIGMA_PRESETS), default=None
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pocketforge",
        description="Generative point-cloud completion with a hypernetwork.",
    )
    parser.add_argument(
        "--version", action="version", version=f"%(prog)s {__version__}"
    )
    # None defers to the config file, then to 0 and POCKETFORGE_THREADS.
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--threads", type=int, default=None)
    parser.add_argument("--log-file", default=None)
    parser.add_argument("--log-level", default=LOG_LEVEL)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="build a synthetic corpus")
    p.add_argument("--config", default=None)
    p.add_argument("--out", required=True)

    p = sub.add_parser("train", help="train a model on a corpus")
    p.add_argument("--config", default=None)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--variant", choices=("full", "rec"), default=None)
    p.add_argument("--epochs", type=int, default=None)

    p = sub.add_parser("complete", help="sample completions of a part")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--k", type=int, default=EVAL_K)
    _add_sigma(p)
    p.add_argument("--n-points", type=int, default=EVAL_POINTS)
    p.add_argument("--rotate", type=float, default=0.0)
    p.add_argument("--fresh-noise", action="store_true")
    p.add_argument("--ply", action="store_true")

    p = sub.add_parser("adapt", help="fit a completion to a floor")
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--input", default=None)
    p.add_argument("--floor", default=None)
    p.add_argument("--config", default=None)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--restarts", type=int, default=None)
    p.add_argument("--sigma", type=float, default=None)
    p.add_argument("--n-points", type=int, default=None)
    p.add_argument("--consistency-weight", type=float, default=None)
    p.add_argument("--floor-weight", type=float, default=None)
    p.add_argument("--ply", action="store_true")

    p = sub.add_parser("eval-gen", help="generative metrics on a split")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--k", type=int, default=EVAL_K)
    _add_sigma(p)
    p.add_argument("--n-points", type=int, default=EVAL_POINTS)
    p.add_argument("--split", choices=SPLITS, default="test")
    p.add_argument("--cache", default=CACHE_PATH)

    p = sub.add_parser("eval-rec", help="mean reconstruction Chamfer")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", choices=SPLITS, default="val")
    p.add_argument("--n-points", type=int, default=EVAL_POINTS)
    p.add_argument("--out", default=None)

    p = sub.add_parser("gradcheck", help="verify gradients numerically")
    p.add_argument("--scale", choices=("tiny", "full"), default="tiny")
    p.add_argument("--max-entries", type=int, default=None)
    p.add_argument("--inject-fault", action="store_true")

    p = sub.add_parser("dist", help="distance between two cloud files")
    p.add_argument("a")
    p.add_argument("b")
    p.add_argument(
        "--metric", choices=("cd", "cd-brute", "emd", "uhd"), default="cd"
    )
    p.add_argument("--reduction", choices=("sum", "mean"), default="sum")

    p = sub.add_parser("stitch", help="combine parts of two objects")
    p.add_argument("--model", required=True)
    p.add_argument("--existing", required=True)
    p.add_argument("--missing", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--n-points", type=int, default=EVAL_POINTS)
    p.add_argument("--ply", action="store_true")

    p = sub.add_parser("export-reps", help="latent and weight vectors")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--split", choices=SPLITS, default="test")
    p.add_argument("--views", type=int, default=2)
    p.add_argument("--bins", type=int, default=30)
    return parser


def dispatch(args) -> int:
    seed = 0 if args.seed is None else args.seed
    threads = DEFAULT_THREADS if args.threads is None else args.threads
    if args.command == "gen-data":
        pipelines.run_gen_data(
            args.config, args.out, seed=args.seed, threads=threads
        )
    elif args.command == "train":
        pipelines.run_train(
            args.config,
            args.data,
            args.out,
            variant=args.variant,
            epochs=args.epochs,
            seed=args.seed,
            threads=args.threads,
        )
    elif args.command == "complete":
        pipelines.run_complete(
            args.model,
            args.input,
            args.out,
            k=args.k,
            sigma=_sigma(args),
            n_points=args.n_points,
            seed=seed,
            rotate=args.rotate,
            fresh_noise=args.fresh_noise,
            ply=args.ply,
            threads=threads,
        )
    elif args.command == "adapt":
        pipelines.run_adapt(
            args.model,
            args.out,
            input_path=args.input,
            floor_path=args.floor,
            config_path=args.config,
            seed=seed,
            ply=args.ply,
            threads=threads,
            steps=args.steps,
            lr=args.lr,
            restarts=args.restarts,
            sigma=args.sigma,
            n_points=args.n_points,
            consistency_weight=args.consistency_weight,
            constraint_weight=args.floor_weight,
        )
    elif args.command == "eval-gen":
        pipelines.run_eval_gen(
            args.model,
            args.data,
            args.out,
            k=args.k,
            sigma=_sigma(args),
            n_points=args.n_points,
            split=args.split,
            seed=seed,
            cache_path=args.cache,
            threads=threads,
        )
    elif args.command == "eval-rec":
        pipelines.run_eval_rec(
            args.model,
            args.data,
            split=args.split,
            n_points=args.n_points,
            seed=seed,
            out=args.out,
            threads=threads,
        )
    elif args.command == "gradcheck":
        report = pipelines.run_gradcheck(
            args.scale,
            seed=seed,
            inject_fault=args.inject_fault,
            max_entries=args.max_entries,
        )
        if not report.passed(GRADCHECK_TOLERANCE):
            logging.error(
                "Gradient check failed: %s has relative error %.3e",
                report.worst_param,
                report.max_rel_error,
            )
            return 1
    elif args.command == "dist":
        pipelines.run_dist(args.a, args.b, args.metric, args.reduction)
    elif args.command == "stitch":
        pipelines.run_stitch(
            args.model,
            args.existing,
            args.missing,
            args.out,
            n_points=args.n_points,
            seed=seed,
            ply=args.ply,
        )
    elif args.command == "export-reps":
        pipelines.run_export_reps(
            args.model,
            args.data,
            args.out,
            split=args.split,
            views=args.views,
            bins=args.bins,
            seed=seed,
            threads=threads,
        )
    return 0


def main(argv: Optional[List[str]] = None) -> int:
    """
    Parse arguments, configure logging and run one subcommand.

    Returns 0 on success and 1 on a runtime failure; usage errors exit
    with status 2 from argparse.
    """
    args = build_parser().parse_args(argv)
    if args.threads is not None and args.threads < 1:
        build_parser().error("--threads must be at least 1")
    basic_config(filename=args.log_file, level=args.log_level)
    try:
        return dispatch(args)
    except (ValueError, OSError, RuntimeError) as exc:
        logging.error("%s: %s", args.command, exc)
        return 1
    except KeyboardInterrupt:
        logging.info("Keyboard interrupt detected. Exiting...")
        return 1


if __name__ == "__main__":
    sys.exit(main())
