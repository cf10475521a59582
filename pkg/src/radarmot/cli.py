"""Command-line interface: simulate | train | track | evaluate | sweep.

Every command takes ``--config`` (YAML overlay on the packaged defaults),
``--seed``, and ``--out``; ``simulate`` also takes ``--preset`` and
``sweep`` takes ``--parallelism``. Success prints a one-line JSON summary
on stdout and exits 0; any failure prints machine-readable error JSON on
stderr and exits 1.
"""

from __future__ import annotations

import argparse
import json
import sys

from .config import build_run_config, load_config
from .pipeline import run_evaluate, run_simulate, run_track, run_train
from .sweep import run_sweep


def _common_flags(sub: argparse.ArgumentParser, preset: bool = False,
                  parallelism: bool = False) -> None:
    sub.add_argument("--config", default=None, help="YAML config overlaying the defaults")
    sub.add_argument("--seed", type=int, default=None, help="master seed override")
    sub.add_argument("--out", default=None, help="output directory override")
    if preset:
        sub.add_argument("--preset", default=None,
                         help="scenario preset name (overrides the config)")
    if parallelism:
        sub.add_argument("--parallelism", type=int, default=None,
                         help="sweep worker processes")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="radarmot",
        description="Radar multi-object tracking: simulate, train, track, evaluate.",
    )
    commands = parser.add_subparsers(dest="command", required=True)

    simulate = commands.add_parser("simulate", help="generate a synthetic scenario")
    _common_flags(simulate, preset=True)

    train = commands.add_parser("train", help="train the motion predictor")
    _common_flags(train)

    track = commands.add_parser("track", help="run the tracking pipeline")
    _common_flags(track, preset=True)

    evaluate = commands.add_parser("evaluate", help="score tracks against ground truth")
    _common_flags(evaluate)

    sweep = commands.add_parser("sweep", help="run the experiment grid")
    _common_flags(sweep, preset=True, parallelism=True)
    return parser


def _merged_config(args: argparse.Namespace) -> dict:
    overrides: dict = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.out is not None:
        overrides["out_dir"] = args.out
    if getattr(args, "preset", None) is not None:
        overrides["scenario"] = {"preset": args.preset, "path": None}
    return load_config(args.config, overrides)


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        merged = _merged_config(args)
        if args.command == "sweep":
            summary = run_sweep(merged, parallelism=args.parallelism)
        else:
            cfg = build_run_config(merged)
            stage = {
                "simulate": run_simulate,
                "train": run_train,
                "track": run_track,
                "evaluate": run_evaluate,
            }[args.command]
            summary = stage(cfg)
        print(json.dumps({"command": args.command, **summary}))
        return 0
    except Exception as exc:
        error = {"error": type(exc).__name__, "message": str(exc)}
        frame_index = getattr(exc, "frame_index", None)
        if frame_index is not None:
            error["frame_index"] = frame_index
        print(json.dumps(error), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
