"""Command-line harness: simulate scenarios, evaluate recordings, compare
line functions.

    lanemodel simulate scenarios/double_bend.ini --out run/
    lanemodel eval run/frames.csv run/odometry.csv run/truth.csv --model spline --out ev/
    lanemodel compare scenarios/double_bend.ini --out cmp/

Exit status is 0 on success and 2 on unreadable or inconsistent input.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import Config, ConfigError, load_config
from .evaluation import MODEL_KINDS, compare_models, run_eval, write_comparison, write_eval
from .io import (FormatError, read_frames, read_odometry, read_truth, write_frames,
                 write_odometry, write_truth)
from .simulator import build_centerline, load_scenario, simulate
from .types import OdometryDelta

logger = logging.getLogger(__name__)

EXIT_INPUT = 2


class InputError(Exception):
    """Input files are missing or do not fit together."""


def _config(path) -> Config:
    return load_config(path) if path else Config()


def cmd_simulate(args) -> None:
    spec = load_scenario(args.scenario, seed=args.seed)
    truth = build_centerline(spec)
    frames, odo, poses = [], [], {}
    for fr in simulate(spec, truth):
        frames.append((fr.frame_id, fr.features))
        odo.append((fr.frame_id, fr.odometry))
        poses[fr.frame_id] = fr.pose
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_frames(out / "frames.csv", frames)
    write_odometry(out / "odometry.csv", odo)
    write_truth(out / "truth.csv", truth.lines, poses)
    logger.info("wrote %d frames to %s", len(frames), out)


def _recorded_frames(frames_path, odometry_path, truth_path):
    if not Path(truth_path).is_file():
        raise InputError(f"ground truth not found: {truth_path}")
    lines, poses = read_truth(truth_path)
    feats = read_frames(frames_path)
    odo = read_odometry(odometry_path)
    # a frame may carry no features; odometry and poses define the sequence
    ids = sorted(set(feats) | set(odo))
    missing = [i for i in ids if i not in poses]
    if missing:
        raise InputError(f"{truth_path}: no vehicle pose for frames {missing[:5]}")
    seq = [(i, feats.get(i, []), odo.get(i, OdometryDelta()), poses[i]) for i in ids]
    return seq, lines


def cmd_eval(args) -> None:
    config = _config(args.config)
    seq, lines = _recorded_frames(args.frames, args.odometry, args.truth)
    result = run_eval(seq, lines, args.model, config, args.dt)
    write_eval(result, args.out, config.eval.bin_width)
    print(f"{args.model}: {len(result.frames)} frames, {result.empty_frames} empty, "
          f"max frame RMSE {result.max_rmse():.4f} m")


def cmd_compare(args) -> None:
    spec = load_scenario(args.scenario, seed=args.seed)
    comp = compare_models(spec, _config(args.config))
    write_comparison(comp, args.out)
    print(f"max frame RMSE spline {comp.spline.max_rmse():.4f} m, "
          f"clothoid {comp.clothoid.max_rmse():.4f} m, ratio {comp.max_ratio:.2f}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lanemodel", description=__doc__.split("\n\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="write frames, odometry and truth for a scenario")
    p.add_argument("scenario")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None, help="override the scenario's rng_seed")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("eval", help="track recorded frames and score them against truth")
    p.add_argument("frames")
    p.add_argument("odometry")
    p.add_argument("truth")
    p.add_argument("--model", choices=MODEL_KINDS, default="spline")
    p.add_argument("--config", default=None)
    p.add_argument("--dt", type=float, default=0.04, help="frame period in seconds")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("compare", help="run spline and clothoid modes on one scenario")
    p.add_argument("scenario")
    p.add_argument("--config", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_compare)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except (ConfigError, FormatError, InputError, FileNotFoundError) as exc:
        print(f"lanemodel {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    return 0


if __name__ == "__main__":
    sys.exit(main())
