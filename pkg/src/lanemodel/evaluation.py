"""Lateral-deviation metrics of estimated lane models against ground truth.

Deviations are vertical (``f(x) - y_truth`` at the truth point's ``x``) and
are sampled at ground-truth vertices inside each estimated line's range.
"""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .config import Config
from .io import fmt
from .pipeline import TrackState
from .simulator import (GroundTruth, ScenarioSpec, build_centerline, frame_arclengths, simulate,
                        to_vehicle)
from .types import Feature, LaneModel, OdometryDelta, eval_line

LABELS = ("ego", "adjacent", "other")
MODEL_KINDS = ("spline", "clothoid")


def model_config(config: Config, model_kind: str) -> Config:
    """Config for a line-function kind; ``clothoid`` is one cubic per line."""
    if model_kind not in MODEL_KINDS:
        raise ValueError(f"model kind must be one of {MODEL_KINDS}")
    if model_kind == "clothoid":
        return config.updated({"model.max_segment_len": math.inf,
                               "model.min_segment_len": math.inf})
    return config


@dataclass
class FrameMetrics:
    frame_id: int
    rmse: float
    max_error: float
    sample_count: int
    n_lines: int
    matched: int


@dataclass
class EvalResult:
    model_kind: str
    frames: list[FrameMetrics] = field(default_factory=list)
    # per-sample columns
    sample_frame: list[np.ndarray] = field(default_factory=list)
    sample_line: list[np.ndarray] = field(default_factory=list)
    sample_label: list[np.ndarray] = field(default_factory=list)
    sample_x: list[np.ndarray] = field(default_factory=list)
    sample_dev: list[np.ndarray] = field(default_factory=list)
    empty_frames: int = 0
    runtime: float = 0.0

    def samples(self):
        if not self.sample_x:
            z = np.zeros(0)
            return z.astype(int), z.astype(int), z.astype(int), z, z
        return (np.concatenate(self.sample_frame), np.concatenate(self.sample_line),
                np.concatenate(self.sample_label), np.concatenate(self.sample_x),
                np.concatenate(self.sample_dev))

    def frame_rmse(self) -> np.ndarray:
        return np.array([f.rmse for f in self.frames])

    def max_rmse(self) -> float:
        r = self.frame_rmse()
        r = r[np.isfinite(r)]
        return float(r.max()) if len(r) else math.nan

    def bins(self, width: float = 10.0):
        """Rows ``(bin_start, bin_end, label, rmse, count)`` per label that
        has samples, plus ``all``."""
        _, _, lab, x, dev = self.samples()
        return bin_rmse(x, dev, lab, width)


def bin_rmse(x: np.ndarray, dev: np.ndarray, label: np.ndarray, width: float):
    rows = []
    if len(x) == 0:
        return rows
    idx = np.floor(x / width).astype(int)
    for b in range(int(idx.min()), int(idx.max()) + 1):
        in_bin = idx == b
        for name, sel in [(LABELS[k], in_bin & (label == k)) for k in range(len(LABELS))] + \
                         [("all", in_bin)]:
            n = int(sel.sum())
            if n:
                rows.append((b * width, (b + 1) * width, name, math.sqrt(float(np.mean(dev[sel] ** 2))), n))
    return rows


def _truth_in_vehicle(truth_lines: Sequence[np.ndarray], pose):
    out = []
    for pts in truth_lines:
        vx, vy, _ = to_vehicle(pts[:, 0], pts[:, 1], pts[:, 2], pose)
        out.append((vx, vy))
    return out


def _offset_at_origin(vx: np.ndarray, vy: np.ndarray) -> float:
    near = np.abs(vx) < 50.0
    if not np.any(near):
        return math.nan
    xs, ys = vx[near], vy[near]
    order = np.argsort(xs, kind="stable")
    return float(np.interp(0.0, xs[order], ys[order]))


def lane_labels(offsets: Sequence[float]) -> list[int]:
    """Index into ``LABELS`` for each truth line from its offset at x=0:
    the nearest line on each side bounds the ego lane, the next one an
    adjacent lane."""
    labels = [2] * len(offsets)
    for side in (1, -1):
        ranked = sorted((abs(o), j) for j, o in enumerate(offsets)
                        if np.isfinite(o) and (o > 0 if side > 0 else o <= 0))
        for rank, (_, j) in enumerate(ranked):
            labels[j] = min(rank, 2)
    return labels


def match_lines(model: LaneModel, truth_offsets: Sequence[float], gate: float) -> dict[int, int]:
    """Greedy one-to-one match truth line -> model line by offset at x=0."""
    model_offsets = [float(eval_line(ln, 0.0)) for ln in model.lines]
    cands = sorted((abs(t - m), i, j) for i, t in enumerate(truth_offsets) if np.isfinite(t)
                   for j, m in enumerate(model_offsets) if abs(t - m) <= gate)
    used_t, used_m, out = set(), set(), {}
    for _, i, j in cands:
        if i not in used_t and j not in used_m:
            out[i] = j
            used_t.add(i)
            used_m.add(j)
    return out


def frame_deviations(model: LaneModel, truth_lines: Sequence[np.ndarray], pose, config: Config):
    """Yield ``(truth_index, label, x, deviation)`` for every matched line."""
    local = _truth_in_vehicle(truth_lines, pose)
    offsets = [_offset_at_origin(vx, vy) for vx, vy in local]
    labels = lane_labels(offsets)
    for i, j in sorted(match_lines(model, offsets, config.eval.match_gate).items()):
        vx, vy = local[i]
        line = model.lines[j]
        lo, hi = line.range
        sel = (vx >= max(lo, 0.0)) & (vx <= min(hi, config.eval.max_x))
        if not np.any(sel):
            continue
        x = vx[sel]
        yield i, labels[i], x, eval_line(line, x, 0) - vy[sel]


def run_eval(frames: Iterable[tuple[int, Sequence[Feature], OdometryDelta, tuple]],
             truth_lines: Sequence[np.ndarray], model_kind: str = "spline",
             config: Config | None = None, dt: float = 0.0) -> EvalResult:
    """Track the frame sequence and score every frame against ground truth.

    ``frames`` yields ``(frame_id, features, odometry, global_pose)``.
    """
    config = model_config(config or Config(), model_kind)
    state = TrackState(config=config)
    result = EvalResult(model_kind)
    t0 = time.perf_counter()
    for fid, feats, odo, pose in frames:
        model, _ = state.step(feats, odo, dt)
        devs = list(frame_deviations(model, truth_lines, pose, config))
        if not model.lines:
            result.empty_frames += 1
        if devs:
            d = np.concatenate([dv for *_, dv in devs])
            rmse, mx = math.sqrt(float(np.mean(d ** 2))), float(np.max(np.abs(d)))
        else:
            rmse, mx = math.nan, math.nan
        result.frames.append(FrameMetrics(fid, rmse, mx, sum(len(dv) for *_, dv in devs),
                                          len(model.lines), len(devs)))
        for i, lab, x, dv in devs:
            result.sample_frame.append(np.full(len(x), fid))
            result.sample_line.append(np.full(len(x), i))
            result.sample_label.append(np.full(len(x), lab))
            result.sample_x.append(x)
            result.sample_dev.append(dv)
    result.runtime = time.perf_counter() - t0
    return result


def scenario_frames(spec: ScenarioSpec, truth: GroundTruth):
    for fr in simulate(spec, truth):
        yield fr.frame_id, fr.features, fr.odometry, fr.pose


def run_scenario(spec: ScenarioSpec, model_kind: str = "spline",
                 config: Config | None = None) -> EvalResult:
    truth = build_centerline(spec)
    return run_eval(scenario_frames(spec, truth), truth.lines, model_kind, config, spec.frame_dt)


@dataclass
class Comparison:
    spline: EvalResult
    clothoid: EvalResult
    arclength: np.ndarray
    straight_view: np.ndarray

    @property
    def max_ratio(self) -> float:
        return self.clothoid.max_rmse() / self.spline.max_rmse()

    @property
    def straight_ratio(self) -> float:
        """Mean clothoid over mean spline RMSE on frames that only see
        straight road; NaN if there are none."""
        if not self.straight_view.any():
            return math.nan
        s = self.spline.frame_rmse()[self.straight_view]
        c = self.clothoid.frame_rmse()[self.straight_view]
        return float(np.nanmean(c) / np.nanmean(s))


def straight_view_mask(spec: ScenarioSpec, truth: GroundTruth, arclengths: np.ndarray) -> np.ndarray:
    """Frames whose whole feature horizon lies on zero-curvature road."""
    curved = truth.s[np.abs(truth.curvature) > 0]
    first_curve = curved.min() if len(curved) else math.inf
    return arclengths + spec.feature_horizon < first_curve


def compare_models(spec: ScenarioSpec, config: Config | None = None) -> Comparison:
    """Run spline and clothoid line functions over identical frames."""
    config = config or Config()
    truth = build_centerline(spec)
    frames = list(scenario_frames(spec, truth))
    spline = run_eval(frames, truth.lines, "spline", config, spec.frame_dt)
    clothoid = run_eval(frames, truth.lines, "clothoid", config, spec.frame_dt)
    s = frame_arclengths(spec)[:len(frames)]
    return Comparison(spline, clothoid, s, straight_view_mask(spec, truth, s))


# -- output tables -------------------------------------------------------------

def write_eval(result: EvalResult, outdir, bin_width: float = 10.0) -> None:
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "bins.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["bin_start", "bin_end", "lane_label", "rmse", "sample_count"])
        for a, b, lab, r, n in result.bins(bin_width):
            w.writerow([fmt(a), fmt(b), lab, fmt(r), n])
    with open(out / "frames.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["frame_id", "rmse", "max_error", "sample_count", "n_lines", "matched_lines"])
        for f in result.frames:
            w.writerow([f.frame_id, fmt(f.rmse), fmt(f.max_error), f.sample_count, f.n_lines, f.matched])
    fr, ln, lab, x, dev = result.samples()
    with open(out / "deviations.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["frame_id", "truth_line", "lane_label", "x", "deviation"])
        for row in zip(fr, ln, lab, x, dev):
            w.writerow([int(row[0]), int(row[1]), LABELS[int(row[2])], fmt(row[3]), fmt(row[4])])
    with open(out / "summary.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["model", "frames", "empty_frames", "max_frame_rmse"])
        w.writerow([result.model_kind, len(result.frames), result.empty_frames, fmt(result.max_rmse())])


def read_deviations(path):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    x = np.array([float(r["x"]) for r in rows])
    dev = np.array([float(r["deviation"]) for r in rows])
    lab = np.array([LABELS.index(r["lane_label"]) for r in rows], dtype=int)
    return x, dev, lab


def write_comparison(comp: Comparison, outdir) -> None:
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    write_eval(comp.spline, out / "spline")
    write_eval(comp.clothoid, out / "clothoid")
    with open(out / "comparison.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["frame_id", "arclength", "spline_rmse", "clothoid_rmse", "straight_view"])
        for fs, fc, s, st in zip(comp.spline.frames, comp.clothoid.frames, comp.arclength,
                                 comp.straight_view):
            w.writerow([fs.frame_id, fmt(s), fmt(fs.rmse), fmt(fc.rmse), int(st)])
    with open(out / "summary.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["metric", "value"])
        w.writerow(["spline_max_rmse", fmt(comp.spline.max_rmse())])
        w.writerow(["clothoid_max_rmse", fmt(comp.clothoid.max_rmse())])
        w.writerow(["max_ratio", fmt(comp.max_ratio)])
        w.writerow(["straight_ratio", fmt(comp.straight_ratio)])
