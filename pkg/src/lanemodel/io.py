"""CSV formats for feature frames, odometry and ground truth.

Frames:   ``frame_id,x,y,theta,var_x,var_y,var_theta,type,color``
Odometry: ``frame_id,dx,dy,dpsi`` (pose change since the previous frame)
Truth:    ``kind,id,x,y,heading`` with ``kind`` either ``line`` (``id`` is the
          boundary index, leftmost first) or ``pose`` (``id`` is the frame id,
          global vehicle pose).

``type`` and ``color`` hold a label, optionally with its evidence mass as
``label:mass``; the rest of the mass is ignorance.
"""

from __future__ import annotations

import csv
from collections import defaultdict
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .types import COLORS, MARKING_TYPES, AttributeMass, Feature, OdometryDelta

FRAME_HEADER = ["frame_id", "x", "y", "theta", "var_x", "var_y", "var_theta", "type", "color"]
ODOMETRY_HEADER = ["frame_id", "dx", "dy", "dpsi"]
TRUTH_HEADER = ["kind", "id", "x", "y", "heading"]


class FormatError(ValueError):
    """Malformed input file."""


def fmt(value: float) -> str:
    """Shortest round-trip text for a float; stable across runs."""
    return repr(float(value))


def _mass_label(mass: np.ndarray, labels: Sequence[str]) -> str:
    k = int(np.argmax(mass[:-1])) if mass[:-1].max() > 0 else len(labels) - 1
    if k == len(labels) - 1:
        return "unknown"
    return f"{labels[k]}:{fmt(mass[k])}"


def _parse_mass(text: str, labels: Sequence[str]) -> dict:
    label, _, mass = text.strip().partition(":")
    if label not in labels:
        raise FormatError(f"unknown attribute label {label!r}")
    if label == "unknown":
        return {"unknown": 1.0}
    return {label: float(mass) if mass else 1.0}


def write_frames(path, frames: Iterable[tuple[int, Sequence[Feature]]]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(FRAME_HEADER)
        for fid, feats in frames:
            for f in feats:
                w.writerow([fid, fmt(f.x), fmt(f.y), fmt(f.theta), fmt(f.cov[0, 0]),
                            fmt(f.cov[1, 1]), fmt(f.cov[2, 2]),
                            _mass_label(f.attrs.marking_type, MARKING_TYPES),
                            _mass_label(f.attrs.color, COLORS)])


def read_frames(path) -> dict[int, list[Feature]]:
    frames: dict[int, list[Feature]] = defaultdict(list)
    attr_cache: dict[tuple[str, str], AttributeMass] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != FRAME_HEADER:
            raise FormatError(f"{path}: expected header {','.join(FRAME_HEADER)}")
        for row in reader:
            try:
                key = (row["type"], row["color"])
                if key not in attr_cache:
                    attr_cache[key] = AttributeMass.of(_parse_mass(row["type"], MARKING_TYPES),
                                                       _parse_mass(row["color"], COLORS))
                cov = np.diag([float(row["var_x"]), float(row["var_y"]), float(row["var_theta"])])
                frames[int(row["frame_id"])].append(
                    Feature(float(row["x"]), float(row["y"]), float(row["theta"]), cov,
                            attr_cache[key]))
            except (KeyError, ValueError) as exc:
                raise FormatError(f"{path}:{reader.line_num}: {exc}") from exc
    return dict(frames)


def write_odometry(path, rows: Iterable[tuple[int, OdometryDelta]]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ODOMETRY_HEADER)
        for fid, d in rows:
            w.writerow([fid, fmt(d.dx), fmt(d.dy), fmt(d.dpsi)])


def read_odometry(path) -> dict[int, OdometryDelta]:
    out = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ODOMETRY_HEADER:
            raise FormatError(f"{path}: expected header {','.join(ODOMETRY_HEADER)}")
        for row in reader:
            try:
                out[int(row["frame_id"])] = OdometryDelta(float(row["dx"]), float(row["dy"]),
                                                          float(row["dpsi"]))
            except (KeyError, ValueError) as exc:
                raise FormatError(f"{path}:{reader.line_num}: {exc}") from exc
    return out


def write_truth(path, lines: Sequence[np.ndarray], poses: dict[int, tuple]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRUTH_HEADER)
        for j, pts in enumerate(lines):
            for x, y, h in pts:
                w.writerow(["line", j, fmt(x), fmt(y), fmt(h)])
        for fid in sorted(poses):
            x, y, h = poses[fid]
            w.writerow(["pose", fid, fmt(x), fmt(y), fmt(h)])


def read_truth(path) -> tuple[list[np.ndarray], dict[int, tuple]]:
    lines: dict[int, list] = defaultdict(list)
    poses = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != TRUTH_HEADER:
            raise FormatError(f"{path}: expected header {','.join(TRUTH_HEADER)}")
        for row in reader:
            try:
                vals = (float(row["x"]), float(row["y"]), float(row["heading"]))
                if row["kind"] == "line":
                    lines[int(row["id"])].append(vals)
                elif row["kind"] == "pose":
                    poses[int(row["id"])] = vals
                else:
                    raise ValueError(f"unknown kind {row['kind']!r}")
            except (KeyError, ValueError) as exc:
                raise FormatError(f"{path}:{reader.line_num}: {exc}") from exc
    if not lines:
        raise FormatError(f"{path}: no ground-truth lines")
    return [np.array(lines[j]) for j in sorted(lines)], poses
