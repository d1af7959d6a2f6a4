"""Straight-line seeds from features close to the vehicle.

Near features are projected onto the lateral axis; separated clusters with
enough support each become a straight single-segment line.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .config import InitConfig
from .types import Feature, Line, sorted_lines, stack_features


@dataclass
class LateralCluster:
    mean_y: float
    mean_theta: float
    count: int
    member_indices: list[int] = field(default_factory=list)


def _circular_mean(angles: np.ndarray) -> float:
    return math.atan2(np.sin(angles).sum(), np.cos(angles).sum())


def cluster_lateral(features: Sequence[Feature], cfg: InitConfig | None = None) -> list[LateralCluster]:
    """Group near features (``0 <= x <= cfg.max_x``) by lateral offset.

    Sorted offsets are split wherever consecutive values are at least
    ``gap_threshold`` apart. Members farther than ``cluster_half_width``
    from their cluster mean are trimmed, and clusters below
    ``min_cluster_size`` are dropped. Result is ordered by ``mean_y``
    descending (leftmost first).
    """
    cfg = cfg or InitConfig()
    if cfg.max_x <= 0:
        raise ValueError("init.max_x must be positive")
    if not features:
        return []
    x, y, theta, _ = stack_features(features)
    near = np.flatnonzero((x >= 0.0) & (x <= cfg.max_x))
    if len(near) == 0:
        return []
    order = near[np.argsort(y[near], kind="stable")]
    breaks = np.flatnonzero(np.diff(y[order]) >= cfg.gap_threshold) + 1

    clusters = []
    for members in np.split(order, breaks):
        members = _trim(members, y, cfg.cluster_half_width)
        if len(members) < cfg.min_cluster_size:
            continue
        members = np.sort(members)
        clusters.append(LateralCluster(
            mean_y=float(y[members].mean()),
            mean_theta=_circular_mean(theta[members]),
            count=len(members),
            member_indices=[int(i) for i in members],
        ))
    clusters.sort(key=lambda c: -c.mean_y)
    return clusters


def _trim(members: np.ndarray, y: np.ndarray, half_width: float) -> np.ndarray:
    while len(members):
        mean = y[members].mean()
        dev = np.abs(y[members] - mean)
        if dev.max() <= half_width:
            break
        members = members[dev <= half_width] if np.any(dev <= half_width) else members[:0]
    return members


def seed_lines(clusters: Sequence[LateralCluster], first_id: int = 0,
               max_x: float = 20.0) -> list[Line]:
    """One straight line per cluster with offset ``mean_y`` and slope
    ``tan(mean_theta)``, covering ``[0, max_x]``."""
    lines = []
    for k, c in enumerate(clusters):
        coeffs = np.array([[c.mean_y, math.tan(c.mean_theta), 0.0, 0.0]])
        lines.append(Line(id=first_id + k, knots=np.array([0.0, max_x]), coeffs=coeffs,
                          range=(0.0, max_x)))
    return sorted_lines(lines)
