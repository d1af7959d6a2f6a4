"""Move the previous lane model into the current vehicle frame.

Each segment is re-expressed by transforming its two limiting control points
(position and heading) and fitting the cubic through them exactly. The result
is continuous in value and slope but generally not in curvature.
"""

from __future__ import annotations

import math

import numpy as np

from .config import PredictConfig
from .fitting import _eval_rows, expansion_matrices
from .types import ControlPointPrior, LaneModel, Line, OdometryDelta, eval_line, sorted_lines


def transform_point(x, y, theta, delta: OdometryDelta):
    """Express a point given in the previous vehicle frame in the current one."""
    c, s = math.cos(delta.dpsi), math.sin(delta.dpsi)
    tx, ty = np.subtract(x, delta.dx), np.subtract(y, delta.dy)
    return c * tx + s * ty, -s * tx + c * ty, np.subtract(theta, delta.dpsi)


def hermite_cubic(x0, y0, k0, x1, y1, k1) -> np.ndarray:
    """Cubic ``(c0, c1, c2, c3)`` through ``(x0, y0)`` and ``(x1, y1)`` with
    slopes ``k0`` and ``k1``."""
    h = x1 - x0
    # local form in t = x - x0
    a0, a1 = y0, k0
    a2 = (3 * (y1 - y0) / h - 2 * k0 - k1) / h
    a3 = (k0 + k1 - 2 * (y1 - y0) / h) / (h * h)
    # shift to global x
    return np.array([
        a0 - a1 * x0 + a2 * x0 ** 2 - a3 * x0 ** 3,
        a1 - 2 * a2 * x0 + 3 * a3 * x0 ** 2,
        a2 - 3 * a3 * x0,
        a3,
    ])


def _transform_jac(slope_old: np.ndarray, slope_new: np.ndarray, dpsi: float) -> np.ndarray:
    """First-order map of (value, slope) errors into the new frame."""
    out = np.zeros((len(slope_old), 2, 2))
    out[:, 0, 0] = math.cos(dpsi) - slope_new * math.sin(dpsi)
    out[:, 1, 1] = (1 + slope_new ** 2) / (1 + slope_old ** 2)
    return out


def predict_line(line: Line, delta: OdometryDelta, cfg: PredictConfig) -> Line | None:
    knots = line.knots
    y = eval_line(line, knots, 0)
    slope = eval_line(line, knots, 1)
    heading = np.arctan(slope)
    nx, ny, nth = transform_point(knots, y, heading, delta)

    keep = []
    for m in range(line.n_segments):
        if nx[m + 1] <= cfg.cull_behind:
            continue
        if nx[m + 1] - nx[m] < cfg.min_segment_span:
            if keep:
                break
            continue
        if keep and keep[-1] != m - 1:
            break
        keep.append(m)
    if not keep:
        return None

    nslope = np.tan(nth)
    coeffs = np.array([hermite_cubic(nx[m], ny[m], nslope[m], nx[m + 1], ny[m + 1], nslope[m + 1])
                       for m in keep])
    new_knots = nx[keep[0]:keep[-1] + 2]

    lo, hi = line.range
    ry = eval_line(line, np.array([lo, hi]), 0)
    rs = eval_line(line, np.array([lo, hi]), 1)
    rx, _, _ = transform_point(np.array([lo, hi]), ry, np.arctan(rs), delta)

    prior = None
    if line.info is not None:
        E = expansion_matrices(knots)
        J0, J1, _ = _eval_rows(knots, E, knots)
        eval_jac = np.stack([J0, J1], axis=1)
        pts = np.stack([nx, ny, nth], axis=1)
        sel = nx > cfg.cull_behind
        prior = ControlPointPrior(points=pts[sel], eval_jac=eval_jac[sel],
                                  transform_jac=_transform_jac(slope, nslope, delta.dpsi)[sel],
                                  info=line.info.copy())

    return line.copy(knots=new_knots, coeffs=coeffs, range=(float(rx[0]), float(rx[1])),
                     info=None, prior=prior)


def predict_model(prev: LaneModel, delta: OdometryDelta, cfg: PredictConfig | None = None,
                  dt: float = 0.0) -> LaneModel:
    """Predicted model in the current frame; lines whose segments all fall
    behind the vehicle are dropped. Carries each line's control-point prior
    for the time filter."""
    cfg = cfg or PredictConfig()
    lines = []
    for line in prev.lines:
        moved = predict_line(line, delta, cfg)
        if moved is not None:
            lines.append(moved)
    lines = sorted_lines(lines)
    return LaneModel(lines, [], prev.timestamp + dt)
