"""Domain types: lane features, polynomial segments, lines and lane models.

Polynomial coefficients are stored constant-first, ``(c0, c1, c2, c3)`` for
``f(x) = c0 + c1*x + c2*x**2 + c3*x**3`` in the vehicle frame (x forward,
y to the left).
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

MARKING_TYPES = ("solid", "dashed", "block", "unknown")
COLORS = ("white", "yellow", "unknown")

_MASS_TOL = 1e-9


def _mass_vector(masses, labels: Sequence[str]) -> np.ndarray:
    if isinstance(masses, dict):
        vec = np.zeros(len(labels))
        for key, value in masses.items():
            if key not in labels:
                raise ValueError(f"unknown focal element {key!r}; expected one of {labels}")
            vec[labels.index(key)] = value
        if "unknown" not in masses:
            vec[-1] = 1.0 - vec[:-1].sum()
    else:
        vec = np.array(masses, dtype=float)
        if vec.shape != (len(labels),):
            raise ValueError(f"mass vector must have length {len(labels)}")
    if np.any(vec < -_MASS_TOL) or np.any(vec > 1 + _MASS_TOL):
        raise ValueError(f"masses must lie in [0, 1], got {vec}")
    if abs(vec.sum() - 1.0) > _MASS_TOL:
        raise ValueError(f"masses must sum to 1, got {vec.sum()!r}")
    return np.clip(vec, 0.0, 1.0)


@dataclass(frozen=True, eq=False)
class AttributeMass:
    """Evidence masses over marking type and color.

    The last entry of each vector is the mass on the whole frame
    (``unknown``, i.e. ignorance).
    """

    marking_type: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 0.0, 1.0]))
    color: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 1.0]))

    def __post_init__(self):
        object.__setattr__(self, "marking_type", _mass_vector(self.marking_type, MARKING_TYPES))
        object.__setattr__(self, "color", _mass_vector(self.color, COLORS))

    @classmethod
    def of(cls, marking_type: Optional[dict] = None, color: Optional[dict] = None) -> "AttributeMass":
        """Build from partial dicts; unassigned mass goes to ``unknown``."""
        return cls(marking_type=marking_type or {"unknown": 1.0}, color=color or {"unknown": 1.0})

    def __eq__(self, other):
        return (isinstance(other, AttributeMass)
                and np.array_equal(self.marking_type, other.marking_type)
                and np.array_equal(self.color, other.color))


UNKNOWN_ATTRS = AttributeMass()


@dataclass(frozen=True, eq=False)
class Feature:
    """One lane-marking observation in the vehicle frame.

    ``cov`` is the 3x3 covariance over ``(x, y, theta)``; ``theta`` is the
    heading angle in radians and must satisfy ``|theta| < pi/2``.
    """

    x: float
    y: float
    theta: float
    cov: np.ndarray
    attrs: AttributeMass = UNKNOWN_ATTRS

    def __post_init__(self):
        cov = np.asarray(self.cov, dtype=float)
        if cov.shape != (3, 3):
            raise ValueError("feature covariance must be 3x3")
        if not np.allclose(cov, cov.T, rtol=0, atol=1e-12):
            raise ValueError("feature covariance must be symmetric")
        try:
            np.linalg.cholesky(cov)
        except np.linalg.LinAlgError:
            raise ValueError("feature covariance must be positive definite") from None
        if not all(map(math.isfinite, (self.x, self.y, self.theta))):
            raise ValueError("feature position and heading must be finite")
        if abs(self.theta) >= math.pi / 2:
            raise ValueError(f"feature heading {self.theta} outside (-pi/2, pi/2)")
        object.__setattr__(self, "cov", cov)


def stack_features(features: Sequence[Feature]):
    """Return ``(x, y, theta, cov)`` arrays for a feature list."""
    n = len(features)
    if n == 0:
        return np.zeros(0), np.zeros(0), np.zeros(0), np.zeros((0, 3, 3))
    x = np.fromiter((f.x for f in features), float, n)
    y = np.fromiter((f.y for f in features), float, n)
    theta = np.fromiter((f.theta for f in features), float, n)
    cov = np.stack([f.cov for f in features])
    return x, y, theta, cov


@dataclass(frozen=True)
class OdometryDelta:
    """Vehicle pose change between consecutive frames, expressed in the
    previous vehicle frame."""

    dx: float = 0.0
    dy: float = 0.0
    dpsi: float = 0.0

    def __post_init__(self):
        if not all(map(math.isfinite, (self.dx, self.dy, self.dpsi))):
            raise ValueError("odometry must be finite")
        if abs(self.dpsi) >= math.pi / 4:
            raise ValueError(f"per-frame rotation {self.dpsi} exceeds pi/4")


# -- polynomials ---------------------------------------------------------

def poly_basis(x, derivative_order: int = 0) -> np.ndarray:
    """Row(s) ``d^k/dx^k [1, x, x^2, x^3]``; shape ``(..., 4)``."""
    x = np.asarray(x, dtype=float)
    one, zero = np.ones_like(x), np.zeros_like(x)
    if derivative_order == 0:
        cols = (one, x, x * x, x * x * x)
    elif derivative_order == 1:
        cols = (zero, one, 2 * x, 3 * x * x)
    elif derivative_order == 2:
        cols = (zero, zero, 2 * one, 6 * x)
    else:
        raise ValueError("derivative_order must be 0, 1 or 2")
    return np.stack(cols, axis=-1)


def poly_eval(coeffs, x, derivative_order: int = 0):
    c0, c1, c2, c3 = np.moveaxis(np.asarray(coeffs, dtype=float), -1, 0)
    if derivative_order == 0:
        return c0 + x * (c1 + x * (c2 + x * c3))
    if derivative_order == 1:
        return c1 + x * (2 * c2 + 3 * x * c3)
    if derivative_order == 2:
        return 2 * c2 + 6 * x * c3
    raise ValueError("derivative_order must be 0, 1 or 2")


@dataclass(frozen=True)
class Segment:
    coeffs: tuple
    x_start: float
    x_end: float

    def __post_init__(self):
        if not self.x_start < self.x_end:
            raise ValueError("segment must have x_start < x_end")
        object.__setattr__(self, "coeffs", tuple(float(c) for c in self.coeffs))


def eval_segment(seg: Segment, x, derivative_order: int = 0):
    """Value, slope or second derivative of ``seg`` at ``x``.

    Extrapolates outside ``[x_start, x_end)``; callers gate range.
    """
    return poly_eval(seg.coeffs, x, derivative_order)


# -- lines and models ----------------------------------------------------

@dataclass
class ControlPointPrior:
    """Predicted control points of the previous estimate, carried into the
    next fit as time-filter pseudo-measurements.

    ``points`` rows are ``(x, y, theta)`` in the current frame.
    ``eval_jac[k]`` is the 2 x dim Jacobian of (value, slope) at control point
    ``k`` with respect to the previous reduced parameters, whose information
    matrix is ``info``; ``transform_jac[k]`` maps (value, slope) errors from
    the previous frame into the current one.
    """

    points: np.ndarray
    eval_jac: np.ndarray
    transform_jac: np.ndarray
    info: np.ndarray


@dataclass
class Line:
    """One lane boundary modeled as a piecewise cubic.

    ``knots`` holds the M+1 control-point positions and ``coeffs`` the
    (M, 4) per-segment coefficients. ``info`` is the posterior information
    matrix of the reduced spline parameters from the last fit (``None`` when
    the coefficients did not come from a fit over ``knots``).
    """

    id: int
    knots: np.ndarray
    coeffs: np.ndarray
    range: tuple = (0.0, 0.0)
    type_mass: np.ndarray = field(default_factory=lambda: UNKNOWN_ATTRS.marking_type.copy())
    color_mass: np.ndarray = field(default_factory=lambda: UNKNOWN_ATTRS.color.copy())
    info: Optional[np.ndarray] = None
    prior: Optional[ControlPointPrior] = None
    missed_frames: int = 0
    conflict: bool = False

    def __post_init__(self):
        self.knots = np.asarray(self.knots, dtype=float)
        self.coeffs = np.asarray(self.coeffs, dtype=float).reshape(-1, 4)
        if len(self.knots) != len(self.coeffs) + 1:
            raise ValueError("a line with M segments needs M+1 knots")
        if np.any(np.diff(self.knots) <= 0):
            raise ValueError("knots must be strictly increasing")
        self.range = (float(self.range[0]), float(self.range[1]))

    @property
    def n_segments(self) -> int:
        return len(self.coeffs)

    @property
    def segments(self) -> list[Segment]:
        return [Segment(tuple(c), a, b)
                for c, a, b in zip(self.coeffs, self.knots[:-1], self.knots[1:])]

    @property
    def marking_type(self) -> str:
        return MARKING_TYPES[int(np.argmax(self.type_mass))]

    @property
    def marking_confidence(self) -> float:
        return float(np.max(self.type_mass))

    @property
    def color(self) -> str:
        return COLORS[int(np.argmax(self.color_mass))]

    @property
    def color_confidence(self) -> float:
        return float(np.max(self.color_mass))

    def segment_index(self, x):
        """Segment holding ``x``; values outside the knot span map to the
        first/last segment."""
        idx = np.searchsorted(self.knots, x, side="right") - 1
        return np.clip(idx, 0, self.n_segments - 1)

    def __call__(self, x, derivative_order: int = 0):
        return eval_line(self, x, derivative_order)

    def copy(self, **changes) -> "Line":
        new = dataclasses.replace(self, **changes)
        for name in ("knots", "coeffs", "type_mass", "color_mass"):
            if name not in changes:
                setattr(new, name, getattr(self, name).copy())
        return new


def eval_line(line: Line, x, derivative_order: int = 0):
    """Evaluate a line, extrapolating its first/last segment beyond the knots."""
    idx = line.segment_index(x)
    return poly_eval(line.coeffs[idx], x, derivative_order)


def make_line(line_id: int, coeffs, knots, **kwargs) -> Line:
    return Line(id=line_id, knots=np.asarray(knots, float), coeffs=np.asarray(coeffs, float), **kwargs)


@dataclass
class LaneModel:
    """All lines at one timestamp, leftmost (largest offset at x=0) first."""

    lines: list[Line] = field(default_factory=list)
    parallel_groups: list[list[int]] = field(default_factory=list)
    timestamp: float = 0.0

    def __post_init__(self):
        if not self.parallel_groups:
            self.parallel_groups = [[i] for i in range(len(self.lines))]

    @property
    def n_lines(self) -> int:
        return len(self.lines)

    def line_ids(self) -> list[int]:
        return [ln.id for ln in self.lines]

    def copy(self) -> "LaneModel":
        return LaneModel([ln.copy() for ln in self.lines],
                         [list(g) for g in self.parallel_groups], self.timestamp)

    def check_groups(self) -> None:
        flat = sorted(i for g in self.parallel_groups for i in g)
        if flat != list(range(len(self.lines))):
            raise ValueError(f"parallel groups {self.parallel_groups} do not partition "
                             f"{len(self.lines)} lines")
        for group in self.parallel_groups:
            ref = self.lines[group[0]].knots
            for i in group[1:]:
                own = self.lines[i].knots
                if not np.array_equal(own, ref[:len(own)]) and not np.array_equal(ref, own[:len(ref)]):
                    raise ValueError(f"lines in group {group} do not share knots")


def sorted_lines(lines: Iterable[Line]) -> list[Line]:
    """Leftmost first: descending offset at x=0, ties by creation order."""
    return sorted(lines, key=lambda ln: (-float(eval_line(ln, 0.0)), ln.id))


def with_lines(model: LaneModel, lines: Iterable[Line], keep_groups: bool = False) -> LaneModel:
    lines = list(lines)
    groups = [list(g) for g in model.parallel_groups] if keep_groups else []
    return LaneModel(lines, groups, model.timestamp)
