"""Synthetic roads built from straight and clothoid pieces, with noisy
lane-marking features and exact odometry sampled along the drive."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .config import ConfigError, read_sections
from .types import AttributeMass, Feature, OdometryDelta

INTEGRATION_STEP = 0.1
TRUTH_SPACING = 0.5
MIN_VAR_Y = 1e-6
MIN_VAR_THETA = 1e-8


@dataclass(frozen=True)
class RoadSegment:
    """One piece of road: ``straight``, ``arc`` (constant curvature) or
    ``clothoid`` (curvature linear in arc length)."""

    kind: str
    length: float
    curvature_start: float = 0.0
    curvature_end: float = 0.0

    def __post_init__(self):
        if self.kind not in ("straight", "arc", "clothoid"):
            raise ValueError(f"unknown segment kind {self.kind!r}")
        if not self.length > 0:
            raise ValueError("segment length must be positive")
        if self.kind == "straight" and (self.curvature_start or self.curvature_end):
            raise ValueError("straight segments have zero curvature")
        if self.kind == "arc" and self.curvature_start != self.curvature_end:
            raise ValueError("arc segments have constant curvature")


@dataclass
class ScenarioSpec:
    """Road layout, marking layout and sensor model of a simulated drive.

    ``markings`` and ``colors`` list the boundary lines leftmost first;
    ``ego_lane`` counts lanes from the right, starting at 0.
    """

    segments: list[RoadSegment]
    lane_count: int = 1
    lane_width: float = 3.5
    ego_lane: int = 0
    markings: list[str] = field(default_factory=list)
    colors: list[str] = field(default_factory=list)
    attr_confidence: float = 0.7
    feature_spacing: float = 2.0
    noise_y: float = 0.05
    noise_theta: float = 0.005
    feature_horizon: float = 100.0
    frame_step: float = 1.0
    frame_dt: float = 0.04
    stop_before_end: float = 20.0
    odometry_noise_xy: float = 0.0
    odometry_noise_psi: float = 0.0
    rng_seed: int = 0

    def __post_init__(self):
        if not self.segments:
            raise ValueError("scenario needs at least one road segment")
        if self.lane_count < 1 or not 0 <= self.ego_lane < self.lane_count:
            raise ValueError("need lane_count >= 1 and 0 <= ego_lane < lane_count")
        for name in ("lane_width", "feature_spacing", "feature_horizon", "frame_step"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        n = self.lane_count + 1
        if not self.markings:
            self.markings = ["solid"] + ["dashed"] * (n - 2) + ["solid"]
        if not self.colors:
            self.colors = ["white"] * n
        if len(self.markings) != n or len(self.colors) != n:
            raise ValueError(f"{self.lane_count} lanes need {n} markings and colors")

    @property
    def length(self) -> float:
        return sum(s.length for s in self.segments)

    def offsets(self) -> np.ndarray:
        """Lateral offset of each boundary from the driven centerline,
        leftmost first."""
        right_index = np.arange(self.lane_count, -1, -1)
        return (right_index - self.ego_lane - 0.5) * self.lane_width


@dataclass
class GroundTruth:
    """Centerline at the integration step plus boundary polylines.

    ``lines[j]`` rows are global ``(x, y, heading)`` samples of boundary
    ``j`` (leftmost first) taken every 0.5 m of centerline arc length.
    """

    s: np.ndarray
    x: np.ndarray
    y: np.ndarray
    heading: np.ndarray
    curvature: np.ndarray
    offsets: np.ndarray
    lines: list[np.ndarray]
    markings: list[str] = field(default_factory=list)

    def pose(self, s: float) -> tuple[float, float, float]:
        """Centerline pose at arc length ``s`` (linear interpolation)."""
        return (float(np.interp(s, self.s, self.x)), float(np.interp(s, self.s, self.y)),
                float(np.interp(s, self.s, self.heading)))

    def boundary_points(self, s: np.ndarray, j: int):
        """Global points of boundary ``j`` at centerline stations ``s``."""
        cx = np.interp(s, self.s, self.x)
        cy = np.interp(s, self.s, self.y)
        th = np.interp(s, self.s, self.heading)
        o = self.offsets[j]
        return cx - o * np.sin(th), cy + o * np.cos(th), th


def clothoid_heading(s, theta0: float, k0: float, k1: float, length: float):
    """Heading along a clothoid whose curvature runs linearly from ``k0`` to
    ``k1`` over ``length``."""
    return theta0 + k0 * s + (k1 - k0) * s * s / (2.0 * length)


def build_centerline(spec: ScenarioSpec) -> GroundTruth:
    """Integrate the centerline (4th order, step 0.1 m) and derive the
    boundary polylines by normal offsets."""
    s_out, x_out, y_out, th_out, k_out = [0.0], [0.0], [0.0], [0.0], [spec.segments[0].curvature_start]
    for seg in spec.segments:
        n = max(1, math.ceil(seg.length / INTEGRATION_STEP - 1e-9))
        h = seg.length / n
        local = np.arange(1, n + 1) * h
        th0 = th_out[-1]
        head = lambda u: clothoid_heading(u, th0, seg.curvature_start, seg.curvature_end, seg.length)
        a, m, b = head(local - h), head(local - h / 2), head(local)
        # RK4 on x' = cos(theta(s)), y' = sin(theta(s)); theta is closed-form
        dx = h / 6 * (np.cos(a) + 4 * np.cos(m) + np.cos(b))
        dy = h / 6 * (np.sin(a) + 4 * np.sin(m) + np.sin(b))
        s_out.extend(s_out[-1] + local)
        x_out.extend(x_out[-1] + np.cumsum(dx))
        y_out.extend(y_out[-1] + np.cumsum(dy))
        th_out.extend(b)
        k_out.extend(seg.curvature_start + (seg.curvature_end - seg.curvature_start) * local / seg.length)
    s = np.array(s_out)
    truth = GroundTruth(s=s, x=np.array(x_out), y=np.array(y_out), heading=np.array(th_out),
                        curvature=np.array(k_out), offsets=spec.offsets(), lines=[],
                        markings=list(spec.markings))
    stations = np.arange(0.0, s[-1] + 1e-9, TRUTH_SPACING)
    truth.lines = [np.stack(truth.boundary_points(stations, j), axis=1)
                   for j in range(len(truth.offsets))]
    return truth


@dataclass
class Frame:
    frame_id: int
    arclength: float
    pose: tuple[float, float, float]
    features: list[Feature]
    odometry: OdometryDelta


def to_vehicle(px, py, pth, pose):
    X, Y, psi = pose
    c, s = math.cos(psi), math.sin(psi)
    dx, dy = px - X, py - Y
    return c * dx + s * dy, -s * dx + c * dy, np.angle(np.exp(1j * (pth - psi)))


def relative_pose(prev, cur) -> OdometryDelta:
    """Pose change from ``prev`` to ``cur`` expressed in the ``prev`` frame."""
    x, y, th = to_vehicle(np.array(cur[0]), np.array(cur[1]), np.array(cur[2]), prev)
    return OdometryDelta(float(x), float(y), float(th))


def frame_arclengths(spec: ScenarioSpec) -> np.ndarray:
    end = spec.length - spec.stop_before_end
    return np.arange(0.0, end + 1e-9, spec.frame_step)


def emit_frame(spec: ScenarioSpec, truth: GroundTruth, vehicle_arclength: float,
               frame_id: int = 0, prev_pose=None) -> tuple[list[Feature], OdometryDelta]:
    """Noisy features within ``[0, feature_horizon]`` ahead of the vehicle at
    ``vehicle_arclength`` and the odometry from ``prev_pose``.

    Noise is drawn from a generator seeded by ``(rng_seed, frame_id)`` so
    frames are reproducible independently of each other.
    """
    if not 0.0 <= vehicle_arclength <= truth.s[-1]:
        raise ValueError("vehicle arc length outside the scenario")
    rng = np.random.default_rng([spec.rng_seed, frame_id])
    pose = truth.pose(vehicle_arclength)
    stations = np.arange(0.0, truth.s[-1] + 1e-9, spec.feature_spacing)
    # stations reachable within the horizon (arc length bounds the chord)
    near = stations[(stations >= vehicle_arclength - spec.lane_count * spec.lane_width - 5)
                    & (stations <= vehicle_arclength + 2 * spec.feature_horizon)]
    var_y = max(spec.noise_y ** 2, MIN_VAR_Y)
    var_t = max(spec.noise_theta ** 2, MIN_VAR_THETA)
    cov = np.diag([var_y, var_y, var_t])

    features = []
    for j in range(len(truth.offsets)):
        gx, gy, gth = truth.boundary_points(near, j)
        vx, vy, vth = to_vehicle(gx, gy, gth, pose)
        sel = (vx >= 0.0) & (vx <= spec.feature_horizon)
        k = int(sel.sum())
        ny = vy[sel] + rng.normal(0.0, spec.noise_y, k)
        nth = vth[sel] + rng.normal(0.0, spec.noise_theta, k)
        attrs = AttributeMass.of({spec.markings[j]: spec.attr_confidence},
                                 {spec.colors[j]: spec.attr_confidence})
        for fx, fy, ft in zip(vx[sel], ny, nth):
            if abs(ft) < math.pi / 2:
                features.append(Feature(float(fx), float(fy), float(ft), cov, attrs))

    odo = OdometryDelta() if prev_pose is None else relative_pose(prev_pose, pose)
    if prev_pose is not None and (spec.odometry_noise_xy or spec.odometry_noise_psi):
        odo = OdometryDelta(odo.dx + rng.normal(0.0, spec.odometry_noise_xy),
                            odo.dy + rng.normal(0.0, spec.odometry_noise_xy),
                            odo.dpsi + rng.normal(0.0, spec.odometry_noise_psi))
    return features, odo


def simulate(spec: ScenarioSpec, truth: GroundTruth | None = None) -> Iterator[Frame]:
    """Yield every frame of the drive in order."""
    truth = truth or build_centerline(spec)
    prev = None
    for fid, s in enumerate(frame_arclengths(spec)):
        feats, odo = emit_frame(spec, truth, float(s), fid, prev)
        pose = truth.pose(float(s))
        yield Frame(fid, float(s), pose, feats, odo)
        prev = pose


# -- scenario files ----------------------------------------------------------

_LIST_KEYS = {"markings", "colors"}


def load_scenario(path: str | Path, seed: int | None = None) -> ScenarioSpec:
    """Read a scenario file: a ``[scenario]`` section plus ordered
    ``[segment.N]`` sections."""
    sections = read_sections(path)
    if "scenario" not in sections:
        raise ConfigError(f"{path}: missing [scenario] section")
    return scenario_from_sections(sections, seed)


def scenario_from_sections(sections: dict, seed: int | None = None) -> ScenarioSpec:
    seg_names = sorted((n for n in sections if n.startswith("segment.")),
                       key=lambda n: int(n.split(".", 1)[1]))
    segments = []
    for name in seg_names:
        sec = sections[name]
        try:
            segments.append(RoadSegment(
                kind=sec.get("kind", "straight"), length=float(sec["length"]),
                curvature_start=float(sec.get("curvature_start", 0.0)),
                curvature_end=float(sec.get("curvature_end", sec.get("curvature_start", 0.0)))))
        except (KeyError, ValueError) as exc:
            raise ConfigError(f"[{name}]: {exc}") from exc
    kwargs = {}
    fields = ScenarioSpec.__dataclass_fields__
    for key, raw in sections["scenario"].items():
        if key not in fields or key == "segments":
            raise ConfigError(f"unknown scenario key {key!r}")
        if key in _LIST_KEYS:
            kwargs[key] = [v.strip() for v in raw.split(",") if v.strip()]
            continue
        default = fields[key].default
        try:
            kwargs[key] = int(raw) if isinstance(default, int) else float(raw)
        except ValueError as exc:
            raise ConfigError(f"bad value for scenario key {key!r}: {raw!r}") from exc
    if seed is not None:
        kwargs["rng_seed"] = seed
    try:
        return ScenarioSpec(segments=segments, **kwargs)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def double_bend_scenario(**overrides) -> ScenarioSpec:
    """200 m straight followed by four 50 m clothoids whose radius runs
    1000 m -> 100 m -> 1000 m, then the mirrored bend."""
    k_lo, k_hi = 1 / 1000, 1 / 100
    segments = [
        RoadSegment("straight", 200.0),
        RoadSegment("clothoid", 50.0, k_lo, k_hi),
        RoadSegment("clothoid", 50.0, k_hi, k_lo),
        RoadSegment("clothoid", 50.0, -k_lo, -k_hi),
        RoadSegment("clothoid", 50.0, -k_hi, -k_lo),
    ]
    params = dict(lane_count=2, lane_width=3.5, ego_lane=0,
                  markings=["solid", "solid", "solid"])
    params.update(overrides)
    return ScenarioSpec(segments=segments, **params)
