"""One frame of lane features, from raw points to a fitted multi-lane model.

Run: python demos/01_single_frame.py
"""

import numpy as np

from lanemodel import Config, TrackState
from lanemodel.simulator import RoadSegment, ScenarioSpec, build_centerline, emit_frame

# a gentle left curve with three lanes, features every 2 m up to 100 m ahead
spec = ScenarioSpec([RoadSegment("straight", 30.0), RoadSegment("clothoid", 150.0, 0.0, 0.003)],
                    lane_count=3, ego_lane=1, noise_y=0.05, rng_seed=1)
truth = build_centerline(spec)
features, _ = emit_frame(spec, truth, 0.0)
print(f"{len(features)} features, lateral offsets from "
      f"{min(f.y for f in features):.2f} to {max(f.y for f in features):.2f} m")

# the first frame seeds one straight line per lateral cluster near the car,
# then alternates association and constrained fitting until stable
state = TrackState(Config())
model, report = state.step(features)
print(f"EM iterations: {report.em_iterations}, converged: {report.converged}")

for line in model.lines:
    print(f"line {line.id}: knots {np.round(line.knots, 1)}, range "
          f"({line.range[0]:.0f}, {line.range[1]:.0f}) m, y(0) = {line(0.0):+.3f} m, "
          f"y(80) = {line(80.0):+.3f} m, {line.marking_type} ({line.marking_confidence:.2f})")

# the attributes only fuse once lines exist, so grouping shows up on frame 2
model, _ = state.step(features)
print("parallel groups after the second frame:", model.parallel_groups)
