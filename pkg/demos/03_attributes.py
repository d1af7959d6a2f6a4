"""Marking type and color evidence, and how it shapes parallel groups.

Run: python demos/03_attributes.py
"""

import numpy as np

from lanemodel import evidence
from lanemodel.association import infer_parallel_groups
from lanemodel.types import MARKING_TYPES, AttributeMass, LaneModel, make_line

dashed = AttributeMass.of({"dashed": 0.6}).marking_type
fused, conflict = evidence.combine(dashed, dashed)
print({k: round(float(v), 3) for k, v in zip(MARKING_TYPES, fused)}, "conflict", conflict)

# a line believed solid meets a run of dashed detections; discounting the old
# belief each frame lets the new evidence win
belief = AttributeMass.of({"solid": 0.9}).marking_type
for frame in range(6):
    belief, _ = evidence.combine_all(evidence.discount(belief, 0.95), [dashed] * 3)
    print(f"frame {frame}: {MARKING_TYPES[int(np.argmax(belief))]:>6} "
          f"{np.round(belief, 3)}")

# solid, dashed, block, solid from left to right: a dashed line joins both
# neighbours, solid and block lines only close a group
kinds = ["solid", "dashed", "block", "solid"]
lines = [make_line(i, [[5.25 - 3.5 * i, 0, 0, 0]], [0, 50],
                   type_mass=AttributeMass.of({k: 1.0}).marking_type) for i, k in enumerate(kinds)]
print("groups:", infer_parallel_groups(LaneModel(lines)).parallel_groups)
