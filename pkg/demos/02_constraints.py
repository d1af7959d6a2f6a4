"""How continuity and parallelism enter the fit.

Continuity is eliminated by substitution: each line keeps its first segment
plus one cubic coefficient per further segment. Parallelism between lines of
a group is a set of slope-equality rows solved with Lagrange multipliers.

Run: python demos/02_constraints.py
"""

import numpy as np

from lanemodel.association import Correspondences, knot_vector
from lanemodel.config import ModelConfig
from lanemodel.fitting import build_problem, expand, fit, parallel_constraint_points, substitute
from lanemodel.types import Feature, LaneModel, make_line, poly_eval

# continuing x^3 past s = 2 with a zero cubic term
nxt = substitute(np.array([0.0, 0.0, 0.0, 1.0]), 0.0, 2.0)
print("segment after the knot:", nxt)
for order in range(3):
    print(f"  derivative {order} at s=2: {poly_eval([0, 0, 0, 1], 2.0, order):g} vs "
          f"{poly_eval(nxt, 2.0, order):g}")

# knots for a group whose members end at 60 m and 120 m
knots, _ = knot_vector(0.0, [120.0, 60.0], ModelConfig())
print("shared knots:", knots)

# two noisy, truly parallel curves, fitted with and without the constraint rows
rng = np.random.default_rng(0)
centre = lambda x: 2e-4 * x ** 2 - 1e-6 * x ** 3
slope = lambda x: 4e-4 * x - 3e-6 * x ** 2
cov = np.diag([0.01, 0.01, 1e-4])
features, pairs = [], []
for n, offset in enumerate((1.75, -1.75)):
    for x in rng.uniform(0, 100, 60):
        pairs.append((len(features), n, 0))
        features.append(Feature(x, centre(x) + offset + rng.normal(0, 0.1),
                                np.arctan(slope(x)) + rng.normal(0, 0.01), cov))
corr = Correspondences(pairs, [])
knots = np.array([0.0, 50.0, 100.0])
lines = [make_line(n, expand(np.array([off, 0, 0, 0, 0.0]), knots), knots, range=(0, 100))
         for n, off in enumerate((1.75, -1.75))]

problem = build_problem(LaneModel(lines, [[0, 1]]), corr, features)
print(f"reduced dimension {problem.dim}, constraint rows {problem.K.shape[0]}")

pts = parallel_constraint_points(knots, knots)
for groups, name in (([[0], [1]], "independent"), ([[0, 1]], "parallel")):
    model, report = fit(LaneModel(lines, groups), corr, features)
    gap = [model.lines[0](x, 1) - model.lines[1](x, 1) for x in pts]
    print(f"{name:>11}: {report.iterations} iterations, slope gaps at {pts} = "
          f"{np.array2string(np.array(gap), precision=2)}")
