"""Shared test constructors."""

import math

import numpy as np

from lanemodel.types import AttributeMass, Feature, make_line


def feat(x, y, theta=0.0, sy=0.05, st=0.005, attrs=None):
    cov = np.diag([sy ** 2, sy ** 2, st ** 2])
    return Feature(float(x), float(y), float(theta), cov, attrs or AttributeMass())


def features_on(line_fn, slope_fn, xs, sy=0.05, st=0.005, attrs=None):
    """Noise-free features sampled from a curve."""
    return [feat(x, line_fn(x), math.atan(slope_fn(x)), sy, st, attrs) for x in xs]


def straight(line_id, offset, x_end=100.0, **kw):
    return make_line(line_id, [[offset, 0.0, 0.0, 0.0]], [0.0, x_end], range=(0.0, x_end), **kw)
