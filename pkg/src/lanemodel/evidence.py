"""Dempster-Shafer combination for marking attributes.

Mass vectors assign belief to each singleton hypothesis plus, in the last
entry, to the whole frame of discernment (ignorance). This is all the
attribute fusion needs; compound focal sets other than the full frame never
arise.
"""

from __future__ import annotations

import numpy as np


class TotalConflict(ValueError):
    """Raised when two mass assignments share no common support."""


def combine(m1: np.ndarray, m2: np.ndarray) -> tuple[np.ndarray, float]:
    """Dempster's rule. Returns the normalized mass and the conflict ``K``.

    >>> combine(np.array([0.6, 0.0, 0.4]), np.array([0.6, 0.0, 0.4]))[0]
    array([0.84, 0.  , 0.16])
    """
    s1, t1 = m1[:-1], m1[-1]
    s2, t2 = m2[:-1], m2[-1]
    singles = s1 * s2 + s1 * t2 + t1 * s2
    theta = t1 * t2
    conflict = s1.sum() * s2.sum() - float(np.dot(s1, s2))
    norm = 1.0 - conflict
    if norm <= 1e-12:
        raise TotalConflict(f"conflict mass {conflict!r}")
    out = np.append(singles, theta) / norm
    return out, conflict


def discount(mass: np.ndarray, factor: float) -> np.ndarray:
    """Shafer discounting: scale committed mass by ``factor`` and move the
    remainder to ignorance."""
    out = mass * factor
    out[-1] = 1.0 - out[:-1].sum()
    return out


def combine_all(prior: np.ndarray, masses) -> tuple[np.ndarray, bool]:
    """Fold ``masses`` into ``prior`` one at a time.

    On total conflict the prior is returned unchanged with the flag set.
    """
    fused = prior.copy()
    for m in masses:
        try:
            fused, _ = combine(fused, m)
        except TotalConflict:
            return prior.copy(), True
    return fused, False
