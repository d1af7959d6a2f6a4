"""Expectation step: feature-to-line association and the model bookkeeping
that follows it (ranges, attributes, parallel groups, control points)."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import evidence
from .config import AssocConfig, InitConfig, ModelConfig
from .fitting import expand, project_onto_knots
from .initialization import cluster_lateral, seed_lines
from .types import Feature, LaneModel, Line, eval_line, sorted_lines, stack_features

TIE_TOL = 1e-9


@dataclass
class Correspondences:
    """``pairs`` holds ``(feature_index, line_index, segment_index)`` tuples
    sorted by feature index; every other feature is in ``unassociated``."""

    pairs: list[tuple[int, int, int]] = field(default_factory=list)
    unassociated: list[int] = field(default_factory=list)

    def pair_set(self, model: LaneModel) -> frozenset:
        """Pairs keyed by line ID, comparable across models."""
        return frozenset((f, model.lines[l].id, s) for f, l, s in self.pairs)

    def features_of(self, line_index: int) -> list[int]:
        return [f for f, l, _ in self.pairs if l == line_index]

    def remap_lines(self, mapping: dict[int, int]) -> "Correspondences":
        return Correspondences([(f, mapping[l], s) for f, l, s in self.pairs],
                               list(self.unassociated))


def distances(features: Sequence[Feature], model: LaneModel):
    """Residuals and squared Mahalanobis distances of every feature to every
    line, shape ``(n_features, n_lines)``. Lines are extrapolated beyond
    their knots."""
    x, y, theta, cov = stack_features(features)
    n, k = len(x), model.n_lines
    ry = np.empty((n, k))
    rt = np.empty((n, k))
    for j, line in enumerate(model.lines):
        ry[:, j] = eval_line(line, x, 0) - y
        rt[:, j] = np.arctan(eval_line(line, x, 1)) - theta
    S = cov[:, 1:, 1:]
    det = S[:, 0, 0] * S[:, 1, 1] - S[:, 0, 1] * S[:, 1, 0]
    i00 = (S[:, 1, 1] / det)[:, None]
    i11 = (S[:, 0, 0] / det)[:, None]
    i01 = (-S[:, 0, 1] / det)[:, None]
    d2 = i00 * ry * ry + 2 * i01 * ry * rt + i11 * rt * rt
    return ry, rt, d2


def associate(features: Sequence[Feature], model: LaneModel,
              cfg: AssocConfig | None = None) -> Correspondences:
    """Nearest line by Mahalanobis distance over (lateral offset, heading),
    subject to the chi-square gate and the Euclidean lateral cap. Ties go to
    the smaller line ID."""
    cfg = cfg or AssocConfig()
    n = len(features)
    if n == 0:
        return Correspondences()
    if model.n_lines == 0:
        return Correspondences([], list(range(n)))
    ry, _, d2 = distances(features, model)
    ok = (d2 <= cfg.gate_chi2) & (np.abs(ry) <= cfg.euclid_gate)
    d2 = np.where(ok, d2, np.inf)
    ids = np.array(model.line_ids())
    x = np.fromiter((f.x for f in features), float, n)
    seg_idx = np.stack([ln.segment_index(x) for ln in model.lines], axis=1)

    pairs, unassoc = [], []
    for i in range(n):
        best = d2[i].min()
        if not np.isfinite(best):
            unassoc.append(i)
            continue
        cand = np.flatnonzero(d2[i] - best < TIE_TOL)
        j = int(cand[np.argmin(ids[cand])])
        pairs.append((i, j, int(seg_idx[i, j])))
    return Correspondences(pairs, unassoc)


def try_spawn_lines(features: Sequence[Feature], unassociated: Sequence[int], model: LaneModel,
                    next_id: int, init_cfg: InitConfig | None = None,
                    cfg: AssocConfig | None = None) -> tuple[LaneModel, list[int]]:
    """Seed new lines from clusters of unassociated features that are at
    least ``spawn_min_separation`` from every existing line at x=0.

    Returns the augmented model and the IDs of new lines.
    """
    init_cfg = init_cfg or InitConfig()
    cfg = cfg or AssocConfig()
    subset = [features[i] for i in unassociated]
    clusters = cluster_lateral(subset, init_cfg)
    if not clusters:
        return model, []
    offsets = [float(eval_line(ln, 0.0)) for ln in model.lines]
    accepted = [c for c in clusters
                if all(abs(c.mean_y - o) >= cfg.spawn_min_separation for o in offsets)]
    if not accepted:
        return model, []
    new = seed_lines(accepted, first_id=next_id, max_x=init_cfg.max_x)
    lines = sorted_lines([ln.copy() for ln in model.lines] + new)
    return LaneModel(lines, [], model.timestamp), [ln.id for ln in new]


def update_ranges(model: LaneModel, corr: Correspondences, features: Sequence[Feature],
                  reference: Optional[LaneModel] = None,
                  cfg: AssocConfig | None = None) -> tuple[LaneModel, list[int]]:
    """Set each line's range from its associated features this frame.

    Ranges extend instantly but shrink by at most ``range_decay`` relative
    to the line's range in ``reference`` (the predicted model at the start
    of the frame). Lines without features keep their reference range and
    count a missed frame; after ``spawn_grace`` misses they are removed.
    Returns the new model and the IDs of removed lines.
    """
    cfg = cfg or AssocConfig()
    ref = {ln.id: ln for ln in (reference or model).lines}
    x = np.fromiter((f.x for f in features), float, len(features))
    members: dict[int, list[int]] = {}
    for f, l, _ in corr.pairs:
        members.setdefault(l, []).append(f)

    kept, removed = [], []
    for j, line in enumerate(model.lines):
        prior = ref.get(line.id)
        prev_lo, prev_hi = prior.range if prior is not None else line.range
        prev_missed = prior.missed_frames if prior is not None else 0
        if j in members:
            xs = x[members[j]]
            lo, hi = float(xs.min()), float(xs.max())
            if prior is not None:
                lo = min(lo, prev_lo + cfg.range_decay)
                hi = max(hi, prev_hi - cfg.range_decay)
            kept.append(line.copy(range=(lo, hi), missed_frames=0))
            continue
        missed = prev_missed + 1
        if missed >= cfg.spawn_grace:
            removed.append(line.id)
            continue
        kept.append(line.copy(range=(prev_lo, prev_hi), missed_frames=missed))
    return LaneModel(kept, [], model.timestamp), removed


def fuse_attributes(line: Line, features: Sequence[Feature],
                    cfg: AssocConfig | None = None) -> Line:
    """Fold the attribute evidence of ``features`` into the line's running
    masses (discounted by ``forget_factor`` first) with Dempster's rule.

    On total conflict the line keeps its previous masses and ``conflict`` is
    set.
    """
    cfg = cfg or AssocConfig()
    type_prior = evidence.discount(line.type_mass, cfg.forget_factor)
    color_prior = evidence.discount(line.color_mass, cfg.forget_factor)
    tmass, tconf = evidence.combine_all(type_prior, (f.attrs.marking_type for f in features))
    cmass, cconf = evidence.combine_all(color_prior, (f.attrs.color for f in features))
    if tconf:
        tmass = line.type_mass.copy()
    if cconf:
        cmass = line.color_mass.copy()
    return line.copy(type_mass=tmass, color_mass=cmass, conflict=tconf or cconf)


def infer_parallel_groups(model: LaneModel) -> LaneModel:
    """Partition laterally ordered lines into parallel groups.

    Adjacent lines are joined when either of them is dashed: a dashed line is
    parallel to both neighbours, while solid and block lines only bound a
    group.
    """
    groups: list[list[int]] = []
    for j, line in enumerate(model.lines):
        if j > 0 and "dashed" in (model.lines[j - 1].marking_type, line.marking_type):
            groups[-1].append(j)
        else:
            groups.append([j])
    out = LaneModel([ln.copy() for ln in model.lines], groups, model.timestamp)
    return out


def knot_vector(start: float, ends: Sequence[float], cfg: ModelConfig) -> tuple[np.ndarray, list[float]]:
    """Shared knots for a group starting at ``start`` whose members end at
    ``ends``. Returns the knots and each member's (possibly merged) end."""
    cands = sorted({float(start), *map(float, ends)})
    kept = [cands[0]]
    rep = {cands[0]: cands[0]}
    for c in cands[1:]:
        if c - kept[-1] >= cfg.min_segment_len:
            kept.append(c)
        rep[c] = kept[-1]
    if len(kept) == 1:
        # nothing far enough from the start: one segment to the far end
        far = max(cands[-1], start + 1.0)
        kept.append(far)
        rep = {c: far for c in cands}
        rep[cands[0]] = far
    knots = [kept[0]]
    for a, b in zip(kept[:-1], kept[1:]):
        n = max(1, math.ceil((b - a) / cfg.max_segment_len - 1e-12))
        knots.extend(a + (b - a) * np.arange(1, n + 1) / n)
    knots[-1] = kept[-1]
    member_ends = [rep[float(e)] if rep[float(e)] > kept[0] else kept[1] for e in ends]
    return np.array(knots), member_ends


def place_control_points(model: LaneModel, cfg: ModelConfig | None = None) -> LaneModel:
    """Place knots per parallel group and re-express every line over them.

    Candidates are the group's range start and every member's range end;
    candidates closer than ``min_segment_len`` merge into the earlier one and
    gaps longer than ``max_segment_len`` are subdivided evenly. Members share
    the knot vector, each truncated at its own end.
    """
    cfg = cfg or ModelConfig()
    lines = [ln.copy() for ln in model.lines]
    for group in model.parallel_groups:
        start = min(lines[j].range[0] for j in group)
        ends = [lines[j].range[1] for j in group]
        knots, member_ends = knot_vector(start, ends, cfg)
        for j, end in zip(group, member_ends):
            own = knots[knots <= end + 1e-9]
            line = lines[j]
            if np.array_equal(own, line.knots):
                continue
            reduced = project_onto_knots(line, own)
            lines[j] = line.copy(knots=own, coeffs=expand(reduced, own), info=None)
    return LaneModel(lines, [list(g) for g in model.parallel_groups], model.timestamp)
