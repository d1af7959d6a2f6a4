"""Per-frame estimation loop: predict (or initialize), then alternate
association and fitting until the association stops changing."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

from .association import (Correspondences, associate, fuse_attributes, infer_parallel_groups,
                          place_control_points, try_spawn_lines, update_ranges)
from .config import Config
from .fitting import FitReport, fit
from .initialization import cluster_lateral, seed_lines
from .prediction import predict_model
from .types import Feature, LaneModel, OdometryDelta, sorted_lines

logger = logging.getLogger(__name__)


@dataclass
class FrameReport:
    em_iterations: int = 0
    converged: bool = False
    fit_reports: list[FitReport] = field(default_factory=list)
    spawned: list[int] = field(default_factory=list)
    dropped: list[int] = field(default_factory=list)
    correspondences: Optional[Correspondences] = None


@dataclass
class TrackState:
    """Mutable state of one tracked road; feed frames in order via ``step``."""

    config: Config = field(default_factory=Config)
    model: Optional[LaneModel] = None
    next_id: int = 0
    frames: int = 0

    def step(self, features: Sequence[Feature], delta: OdometryDelta = OdometryDelta(),
             dt: float = 0.0) -> tuple[LaneModel, FrameReport]:
        model, report = step(self, features, delta, dt)
        return model, report


def _initial_model(features, state: TrackState, timestamp: float) -> LaneModel:
    cfg = state.config.init
    lines = seed_lines(cluster_lateral(features, cfg), first_id=state.next_id, max_x=cfg.max_x)
    state.next_id += len(lines)
    return LaneModel(lines, [], timestamp)


def step(state: TrackState, features: Sequence[Feature], delta: OdometryDelta = OdometryDelta(),
         dt: float = 0.0) -> tuple[LaneModel, FrameReport]:
    """Process one frame and update ``state`` in place.

    Returns the final lane model of the frame and a report.
    """
    cfg = state.config
    report = FrameReport()
    features = list(features)

    if state.model is not None and state.model.lines:
        model = predict_model(state.model, delta, cfg.predict, dt)
        report.dropped += sorted(set(state.model.line_ids()) - set(model.line_ids()))
    else:
        timestamp = state.model.timestamp + dt if state.model is not None else 0.0
        model = _initial_model(features, state, timestamp)
        report.spawned += model.line_ids()
    reference = model

    prev_pairs = None
    corr = Correspondences([], list(range(len(features))))
    for it in range(cfg.em.max_iters):
        report.em_iterations = it + 1
        corr = associate(features, model, cfg.assoc)
        if corr.unassociated:
            model, new_ids = try_spawn_lines(features, corr.unassociated, model, state.next_id,
                                             cfg.init, cfg.assoc)
            if new_ids:
                state.next_id = max(new_ids) + 1
                report.spawned += new_ids
                corr = associate(features, model, cfg.assoc)

        pairs = corr.pair_set(model)
        if pairs == prev_pairs:
            report.converged = True
            break
        prev_pairs = pairs

        before = model.line_ids()
        model, removed = update_ranges(model, corr, features, reference, cfg.assoc)
        if removed:
            report.dropped += removed
            after = {lid: j for j, lid in enumerate(model.line_ids())}
            corr = corr.remap_lines({i: after[lid] for i, lid in enumerate(before) if lid in after})
        model = infer_parallel_groups(model)
        model = place_control_points(model, cfg.model)
        model, fit_report = fit(model, corr, features, cfg.fit)
        report.fit_reports.append(fit_report)

    fused = []
    for j, line in enumerate(model.lines):
        members = corr.features_of(j)
        fused.append(fuse_attributes(line, [features[i] for i in members], cfg.assoc)
                     if members else line)
    order = sorted_lines(fused)
    index = {ln.id: j for j, ln in enumerate(order)}
    groups = [sorted(index[model.lines[j].id] for j in g) for g in model.parallel_groups]
    model = LaneModel(order, sorted(groups), model.timestamp)
    report.correspondences = corr.remap_lines({j: index[ln.id] for j, ln in enumerate(fused)})

    state.model = model
    state.frames += 1
    return model, report
