import csv
import math
from pathlib import Path

import numpy as np
import pytest

from lanemodel.config import Config
from lanemodel.evaluation import (EvalResult, bin_rmse, compare_models, frame_deviations,
                                  lane_labels, match_lines, model_config, read_deviations,
                                  run_eval, run_scenario, write_eval)
from lanemodel.simulator import RoadSegment, ScenarioSpec, build_centerline
from lanemodel.types import LaneModel, OdometryDelta

from helpers import straight


def _straight_truth():
    spec = ScenarioSpec([RoadSegment("straight", 300.0)], lane_count=3, ego_lane=1,
                        lane_width=3.5)
    return spec, build_centerline(spec)


def _offset_model(truth, shift):
    return LaneModel([straight(j, o + shift, 200.0) for j, o in enumerate(truth.offsets)])


def _result_for(model, truth, poses):
    res = EvalResult("spline")
    cfg = Config()
    for fid, pose in enumerate(poses):
        for i, lab, x, dv in frame_deviations(model, truth.lines, pose, cfg):
            res.sample_frame.append(np.full(len(x), fid))
            res.sample_line.append(np.full(len(x), i))
            res.sample_label.append(np.full(len(x), lab))
            res.sample_x.append(x)
            res.sample_dev.append(dv)
    return res


def test_exact_model_has_zero_error():
    _, truth = _straight_truth()
    res = _result_for(_offset_model(truth, 0.0), truth, [truth.pose(0.0), truth.pose(50.0)])
    rows = res.bins(10.0)
    assert rows and all(r[3] == 0 for r in rows)
    assert {r[2] for r in rows} == {"ego", "adjacent", "all"}


def test_constant_offset_model():
    _, truth = _straight_truth()
    res = _result_for(_offset_model(truth, 0.2), truth, [truth.pose(10.0)])
    for _, _, _, rmse, _ in res.bins(10.0):
        assert abs(rmse - 0.2) < 1e-12


def test_samples_limited_to_model_range():
    _, truth = _straight_truth()
    model = LaneModel([straight(0, truth.offsets[1], 200.0).copy(range=(5.0, 42.0))])
    (i, _, x, _), = frame_deviations(model, truth.lines, truth.pose(0.0), Config())
    assert i == 1 and x.min() >= 5.0 and x.max() <= 42.0


def test_lane_labels():
    assert lane_labels([5.25, 1.75, -1.75, -5.25, -8.75]) == [1, 0, 0, 1, 2]


def test_matching_is_one_to_one():
    model = LaneModel([straight(0, 1.8), straight(1, 1.6), straight(2, -1.75)])
    assert match_lines(model, [1.75, -1.75, 5.25], 1.0) == {0: 0, 1: 2}


def test_clothoid_mode_is_single_segment():
    cfg = model_config(Config(), "clothoid")
    assert math.isinf(cfg.model.max_segment_len) and math.isinf(cfg.model.min_segment_len)
    with pytest.raises(ValueError):
        model_config(Config(), "spiral")


def test_bins_recomputed_from_deviation_file(tmp_path):
    spec = ScenarioSpec([RoadSegment("straight", 60.0), RoadSegment("clothoid", 60.0, 0, 0.005)],
                        lane_count=2, stop_before_end=40.0, frame_step=2.0, rng_seed=3)
    res = run_scenario(spec, "spline")
    write_eval(res, tmp_path)
    x, dev, lab = read_deviations(tmp_path / "deviations.csv")
    with open(tmp_path / "bins.csv", newline="") as fh:
        table = list(csv.DictReader(fh))
    again = bin_rmse(x, dev, lab, 10.0)
    assert len(again) == len(table)
    for row, (a, b, name, rmse, n) in zip(table, again):
        assert (float(row["bin_start"]), row["lane_label"], int(row["sample_count"])) == (a, name, n)
        assert abs(float(row["rmse"]) - rmse) <= 1e-12


def test_empty_frames_counted():
    _, truth = _straight_truth()
    frames = [(k, [], OdometryDelta(1.0, 0, 0), truth.pose(float(k))) for k in range(3)]
    res = run_eval(frames, truth.lines, "spline")
    assert res.empty_frames == 3 and len(res.frames) == 3
    assert all(math.isnan(f.rmse) for f in res.frames)


def test_zero_noise_straight_scenario():
    spec = ScenarioSpec([RoadSegment("straight", 160.0)], lane_count=2, noise_y=0.0,
                        noise_theta=0.0, frame_step=4.0)
    comp = compare_models(spec)
    assert comp.spline.max_rmse() < 1e-6 and comp.clothoid.max_rmse() < 1e-6
    assert comp.straight_view.any()
