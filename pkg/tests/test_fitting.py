import math

import numpy as np
import pytest

from lanemodel.association import Correspondences
from lanemodel.config import FitConfig
from lanemodel.fitting import (FitFailure, FitProblem, apply_continuity_substitutions,
                               build_problem, expand, expansion_matrices,
                               parallel_constraint_points, reduced_dim, residual_and_jacobian,
                               solve_constrained, substitute, fit)
from lanemodel.prediction import predict_model
from lanemodel.types import LaneModel, OdometryDelta, eval_line, make_line, poly_eval

from helpers import feat, features_on


def _random_knots(rng, M):
    return np.concatenate([[0.0], np.cumsum(rng.uniform(10, 40, M))])


def _random_reduced(rng, M):
    return np.concatenate([[rng.normal(0, 2), rng.normal(0, 0.05), rng.normal(0, 1e-3),
                            rng.normal(0, 1e-5)], rng.normal(0, 1e-5, M - 1)])


def _line(lid, reduced, knots, **kw):
    knots = np.asarray(knots, float)
    return make_line(lid, expand(reduced, knots), knots, range=(knots[0], knots[-1]), **kw)


def _all_to(feats, line=0):
    return Correspondences([(i, line, 0) for i in range(len(feats))], [])


# -- continuity substitutions --------------------------------------------------

def test_substitution_worked_example():
    nxt = substitute(np.array([0.0, 0.0, 0.0, 1.0]), 0.0, 2.0)
    assert nxt.tolist() == [8.0, -12.0, 6.0, 0.0]
    for order in (0, 1, 2):
        assert poly_eval([0, 0, 0, 1], 2.0, order) == poly_eval(nxt, 2.0, order)


def test_equal_cubic_keeps_segment():
    prev = np.array([1.0, -0.5, 0.2, 0.03])
    np.testing.assert_allclose(substitute(prev, 0.03, 7.0), prev, atol=1e-12)


def test_single_segment_reduction_is_identity():
    p = np.array([1.0, 2.0, 3.0, 4.0])
    np.testing.assert_array_equal(expand(p, [0, 10]), [p])
    np.testing.assert_array_equal(apply_continuity_substitutions([p], [0, 10]), p)
    assert reduced_dim(1) == 4


@pytest.mark.parametrize("M", [1, 2, 3, 4])
def test_expansion_matches_recursive_substitution(M):
    rng = np.random.default_rng(M)
    knots = _random_knots(rng, M)
    p = _random_reduced(rng, M)
    E = expansion_matrices(knots)
    assert E.shape == (M, 4, M + 3)
    np.testing.assert_allclose(np.einsum("mij,j->mi", E, p), expand(p, knots), rtol=1e-12, atol=1e-15)


def test_continuity_at_every_knot():
    rng = np.random.default_rng(5)
    for _ in range(100):
        M = int(rng.integers(2, 6))
        knots = _random_knots(rng, M)
        coeffs = expand(_random_reduced(rng, M), knots)
        for m in range(1, M):
            for order in (0, 1, 2):
                a = poly_eval(coeffs[m - 1], knots[m], order)
                b = poly_eval(coeffs[m], knots[m], order)
                assert abs(a - b) < 1e-9
        np.testing.assert_allclose(expand(apply_continuity_substitutions(coeffs, knots), knots),
                                   coeffs, rtol=1e-12, atol=1e-12)


# -- residuals and Jacobians ----------------------------------------------------

def test_feature_on_curve_has_zero_error():
    p = np.array([1.0, 0.1, 0.01, 0.001])
    x = 4.0
    f = feat(x, poly_eval(p, x), math.atan(poly_eval(p, x, 1)))
    e, _, _ = residual_and_jacobian(f, p, np.array([0.0, 10.0]))
    np.testing.assert_allclose(e, 0, atol=1e-12)


def test_single_segment_jacobian_rows():
    x = 3.0
    _, J, _ = residual_and_jacobian(feat(x, 0.0), np.zeros(4), np.array([0.0, 10.0]))
    np.testing.assert_array_equal(J, [[1, x, x * x, x ** 3], [0, 1, 2 * x, 3 * x * x]])


def _fd_jacobian(func, p, h=1e-6):
    cols = []
    for k in range(len(p)):
        step = np.zeros_like(p)
        step[k] = h
        cols.append((func(p + step) - func(p - step)) / (2 * h))
    return np.stack(cols, axis=1)


def test_jacobian_matches_central_differences():
    rng = np.random.default_rng(42)
    cross_checked = 0
    for _ in range(100):
        M = int(rng.integers(1, 5))
        knots = _random_knots(rng, M)
        p = _random_reduced(rng, M)
        x = rng.uniform(knots[0], knots[-1] + 10)
        f = feat(x, rng.normal(0, 3), rng.uniform(-0.3, 0.3))
        _, J, _ = residual_and_jacobian(f, p, knots)
        Jfd = _fd_jacobian(lambda q: residual_and_jacobian(f, q, knots)[0], p)
        scale = np.max(np.abs(J), axis=1, keepdims=True)
        assert np.all(np.abs(J - Jfd) <= 1e-5 * scale)
        if x > knots[1]:
            assert np.any(J[:, :4] != 0)  # first-segment parameters reach later segments
            cross_checked += 1
    assert cross_checked > 20


def test_heading_weight_is_slope_variance():
    f = feat(5.0, 0.0, 0.3, sy=0.1, st=0.01)
    _, _, omega = residual_and_jacobian(f, np.zeros(4), np.array([0.0, 10.0]))
    dslope = 1 + math.tan(0.3) ** 2
    np.testing.assert_allclose(omega, np.diag([100.0, 1.0 / (1e-4 * dslope ** 2)]))


def test_prior_transform_jacobian():
    """Perturbing the old line's value (slope) at a knot moves the predicted
    line's value (slope) there by the stored transform factor."""
    knots = np.array([0.0, 40.0])
    base = np.array([0.5, 0.08, 1e-3, -1e-5])
    d = OdometryDelta(1.0, 0.2, 0.05)
    info = np.eye(4)

    def predicted(p):
        return predict_model(LaneModel([_line(0, p, knots, info=info)]), d).lines[0]

    ref = predicted(base)
    x0 = ref.prior.points[0, 0]
    T = ref.prior.transform_jac[0]
    h = 1e-6
    up, dn = predicted(base + [h, 0, 0, 0]), predicted(base - [h, 0, 0, 0])
    dval = (eval_line(up, x0) - eval_line(dn, x0)) / (2 * h)
    assert abs(dval - T[0, 0]) < 1e-5
    up, dn = predicted(base + [0, h, 0, 0]), predicted(base - [0, h, 0, 0])
    # at x=0 the slope perturbation leaves the point in place
    dslope = (eval_line(up, x0, 1) - eval_line(dn, x0, 1)) / (2 * h)
    assert abs(dslope - T[1, 1]) < 1e-5


# -- problem structure ---------------------------------------------------------

@pytest.mark.parametrize("M", [1, 2, 3, 4])
def test_dimension_and_constraint_counts(M):
    knots = np.linspace(0, 20 * M, M + 1)
    lines = [_line(i, np.array([3.5 * (1 - i), 0, 0, 0] + [0] * (M - 1), float), knots)
             for i in range(3)]
    model = LaneModel(lines, [[0, 1, 2]])
    feats, pairs = [], []
    for n, ln in enumerate(lines):
        for x in np.linspace(0, knots[-1], 4 * M + 4):
            pairs.append((len(feats), n, 0))
            feats.append(feat(x, eval_line(ln, x)))
    prob = build_problem(model, Correspondences(pairs, []), feats)
    assert prob.dim == (M + 3) * 3
    assert prob.K.shape == (2 * (M + 2), prob.dim)
    assert len(parallel_constraint_points(knots, knots)) == M + 2
    assert prob.H.shape == (prob.dim, prob.dim) and prob.b.shape == (prob.dim,)
    np.testing.assert_array_equal(prob.H, prob.H.T)


def test_underdetermined_line_excluded():
    line = _line(0, np.zeros(4), [0, 20])
    feats = [feat(1, 0), feat(2, 0)]
    prob = build_problem(LaneModel([line]), _all_to(feats), feats)
    assert prob.dim == 0
    out, report = fit(LaneModel([line]), _all_to(feats), feats)
    assert report.excluded_lines == [0]
    np.testing.assert_array_equal(out.lines[0].coeffs, line.coeffs)


def test_unconstrained_step_solves_normal_equations():
    rng = np.random.default_rng(0)
    line = _line(0, np.zeros(4), [0, 50])
    feats = [feat(x, rng.normal(1, 0.2), rng.normal(0, 0.02)) for x in np.linspace(0, 50, 30)]
    prob = build_problem(LaneModel([line]), _all_to(feats), feats)
    step, lam, mu = solve_constrained(prob)
    assert lam.shape == (0,) and mu == 0
    np.testing.assert_allclose(prob.H @ step, -prob.b, rtol=1e-8, atol=1e-8 * np.abs(prob.b).max())


def test_zero_step_at_truth():
    knots = np.array([0.0, 30.0, 60.0])
    p = np.array([1.0, 0.02, 1e-3, -2e-5, 1e-5])
    truth = _line(0, p, knots)
    feats = features_on(truth, lambda x: eval_line(truth, x, 1), np.linspace(0, 60, 40))
    prob = build_problem(LaneModel([truth]), _all_to(feats), feats)
    step, _, _ = solve_constrained(prob)
    assert np.max(np.abs(step)) < 1e-9


def test_singular_constraints_raise():
    prob = FitProblem(params=np.zeros(2), H=np.eye(2), b=np.zeros(2),
                      K=np.array([[1.0, 0.0], [1.0, 0.0]]), g=np.zeros(2), cost=0.0)
    with pytest.raises(FitFailure):
        solve_constrained(prob, FitConfig())


# -- fit ---------------------------------------------------------------------

def _weighted_ls_oracle(feats):
    rows, t, w = [], [], []
    for f in feats:
        s = math.tan(f.theta)
        rows += [[1, f.x, f.x ** 2, f.x ** 3], [0, 1, 2 * f.x, 3 * f.x ** 2]]
        t += [f.y, s]
        w += [1 / f.cov[1, 1], 1 / (f.cov[2, 2] * (1 + s * s) ** 2)]
    A, t, W = np.array(rows), np.array(t), np.diag(w)
    return np.linalg.solve(A.T @ W @ A, A.T @ W @ t)


def test_single_segment_fit_matches_normal_equations():
    rng = np.random.default_rng(7)
    for _ in range(10):
        feats = [feat(x, 1 + 0.01 * x + rng.normal(0, 0.1), rng.normal(0.01, 0.01), sy=0.1, st=0.01)
                 for x in rng.uniform(0, 40, 25)]
        line = _line(0, np.zeros(4), [0, 40])
        out, report = fit(LaneModel([line]), _all_to(feats), feats)
        assert report.converged
        expected = _weighted_ls_oracle(feats)
        np.testing.assert_allclose(out.lines[0].coeffs[0], expected, rtol=1e-8,
                                   atol=1e-8 * np.abs(expected).max())


def test_noise_free_spline_recovered():
    knots = np.array([0.0, 25.0, 60.0, 90.0])
    p = np.array([-1.75, 0.03, 8e-4, -1.5e-5, 2e-5, -1e-5])
    truth = _line(0, p, knots)
    feats = features_on(truth, lambda x: eval_line(truth, x, 1), np.linspace(0, 90, 46))
    start = _line(0, np.zeros(6), knots)
    out, report = fit(LaneModel([start]), _all_to(feats), feats)
    assert report.converged
    np.testing.assert_allclose(out.lines[0].coeffs, truth.coeffs, rtol=1e-8, atol=1e-8)


def test_straight_road_has_no_curvature():
    feats = [feat(x, 1.5) for x in np.linspace(0, 80, 41)]
    out, _ = fit(LaneModel([_line(0, np.array([1, 0.1, 0, 0, 0.0]), [0, 40, 80])]),
                 _all_to(feats), feats)
    assert np.all(np.abs(out.lines[0].coeffs[:, 1:]) < 1e-8)


def test_noisy_fit_accuracy_monte_carlo():
    knots = np.array([0.0, 50.0, 100.0])
    truth = _line(0, np.array([0.5, 0.02, 5e-4, -6e-6, 4e-6]), knots)
    xs_eval = np.linspace(0, 100, 201)
    rmse = []
    for seed in range(100):
        rng = np.random.default_rng(seed)
        xs = rng.uniform(0, 100, 200)
        feats = [feat(x, eval_line(truth, x) + rng.normal(0, 0.1),
                      math.atan(eval_line(truth, x, 1)) + rng.normal(0, 0.01), sy=0.1, st=0.01)
                 for x in xs]
        out, _ = fit(LaneModel([_line(0, np.zeros(5), knots)]), _all_to(feats), feats)
        err = eval_line(out.lines[0], xs_eval) - eval_line(truth, xs_eval)
        rmse.append(math.sqrt(np.mean(err ** 2)))
    assert np.percentile(rmse, 95) < 0.05


def test_parallel_pair_constraint_residual():
    rng = np.random.default_rng(3)
    knots = np.array([0.0, 40.0, 80.0])
    centre = _line(0, np.array([0.0, 0.01, 4e-4, -5e-6, 6e-6]), knots)
    feats, pairs = [], []
    for n, off in enumerate((1.75, -1.75)):
        for x in rng.uniform(0, 80, 60):
            y = eval_line(centre, x) + off + rng.normal(0, 0.1)
            th = math.atan(eval_line(centre, x, 1)) + rng.normal(0, 0.01)
            pairs.append((len(feats), n, 0))
            feats.append(feat(x, y, th, sy=0.1, st=0.01))
    lines = [_line(n, np.array([off, 0, 0, 0, 0.0]), knots) for n, off in enumerate((1.75, -1.75))]
    model = LaneModel(lines, [[0, 1]])
    out, report = fit(model, Correspondences(pairs, []), feats)
    assert report.converged
    for x in parallel_constraint_points(knots, knots):
        assert abs(eval_line(out.lines[0], x, 1) - eval_line(out.lines[1], x, 1)) < 1e-8
    assert report.constraint_violation < 1e-9


def test_cost_history_non_increasing():
    rng = np.random.default_rng(9)
    feats = [feat(x, 0.3 * math.sin(x / 20) + rng.normal(0, 0.05)) for x in np.linspace(0, 90, 60)]
    out, report = fit(LaneModel([_line(0, np.zeros(6), [0, 30, 60, 90])]), _all_to(feats), feats)
    assert all(b <= a * (1 + 1e-12) + 1e-12 for a, b in zip(report.cost_history, report.cost_history[1:]))
    assert report.converged and report.iterations <= 3


@pytest.mark.parametrize("d, knots", [(OdometryDelta(3.0, 0.2, 0.0), [0.0, 30.0, 70.0]),
                                      (OdometryDelta(2.0, 0.1, 0.02), [0.0, 50.0])])
def test_prior_alone_reproduces_prediction(d, knots):
    M = len(knots) - 1
    prev = _line(0, np.array([1.0, 0.02, 4e-4, -3e-6, 2e-6][:M + 3]), knots, info=np.eye(M + 3))
    predicted = predict_model(LaneModel([prev]), d)
    out, report = fit(predicted, Correspondences(), [])
    assert report.converged and report.excluded_lines == []
    xs = np.linspace(predicted.lines[0].knots[0], predicted.lines[0].knots[-1], 50)
    np.testing.assert_allclose(eval_line(out.lines[0], xs), eval_line(predicted.lines[0], xs),
                               atol=1e-8)
