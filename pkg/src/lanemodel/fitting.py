"""Maximization step: equality-constrained Gauss-Newton fit of all lines.

Continuity of value, slope and curvature at interior knots is eliminated by
substitution, leaving per line the reduced vector
``(c0, c1, c2, c3 of segment 1, c3 of segments 2..M)`` of size ``M + 3``.
Parallelism between adjacent lines of a group enters as Lagrange rows
demanding equal slopes at shared knots and at the first-segment midpoint.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .config import FitConfig
from .types import ControlPointPrior, Feature, LaneModel, Line, poly_basis, stack_features

logger = logging.getLogger(__name__)


class FitFailure(RuntimeError):
    """The KKT system stayed singular at maximum damping."""


# -- continuity substitutions -----------------------------------------------

def substitute(prev: np.ndarray, next_c3: float, s: float) -> np.ndarray:
    """Coefficients of the segment following ``prev`` at knot ``s`` whose
    cubic coefficient is ``next_c3``, continuous in value, slope and
    curvature at ``s``."""
    c0, c1, c2, c3 = prev
    d3 = c3 - next_c3
    n2 = c2 + 3.0 * d3 * s
    d2 = c2 - n2
    n1 = c1 + 2.0 * d2 * s + 3.0 * d3 * s * s
    d1 = c1 - n1
    n0 = c0 + d1 * s + d2 * s * s + d3 * s ** 3
    return np.array([n0, n1, n2, next_c3])


def expansion_matrices(knots: np.ndarray) -> np.ndarray:
    """Linear maps ``E[m]`` (shape ``(M, 4, M+3)``) with
    ``coeffs[m] = E[m] @ reduced``."""
    knots = np.asarray(knots, dtype=float)
    M = len(knots) - 1
    dim = M + 3
    E = np.zeros((M, 4, dim))
    E[0, :, :4] = np.eye(4)
    for m in range(1, M):
        s = knots[m]
        prev = E[m - 1]
        nxt3 = np.zeros(dim)
        nxt3[3 + m] = 1.0
        d3 = prev[3] - nxt3
        n2 = prev[2] + 3.0 * s * d3
        d2 = prev[2] - n2
        n1 = prev[1] + 2.0 * s * d2 + 3.0 * s * s * d3
        d1 = prev[1] - n1
        E[m] = np.stack([prev[0] + s * d1 + s * s * d2 + s ** 3 * d3, n1, n2, nxt3])
    return E


def expand(reduced: np.ndarray, knots: np.ndarray) -> np.ndarray:
    """Per-segment coefficients ``(M, 4)`` from the reduced vector."""
    reduced = np.asarray(reduced, dtype=float)
    M = len(knots) - 1
    if reduced.shape != (M + 3,):
        raise ValueError(f"reduced vector must have {M + 3} entries")
    out = np.empty((M, 4))
    out[0] = reduced[:4]
    for m in range(1, M):
        out[m] = substitute(out[m - 1], reduced[3 + m], knots[m])
    return out


def apply_continuity_substitutions(coeffs: np.ndarray, knots: np.ndarray) -> np.ndarray:
    """Reduced vector of a line given its segment coefficients.

    Only the first segment and the later cubic coefficients are kept; for
    coefficients that already satisfy continuity, ``expand`` inverts this.
    """
    coeffs = np.asarray(coeffs, dtype=float).reshape(-1, 4)
    if len(knots) != len(coeffs) + 1:
        raise ValueError("knot vector does not match segment count")
    return np.concatenate([coeffs[0], coeffs[1:, 3]])


def reduced_dim(n_segments: int) -> int:
    return n_segments + 3


def parallel_constraint_points(knots_a: np.ndarray, knots_b: np.ndarray) -> np.ndarray:
    """Slope-equality evaluation points for a parallel pair: the shared
    knots plus the midpoint of the first segment (``M + 2`` points)."""
    shared = knots_a if len(knots_a) <= len(knots_b) else knots_b
    mid = 0.5 * (shared[0] + shared[1])
    return np.concatenate([shared[:1], [mid], shared[1:]])


# -- residuals -----------------------------------------------------------------

def _eval_rows(knots: np.ndarray, E: np.ndarray, x: np.ndarray):
    seg = np.clip(np.searchsorted(knots, x, side="right") - 1, 0, len(knots) - 2)
    Em = E[seg]
    J0 = np.einsum("ki,kij->kj", poly_basis(x, 0), Em)
    J1 = np.einsum("ki,kij->kj", poly_basis(x, 1), Em)
    return J0, J1, seg


def residual_and_jacobian(feature: Feature, reduced: np.ndarray, knots: np.ndarray):
    """Error ``(f(x) - y, f'(x) - tan(theta))``, its 2 x (M+3) Jacobian with
    respect to the reduced parameters, and the 2x2 information matrix."""
    var_y, var_t = feature.cov[1, 1], feature.cov[2, 2]
    if var_y <= 0 or var_t <= 0:
        raise ValueError("feature variances must be positive")
    knots = np.asarray(knots, float)
    E = expansion_matrices(knots)
    J0, J1, _ = _eval_rows(knots, E, np.array([feature.x]))
    J = np.vstack([J0, J1])
    slope = math.tan(feature.theta)
    e = J @ reduced - np.array([feature.y, slope])
    omega = np.diag([1.0 / var_y, 1.0 / (var_t * (1.0 + slope * slope) ** 2)])
    return e, J, omega


# -- problem assembly ------------------------------------------------------------

@dataclass
class FitProblem:
    """Linearized system at ``params``. ``K``/``g`` hold the parallelism rows;
    the update solves ``[[H, -K^T], [-K, 0]] [d; lam] = [-b; g]``."""

    params: np.ndarray
    H: np.ndarray
    b: np.ndarray
    K: np.ndarray
    g: np.ndarray
    cost: float
    index_map: dict = field(default_factory=dict)
    line_slices: dict = field(default_factory=dict)
    knots: dict = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return len(self.params)


@dataclass
class FitReport:
    iterations: int = 0
    final_cost: float = 0.0
    converged: bool = False
    constraint_violation: float = 0.0
    posterior_H: Optional[np.ndarray] = None
    cost_history: list = field(default_factory=list)
    excluded_lines: list = field(default_factory=list)
    failed: bool = False


class _LineTerms:
    """Constant pieces of one line's least-squares terms (the residuals are
    linear in the reduced parameters)."""

    def __init__(self, line: Line, knots: np.ndarray, feats, prior_terms):
        self.knots = knots
        self.E = expansion_matrices(knots)
        x, y, slope, wy, ws = feats
        rows, targets, weights = [], [], []
        if len(x):
            J0, J1, _ = _eval_rows(knots, self.E, x)
            rows += [J0, J1]
            targets += [y, slope]
            weights += [wy, ws]
        if prior_terms is not None:
            px, py, pslope, pomega = prior_terms
            J0, J1, _ = _eval_rows(knots, self.E, px)
            # prior terms carry full 2x2 information; whiten them
            L = np.linalg.cholesky(pomega)  # omega = L L^T
            A0 = L[:, 0, 0][:, None] * J0 + L[:, 1, 0][:, None] * J1
            A1 = L[:, 1, 1][:, None] * J1
            t0 = L[:, 0, 0] * py + L[:, 1, 0] * pslope
            t1 = L[:, 1, 1] * pslope
            rows += [A0, A1]
            targets += [t0, t1]
            weights += [np.ones_like(t0), np.ones_like(t1)]
        dim = len(knots) + 2
        self.A = np.vstack(rows) if rows else np.zeros((0, dim))
        self.t = np.concatenate(targets) if targets else np.zeros(0)
        self.w = np.concatenate(weights) if weights else np.zeros(0)
        H = self.A.T @ (self.A * self.w[:, None])
        self.H = 0.5 * (H + H.T)

    def residual(self, p: np.ndarray) -> np.ndarray:
        return self.A @ p - self.t

    def cost(self, p: np.ndarray) -> float:
        r = self.residual(p)
        return float(np.dot(r * self.w, r))

    def gradient(self, p: np.ndarray) -> np.ndarray:
        return self.A.T @ (self.w * self.residual(p))


def prior_information(prior: ControlPointPrior, cfg: FitConfig) -> np.ndarray:
    """Information matrices (k, 2, 2) of the predicted control points.

    The previous posterior covariance is pushed through the line evaluation
    and the frame change, then widened by per-frame odometry noise.
    """
    info = prior.info
    d = np.sqrt(np.clip(np.diag(info), 1e-300, None))
    scaled = info / np.outer(d, d)
    cov_p = np.linalg.inv(scaled + 1e-9 * np.eye(len(d))) / np.outer(d, d)
    G = np.einsum("kij,kjl->kil", prior.transform_jac, prior.eval_jac)
    cov = np.einsum("kij,jl,kml->kim", G, cov_p, G)
    slope = np.tan(prior.points[:, 2])
    cov[:, 0, 0] += cfg.odo_sigma_y ** 2
    cov[:, 1, 1] += (cfg.odo_sigma_theta * (1.0 + slope * slope)) ** 2
    cov = 0.5 * (cov + np.swapaxes(cov, 1, 2))
    return np.linalg.inv(cov)


def _feature_terms(features, idx):
    x, y, theta, cov = features
    slope = np.tan(theta[idx])
    var_y = cov[idx, 1, 1]
    var_s = cov[idx, 2, 2] * (1.0 + slope * slope) ** 2
    if np.any(var_y <= 0) or np.any(var_s <= 0):
        raise ValueError("feature variances must be positive")
    return x[idx], y[idx], slope, 1.0 / var_y, 1.0 / var_s


def _prior_terms(line: Line, knots: np.ndarray, cfg: FitConfig):
    prior = line.prior
    if prior is None or len(prior.points) == 0:
        return None
    px = prior.points[:, 0]
    keep = (px >= knots[0] - cfg.prior_margin) & (px <= knots[-1] + cfg.prior_margin)
    if not np.any(keep):
        return None
    sub = ControlPointPrior(prior.points[keep], prior.eval_jac[keep],
                            prior.transform_jac[keep], prior.info)
    omega = prior_information(sub, cfg)
    return sub.points[:, 0], sub.points[:, 1], np.tan(sub.points[:, 2]), omega


def project_onto_knots(line: Line, knots: np.ndarray) -> np.ndarray:
    """Reduced parameters over ``knots`` closest (in value and slope) to the
    line's current shape."""
    knots = np.asarray(knots, float)
    xs = np.concatenate([np.linspace(a, b, 5) for a, b in zip(knots[:-1], knots[1:])])
    E = expansion_matrices(knots)
    J0, J1, _ = _eval_rows(knots, E, xs)
    A = np.vstack([J0, J1])
    t = np.concatenate([line(xs, 0), line(xs, 1)])
    scale = np.linalg.norm(A, axis=0)
    scale[scale == 0] = 1.0
    sol = np.linalg.lstsq(A / scale, t, rcond=None)[0]
    return sol / scale


def _initial_guess(line: Line) -> np.ndarray:
    p = apply_continuity_substitutions(line.coeffs, line.knots)
    if np.allclose(expand(p, line.knots), line.coeffs, rtol=1e-9, atol=1e-12):
        return p
    return project_onto_knots(line, line.knots)


def assigned_features(corr, n_lines: int) -> list[np.ndarray]:
    buckets = [[] for _ in range(n_lines)]
    for fi, li, _ in corr.pairs:
        buckets[li].append(fi)
    return [np.array(sorted(b), dtype=int) for b in buckets]


class _Assembly:
    """Holds everything that stays fixed across Gauss-Newton iterations."""

    def __init__(self, model: LaneModel, corr, features, cfg: FitConfig):
        arrays = stack_features(features) if not isinstance(features, tuple) else features
        buckets = assigned_features(corr, model.n_lines)
        self.model = model
        self.active: list[int] = []
        self.excluded: list[int] = []
        self.terms: dict[int, _LineTerms] = {}
        self.slices: dict[int, slice] = {}
        start = 0
        for n, line in enumerate(model.lines):
            knots = line.knots
            M = len(knots) - 1
            prior = _prior_terms(line, knots, cfg)
            if len(buckets[n]) < 4 + (M - 1) and prior is None:
                self.excluded.append(n)
                continue
            self.terms[n] = _LineTerms(line, knots, _feature_terms(arrays, buckets[n]), prior)
            self.slices[n] = slice(start, start + M + 3)
            start += M + 3
            self.active.append(n)
        self.dim = start
        self.H = np.zeros((start, start))
        for n in self.active:
            s = self.slices[n]
            self.H[s, s] = self.terms[n].H
        self.K = self._constraint_matrix()
        self.index_map = {}
        for n in self.active:
            s = self.slices[n]
            for j in range(4):
                self.index_map[(n, 0, j)] = s.start + j
            for m in range(1, model.lines[n].n_segments):
                self.index_map[(n, m, 3)] = s.start + 3 + m

    def _constraint_matrix(self) -> np.ndarray:
        rows = []
        active = set(self.active)
        for group in self.model.parallel_groups:
            members = [n for n in group if n in active]
            for a, b in zip(members[:-1], members[1:]):
                ta, tb = self.terms[a], self.terms[b]
                pts = parallel_constraint_points(ta.knots, tb.knots)
                _, Ja, _ = _eval_rows(ta.knots, ta.E, pts)
                _, Jb, _ = _eval_rows(tb.knots, tb.E, pts)
                block = np.zeros((len(pts), self.dim))
                block[:, self.slices[a]] = Ja
                block[:, self.slices[b]] -= Jb
                rows.append(block)
        return np.vstack(rows) if rows else np.zeros((0, self.dim))

    def problem(self, p: np.ndarray) -> FitProblem:
        b = np.zeros(self.dim)
        cost = 0.0
        for n in self.active:
            s = self.slices[n]
            b[s] = self.terms[n].gradient(p[s])
            cost += self.terms[n].cost(p[s])
        return FitProblem(params=p.copy(), H=self.H.copy(), b=b, K=self.K.copy(),
                          g=self.K @ p, cost=cost, index_map=dict(self.index_map),
                          line_slices=dict(self.slices),
                          knots={n: self.terms[n].knots for n in self.active})

    def cost(self, p: np.ndarray) -> float:
        return sum(self.terms[n].cost(p[self.slices[n]]) for n in self.active)


def build_problem(model: LaneModel, corr, features: Sequence[Feature],
                  cfg: FitConfig | None = None, params: Optional[np.ndarray] = None) -> FitProblem:
    """Assemble ``H``, ``b``, ``K`` and ``g`` for the lines that pass the
    identifiability guard (enough features, or a time-filter prior).

    ``params`` defaults to each line's current shape projected onto its knots.
    """
    cfg = cfg or FitConfig()
    asm = _Assembly(model, corr, features, cfg)
    if params is None:
        params = _initial_params(asm)
    return asm.problem(params)


def _initial_params(asm: _Assembly) -> np.ndarray:
    p = np.zeros(asm.dim)
    for n in asm.active:
        line = asm.model.lines[n]
        p[asm.slices[n]] = _initial_guess(line)
    return p


def solve_constrained(problem: FitProblem, cfg: FitConfig | None = None,
                      damping: float = 0.0):
    """Solve the KKT system for the step and multipliers.

    Columns are equilibrated before solving. If the system is singular or its
    condition estimate exceeds ``cfg.cond_max``, Levenberg damping is added to
    ``H`` starting at ``damping_init`` and growing tenfold up to
    ``damping_max``. Returns ``(step, lam, damping_used)``.
    """
    cfg = cfg or FitConfig()
    H, b, K, g = problem.H, problem.b, problem.K, problem.g
    n, k = len(b), len(g)
    if n == 0:
        return np.zeros(0), np.zeros(k), 0.0
    d = np.sqrt(np.diag(H))
    d[d <= 0] = 1.0
    Hs = H / np.outer(d, d)
    Ks = K / d[None, :]
    bs = b / d
    mu = damping
    while True:
        kkt = np.zeros((n + k, n + k))
        kkt[:n, :n] = Hs + mu * np.eye(n)
        kkt[:n, n:] = -Ks.T
        kkt[n:, :n] = -Ks
        rhs = np.concatenate([-bs, g])
        try:
            cond = np.linalg.cond(kkt)
            if not np.isfinite(cond) or cond > cfg.cond_max:
                raise np.linalg.LinAlgError(f"condition estimate {cond:.3g}")
            sol = np.linalg.solve(kkt, rhs)
            return sol[:n] / d, sol[n:], mu
        except np.linalg.LinAlgError:
            mu = cfg.damping_init if mu == 0.0 else mu * 10.0
            if mu > cfg.damping_max * (1 + 1e-9):
                raise FitFailure("KKT system singular at maximum damping") from None


def fit(model: LaneModel, corr, features: Sequence[Feature],
        cfg: FitConfig | None = None) -> tuple[LaneModel, FitReport]:
    """Iterate build/solve/update until the step vanishes.

    Each line's time-filter prior is read from ``line.prior``. Steps that
    raise the cost are rejected and damping increased, except for steps that
    restore feasibility of the parallelism rows. Lines failing the
    identifiability guard keep their current shape.
    """
    cfg = cfg or FitConfig()
    asm = _Assembly(model, corr, features, cfg)
    report = FitReport(excluded_lines=list(asm.excluded))
    out = model.copy()
    for n in asm.excluded:
        out.lines[n].info = None
    if asm.dim == 0:
        report.converged = True
        return out, report

    p = _initial_params(asm)
    cost = asm.cost(p)
    viol = float(np.max(np.abs(asm.K @ p))) if len(asm.K) else 0.0
    report.cost_history.append(cost)
    damping = 0.0
    for it in range(cfg.max_iters):
        problem = asm.problem(p)
        try:
            step, _, used = solve_constrained(problem, cfg, damping)
        except FitFailure:
            logger.warning("fit failed: singular system at maximum damping")
            report.failed = True
            break
        report.iterations = it + 1
        trial = p + step
        new_cost = asm.cost(trial)
        new_viol = float(np.max(np.abs(asm.K @ trial))) if len(asm.K) else 0.0
        restores = viol > 1e-9 and new_viol < 0.5 * viol
        if new_cost <= cost * (1 + 1e-12) + 1e-12 or restores:
            p, cost, viol = trial, new_cost, new_viol
            report.cost_history.append(cost)
            damping = used / 10.0 if used > cfg.damping_init else 0.0
            if np.max(np.abs(step)) < cfg.step_tol:
                report.converged = True
                break
        else:
            damping = cfg.damping_init if used == 0.0 else used * 10.0
            if damping > cfg.damping_max:
                break

    if report.failed:
        for n in asm.active:
            out.lines[n].info = None
        report.final_cost = cost
        return out, report

    for n in asm.active:
        line = out.lines[n]
        s = asm.slices[n]
        line.coeffs = expand(p[s], line.knots)
        line.info = asm.H[s, s].copy()
    report.final_cost = cost
    report.constraint_violation = viol
    report.posterior_H = asm.H.copy()
    return out, report
