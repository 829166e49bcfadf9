"""Adaptive fusion of two score maps.

The fused score is y_beta = beta_d * y_d + beta_s * y_s with
beta_d + beta_s = 1, beta >= 0.  For a candidate state t*, the weights
are chosen by maximizing the confidence margin xi of the fused map while
penalizing lopsided weights:

    minimize   -xi + mu * (beta_d^2 + beta_s^2)
    subject to y_beta(t*) - xi * delta(t* - t) >= y_beta(t)   for all t

Eliminating beta_s = 1 - beta_d, the largest feasible slack for a given
beta is xi(beta) = min_t [beta * g_d(t) + (1-beta) * g_s(t)] where
g_m(t) = (y_m(t*) - y_m(t)) / delta(t - t*): a minimum of affine
functions, hence concave and piecewise linear.  The loss
L(beta) = -xi(beta) + mu * (2 beta^2 - 2 beta + 1) is therefore convex
on [0, 1] and is minimized exactly by locating the point where the
target slope 2 mu - 4 mu beta enters the subdifferential of -xi:
bisection on the slope condition, with a closed-form jump once the
active linear piece is identified.  Identical maps make every slope
zero, so the very first probe at beta = 0.5 is accepted exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import grid
from .errors import ConfigError, ShapeError
from .quality import DELTA_FLOOR, ScoreMap, State, StateDistance

MAX_CANDIDATES_PER_SOURCE = 5
KKT_SLOPE_TOL = 1e-12
MAX_SOLVE_ITERATIONS = 120


@dataclass(frozen=True)
class Candidate:
    state: State
    source: str          # "deep" or "shallow"
    value: float
    degenerate: bool = False   # constant-map fallback, not a real maximum


@dataclass(frozen=True)
class CandidateSet:
    candidates: tuple
    nms_radius: float

    def __iter__(self):
        return iter(self.candidates)

    def __len__(self):
        return len(self.candidates)


@dataclass(frozen=True)
class FusionResult:
    t_star: State
    beta_d: float
    beta_s: float
    xi: float
    loss: float
    source: str = ""
    degenerate: bool = False


def _check_same_geometry(y_d: ScoreMap, y_s: ScoreMap) -> None:
    if (len(y_d.levels) != len(y_s.levels)
            or y_d.grid_shape != y_s.grid_shape
            or y_d.cell_size != y_s.cell_size
            or y_d.scale_step != y_s.scale_step
            or y_d.center_level != y_s.center_level):
        raise ShapeError("score maps must share grid geometry for fusion")


def _local_maxima(values: np.ndarray) -> np.ndarray:
    "Boolean mask of strict 8-neighbourhood local maxima, periodic."
    mask = np.ones_like(values, dtype=bool)
    for di in (-1, 0, 1):
        for dj in (-1, 0, 1):
            if (di, dj) == (0, 0):
                continue
            mask &= values > np.roll(values, (di, dj), axis=(0, 1))
    return mask


def xy_distance(smap: ScoreMap, a: State, b: State) -> float:
    "Image-plane distance between two states (translation part only)."
    la, ia, ja = a
    lb, ib, jb = b
    h, w = smap.grid_shape
    if la == lb:
        cell = smap.level_cell(la)
        dy = float(grid.signed_index(ia - ib, h)) * cell
        dx = float(grid.signed_index(ja - jb, w)) * cell
    else:
        ca, cb = smap.level_cell(la), smap.level_cell(lb)
        dy = float(grid.signed_index(ia, h)) * ca - float(grid.signed_index(ib, h)) * cb
        dx = float(grid.signed_index(ja, w)) * ca - float(grid.signed_index(jb, w)) * cb
    return float(np.hypot(dy, dx))


def _source_candidates(smap: ScoreMap, source: str, nms_radius: float,
                       max_count: int) -> list[Candidate]:
    found = []
    for level, values in enumerate(smap.levels):
        mask = _local_maxima(values)
        for i, j in zip(*np.nonzero(mask)):
            found.append(Candidate((level, int(i), int(j)), source,
                                   float(values[i, j])))
    if not found:
        # constant or plateau map: fall back to the no-displacement state
        centre = (smap.center_level, 0, 0)
        return [Candidate(centre, source, smap.value(centre), degenerate=True)]
    found.sort(key=lambda c: (-c.value, c.state))
    kept: list[Candidate] = []
    for cand in found:
        if len(kept) == max_count:
            break
        if all(xy_distance(smap, cand.state, k.state) >= nms_radius
               for k in kept):
            kept.append(cand)
    return kept


def extract_candidates(y_d: ScoreMap, y_s: ScoreMap, nms_radius: float,
                       max_per_source: int = MAX_CANDIDATES_PER_SOURCE) -> CandidateSet:
    """Top local maxima of both maps after per-source NMS and
    cross-source deduplication (the deep candidate wins a collision)."""
    _check_same_geometry(y_d, y_s)
    if nms_radius < 0:
        raise ConfigError(f"nms_radius must be nonnegative, got {nms_radius}")
    if max_per_source < 1:
        raise ConfigError(f"max_per_source must be >= 1, got {max_per_source}")
    deep = _source_candidates(y_d, "deep", nms_radius, max_per_source)
    shallow = _source_candidates(y_s, "shallow", nms_radius, max_per_source)
    merged = list(deep)
    for cand in shallow:
        if all(xy_distance(y_s, cand.state, k.state) >= nms_radius
               for k in deep):
            merged.append(cand)
    return CandidateSet(tuple(merged), nms_radius)


def _margin_lines(t_star: State, y_d: ScoreMap, y_s: ScoreMap,
                  dist: StateDistance) -> tuple[np.ndarray, np.ndarray]:
    """Per-state affine pieces of xi(beta) = min(a * beta + b).

    a(t) = g_d(t) - g_s(t), b(t) = g_s(t); the t* entry is removed.
    """
    t_star = y_d.check_state(t_star)
    deltas = np.maximum(dist.delta_stack(y_d, t_star), DELTA_FLOOR)
    g_d = (y_d.value(t_star) - y_d.stacked()) / deltas
    g_s = (y_s.value(t_star) - y_s.stacked()) / deltas
    keep = np.ones(g_d.shape, dtype=bool)
    keep[t_star] = False
    g_d = g_d[keep]
    g_s = g_s[keep]
    return g_d - g_s, g_s


def _penalty(beta: float, mu: float) -> float:
    return mu * (beta * beta + (1.0 - beta) * (1.0 - beta))


def evaluate_weights(t_star: State, y_d: ScoreMap, y_s: ScoreMap,
                     dist: StateDistance, mu: float,
                     beta_d: float) -> FusionResult:
    "Slack and loss for a fixed weight split (no optimization)."
    _check_same_geometry(y_d, y_s)
    if not 0.0 <= beta_d <= 1.0:
        raise ConfigError(f"beta_d must lie in [0, 1], got {beta_d}")
    a, b = _margin_lines(t_star, y_d, y_s, dist)
    xi = float(np.min(a * beta_d + b))
    return FusionResult(y_d.check_state(t_star), beta_d, 1.0 - beta_d,
                        xi, -xi + _penalty(beta_d, mu))


def solve_fusion_qp(t_star: State, y_d: ScoreMap, y_s: ScoreMap,
                    dist: StateDistance, mu: float) -> FusionResult:
    """Exact minimization of L(beta) = -xi(beta) + mu*(beta^2+(1-beta)^2)."""
    _check_same_geometry(y_d, y_s)
    if mu < 0:
        raise ConfigError(f"mu must be nonnegative, got {mu}")
    t_star = y_d.check_state(t_star)
    a, b = _margin_lines(t_star, y_d, y_s, dist)

    def probe(beta: float):
        "xi, and the subdifferential slope range of xi, at beta."
        vals = a * beta + b
        xi = float(vals.min())
        tol = KKT_SLOPE_TOL * max(1.0, abs(xi))
        active = a[vals <= xi + tol]
        return xi, float(active.min()), float(active.max())

    def result(beta: float, xi: float) -> FusionResult:
        return FusionResult(t_star, beta, 1.0 - beta, xi,
                            -xi + _penalty(beta, mu))

    # One-sided derivatives of the loss: with [s_lo, s_hi] the slope
    # range of xi's active pieces at beta,
    #   L'(beta+) = -s_lo + (4 mu beta - 2 mu)
    #   L'(beta-) = -s_hi + (4 mu beta - 2 mu)
    # so beta is optimal when s_lo <= 4 mu beta - 2 mu <= s_hi, with the
    # inapplicable side dropped at the domain endpoints.
    def classify(beta, s_lo, s_hi):
        target = 4.0 * mu * beta - 2.0 * mu
        better_right = s_lo > target + KKT_SLOPE_TOL and beta < 1.0
        better_left = s_hi < target - KKT_SLOPE_TOL and beta > 0.0
        return better_left, better_right

    best: FusionResult | None = None

    def visit(beta):
        nonlocal best
        xi, s_lo, s_hi = probe(beta)
        cand = result(beta, xi)
        if best is None or cand.loss < best.loss:
            best = cand
        return cand, classify(beta, s_lo, s_hi), s_lo, s_hi

    for edge in (0.0, 1.0):
        cand, (left, right), _, _ = visit(edge)
        if not (left or right):
            return cand

    lo, hi = 0.0, 1.0
    beta = 0.5
    for _ in range(MAX_SOLVE_ITERATIONS):
        cand, (left, right), s_lo, s_hi = visit(beta)
        if not (left or right):
            return cand
        if right:
            lo = beta
        else:
            hi = beta
        # closed-form jump: where a single piece is active, its
        # stationary point is the only interior candidate on it
        nxt = None
        if mu > 0 and s_lo == s_hi:
            stationary = (2.0 * mu + s_lo) / (4.0 * mu)
            if lo < stationary < hi:
                nxt = stationary
        if nxt is None:
            nxt = 0.5 * (lo + hi)
        if nxt == beta or not lo < nxt < hi:
            break          # bracket collapsed onto a kink
        beta = nxt
    return best


def fuse_and_select(y_d: ScoreMap, y_s: ScoreMap, dist: StateDistance,
                    mu: float, nms_radius: float,
                    max_per_source: int = MAX_CANDIDATES_PER_SOURCE,
                    fixed_beta_d: float | None = None
                    ) -> tuple[FusionResult, list[FusionResult]]:
    """Solve the weight problem at every candidate; keep the lowest loss.

    With fixed_beta_d the weights are pinned and only the slack is
    evaluated per candidate, which is the ablation code path. Ties break
    toward higher slack, then weights closer to even, then grid order of
    the state.
    """
    candidates = extract_candidates(y_d, y_s, nms_radius, max_per_source)
    results = []
    for cand in candidates:
        if fixed_beta_d is None:
            solved = solve_fusion_qp(cand.state, y_d, y_s, dist, mu)
        else:
            solved = evaluate_weights(cand.state, y_d, y_s, dist, mu,
                                      fixed_beta_d)
        results.append(FusionResult(solved.t_star, solved.beta_d,
                                    solved.beta_s, solved.xi, solved.loss,
                                    source=cand.source,
                                    degenerate=cand.degenerate))
    best = min(results, key=lambda r: (r.loss, -r.xi,
                                       abs(r.beta_d - 0.5), r.t_star))
    return best, results
