"""Prediction-quality measure over detection score maps.

A state is (scale level, row, col) on a periodic score grid.  The quality
of a candidate state t* is its minimal weighted confidence margin

    xi = min over grid states t != t*  of  (y(t*) - y(t)) / delta(t - t*)

with the distance weighting delta(tau) = 1 - exp(-kappa/2 |tau|^2),
|tau|^2 = dx^2 + dy^2 (image pixels) + scale_weight * (dlog scale)^2.

xi is nonnegative exactly when t* is the global grid maximum.  Two upper
bounds make the measure interpretable: near t* the margin ratio
approaches |lambda_1|/kappa, with lambda_1 the smallest-magnitude
Hessian eigenvalue (sharpness); far away, where delta ~ 1, it approaches
the raw score margin to the best distractor.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import grid
from .errors import ConfigError, InvalidInputError, NotAPeakError, ShapeError

DELTA_FLOOR = 1e-15
NSD_TOLERANCE = 1e-9
FAR_DELTA = 0.99

State = tuple[int, int, int]


@dataclass(frozen=True)
class ScoreMap:
    """Detection scores over translation cells at one or more scales.

    levels: one (H, W) grid per scale level, identical shapes.
    cell_size: image pixels per cell at the centre level; level l covers
    cell_size * scale_step**(l - center_level) pixels per cell.
    """

    levels: tuple
    cell_size: float
    scale_step: float = 1.0
    center_level: int = 0

    def __post_init__(self):
        if len(self.levels) == 0:
            raise ShapeError("score map needs at least one level")
        shape = self.levels[0].shape
        for lv in self.levels:
            if lv.ndim != 2 or lv.shape != shape:
                raise ShapeError("all score levels must share one 2-D shape")
        if not self.cell_size > 0:
            raise ConfigError(f"cell_size must be positive, got {self.cell_size}")
        if len(self.levels) > 1 and not self.scale_step > 1.0:
            raise ConfigError("scale_step must exceed 1 for multi-level maps")
        if not 0 <= self.center_level < len(self.levels):
            raise ConfigError(f"center_level {self.center_level} out of range")

    @classmethod
    def single(cls, values: np.ndarray, cell_size: float) -> "ScoreMap":
        return cls((np.asarray(values, dtype=np.float64),), cell_size)

    @property
    def grid_shape(self) -> tuple[int, int]:
        return self.levels[0].shape

    @property
    def state_count(self) -> int:
        h, w = self.grid_shape
        return len(self.levels) * h * w

    def stacked(self) -> np.ndarray:
        return np.stack(self.levels)

    def level_cell(self, level: int) -> float:
        return self.cell_size * self.scale_step ** (level - self.center_level)

    def check_state(self, state: State) -> State:
        level, i, j = state
        h, w = self.grid_shape
        if not (0 <= level < len(self.levels) and 0 <= i < h and 0 <= j < w):
            raise InvalidInputError(f"state {state} is off the score grid")
        return (int(level), int(i), int(j))

    def value(self, state: State) -> float:
        level, i, j = self.check_state(state)
        return float(self.levels[level][i, j])

    def argmax_state(self) -> State:
        stack = self.stacked()
        level, i, j = np.unravel_index(int(stack.argmax()), stack.shape)
        return (int(level), int(i), int(j))

    def position_pixels(self, state: State) -> tuple[float, float]:
        "Image-plane offset (dy, dx) of a state from the grid origin."
        level, i, j = self.check_state(state)
        h, w = self.grid_shape
        cell = self.level_cell(level)
        return (float(grid.signed_index(i, h)) * cell,
                float(grid.signed_index(j, w)) * cell)


@dataclass(frozen=True)
class StateDistance:
    """Parameters of the distance weighting delta."""

    kappa: float
    scale_weight: float = 0.0

    def __post_init__(self):
        if not self.kappa > 0:
            raise ConfigError(f"kappa must be positive, got {self.kappa}")
        if self.scale_weight < 0:
            raise ConfigError(
                f"scale_weight must be nonnegative, got {self.scale_weight}")

    def delta(self, tau_sq) -> np.ndarray:
        "Distance weight from squared state displacement."
        return -np.expm1(-0.5 * self.kappa * np.asarray(tau_sq, dtype=np.float64))

    def tau_sq_stack(self, smap: ScoreMap, t_star: State) -> np.ndarray:
        """Squared displacement of every grid state from t*, as (S, H, W).

        Within t*'s own level the translation difference is periodic
        (signed index difference), matching the cyclic correlation that
        produced the scores.  Across levels the grids have different
        periods, so the centred-representative positions are differenced
        directly instead.
        """
        level_s, i_s, j_s = smap.check_state(t_star)
        h, w = smap.grid_shape
        rows = np.arange(h)
        cols = np.arange(w)
        cell_s = smap.level_cell(level_s)
        y_star = float(grid.signed_index(i_s, h)) * cell_s
        x_star = float(grid.signed_index(j_s, w)) * cell_s
        log_step = np.log(smap.scale_step) if len(smap.levels) > 1 else 0.0
        out = np.empty((len(smap.levels), h, w))
        for level in range(len(smap.levels)):
            cell = smap.level_cell(level)
            if level == level_s:
                dy = grid.signed_index(rows - i_s, h) * cell
                dx = grid.signed_index(cols - j_s, w) * cell
            else:
                dy = grid.signed_index(rows, h) * cell - y_star
                dx = grid.signed_index(cols, w) * cell - x_star
            dlog = (level - level_s) * log_step
            out[level] = (dy[:, None] ** 2 + dx[None, :] ** 2
                          + self.scale_weight * dlog ** 2)
        return out

    def delta_stack(self, smap: ScoreMap, t_star: State) -> np.ndarray:
        return self.delta(self.tau_sq_stack(smap, t_star))


def margin_ratios(smap: ScoreMap, t_star: State, dist: StateDistance) -> np.ndarray:
    """(y(t*) - y(t)) / delta(t - t*) for every state; +inf at t* itself."""
    t_star = smap.check_state(t_star)
    numerators = smap.value(t_star) - smap.stacked()
    denominators = np.maximum(dist.delta_stack(smap, t_star), DELTA_FLOOR)
    ratios = numerators / denominators
    ratios[t_star] = np.inf
    return ratios


def quality(smap: ScoreMap, t_star: State, dist: StateDistance) -> float:
    """Minimal weighted confidence margin of t* over the whole grid."""
    if smap.state_count < 2:
        raise InvalidInputError("quality needs at least two grid states")
    return float(np.min(margin_ratios(smap, t_star, dist)))


def _finite_difference_hessian(values: np.ndarray, i: int, j: int,
                               cell: float) -> np.ndarray:
    "Central second differences at (i, j), periodic, image-pixel units."
    h, w = values.shape
    up, down = (i - 1) % h, (i + 1) % h
    left, right = (j - 1) % w, (j + 1) % w
    c = values[i, j]
    d_rr = (values[up, j] + values[down, j] - 2.0 * c) / cell ** 2
    d_cc = (values[i, left] + values[i, right] - 2.0 * c) / cell ** 2
    d_rc = (values[down, right] - values[down, left]
            - values[up, right] + values[up, left]) / (4.0 * cell ** 2)
    return np.array([[d_rr, d_rc], [d_rc, d_cc]])


def curvature_bound(smap: ScoreMap, t_star: State, dist: StateDistance) -> float:
    """Sharpness bound |lambda_1|/kappa from the translation Hessian at t*.

    t* must be an (8-neighbourhood, non-strict) local maximum of its
    level with a negative-semidefinite finite-difference Hessian.
    """
    level, i, j = smap.check_state(t_star)
    values = smap.levels[level]
    h, w = values.shape
    if h < 3 or w < 3:
        raise InvalidInputError("curvature needs at least a 3x3 grid")
    centre = values[i, j]
    for di in (-1, 0, 1):
        for dj in (-1, 0, 1):
            if (di, dj) != (0, 0) and values[(i + di) % h, (j + dj) % w] > centre:
                raise NotAPeakError(
                    f"state {t_star} is below its neighbour at offset ({di}, {dj})")
    hess = _finite_difference_hessian(values, i, j, smap.level_cell(level))
    trace = hess[0, 0] + hess[1, 1]
    split = np.hypot(hess[0, 0] - hess[1, 1], 2.0 * hess[0, 1])
    lam_low = 0.5 * (trace - split)
    lam_high = 0.5 * (trace + split)
    tol = NSD_TOLERANCE * max(1.0, abs(lam_low))
    if lam_high > tol:
        raise NotAPeakError(
            f"Hessian at {t_star} has positive eigenvalue {lam_high}")
    # both eigenvalues <= 0 (within tol); the bound uses the one closest
    # to zero, i.e. the direction of least curvature
    lam1 = min(abs(lam_low), abs(lam_high))
    return lam1 / dist.kappa


@dataclass(frozen=True)
class FarMarginReport:
    margin: float          # min over far states of y(t*) - y(t)
    bound: float           # margin / 0.99
    quality: float
    radius_valid: bool     # delta >= 0.99 everywhere outside the radius
    satisfied: bool        # quality <= bound
    far_state_count: int


def far_margin_check(smap: ScoreMap, t_star: State, dist: StateDistance,
                     radius: float) -> FarMarginReport:
    """Distractor-margin bound: xi can never beat the raw score margin
    to states far enough away that delta is saturated."""
    t_star = smap.check_state(t_star)
    tau_sq = dist.tau_sq_stack(smap, t_star)
    far = tau_sq >= radius ** 2
    if not np.any(far):
        raise InvalidInputError(
            f"no grid states lie outside radius {radius}")
    deltas = dist.delta(tau_sq[far])
    radius_valid = bool(deltas.min() >= FAR_DELTA)
    margin = float(np.min(smap.value(t_star) - smap.stacked()[far]))
    # ratio = margin / delta with delta in [FAR_DELTA, 1): dividing a
    # negative margin by FAR_DELTA would tighten instead of bound
    bound = margin / FAR_DELTA if margin >= 0 else margin
    xi = quality(smap, t_star, dist)
    return FarMarginReport(margin, bound, xi, radius_valid,
                           bool(xi <= bound + 1e-12), int(np.sum(far)))
