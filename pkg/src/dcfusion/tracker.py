"""Frame loop: two correlation-filter models, scale search, fused prediction.

The deep model is trained with wide labels on heavily augmented first-frame
samples; the shallow model with narrow labels on the original sample only.
Each frame both models score a scale pyramid of search patches, the deep
scores are resampled to the shallow grid, and the fused candidate with the
lowest loss becomes the prediction. Both memories take an unaugmented
sample of the predicted state every few frames.

Geometry conventions:
  * image coordinates are continuous pixels, x right, y down
  * a target box (x, y, w, h) has its center at (x + w/2, y + h/2)
  * the square search patch side is search_scale times the target
    diagonal; patches are resampled to a fixed pixel resolution, so the
    target occupies the same fraction of every patch and label widths are
    constant over time
  * score grids live in patch pixels of the center scale level; grid
    index offsets wrap (periodic scores), level offsets do not
"""

import dataclasses
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from . import dcf, features, fusion, grid, training
from .errors import ConfigError, InvalidInputError, ShapeError
from .quality import ScoreMap, StateDistance


@dataclass
class TrackerConfig:
    """Tunables for both models and the search loop.

    Field names double as the keys of the flat key=value config file.
    """

    deep_sigma_factor: float = training.WIDE_SIGMA_FACTOR
    shallow_sigma_factor: float = training.NARROW_SIGMA_FACTOR
    mu: float = 0.15
    kappa_factor: float = 8.0
    search_scale: float = 4.5
    patch_pixels: int = 200
    scale_levels: int = 5
    scale_step: float = 1.02
    scale_distance_factor: float = 1.0
    update_interval: int = 5
    learning_rate: float = 0.01
    max_samples: int = 30
    init_iterations: int = 60
    update_iterations: int = 5
    shallow_cell: int = 4
    deep_stride: int = 10
    deep_octaves: int = 2
    deep_features: str = "proxy"
    nms_radius_factor: float = 0.25
    max_candidates: int = 5
    feature_window: str = "hann"
    subcell_refine: bool = True
    reg_base: float = 1e-2
    reg_edge_factor: float = 10.0
    reg_support: int = 5
    augment_deep: bool = True
    augment_shallow: bool = False
    blur_radii: tuple = (1.0, 2.0, 4.0)
    dropout_draws: int = 2
    dropout_rate: float = training.DROPOUT_RATE
    seed: int = 0

    def validate(self) -> None:
        positive = ("deep_sigma_factor", "shallow_sigma_factor",
                    "kappa_factor", "search_scale", "patch_pixels",
                    "scale_levels", "update_interval", "learning_rate",
                    "max_samples", "shallow_cell", "deep_stride",
                    "scale_distance_factor", "max_candidates",
                    "reg_base", "reg_support")
        for name in positive:
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive, got "
                                  f"{getattr(self, name)}")
        if self.mu < 0:
            raise ConfigError(f"mu must be nonnegative, got {self.mu}")
        if self.scale_levels % 2 == 0:
            raise ConfigError(
                f"scale_levels must be odd, got {self.scale_levels}")
        if self.scale_levels > 1 and self.scale_step <= 1.0:
            raise ConfigError(
                f"scale_step must exceed 1, got {self.scale_step}")
        if self.patch_pixels % self.shallow_cell:
            raise ConfigError("patch_pixels must be a multiple of "
                              f"shallow_cell ({self.shallow_cell})")
        if self.patch_pixels % self.deep_stride:
            raise ConfigError("patch_pixels must be a multiple of "
                              f"deep_stride ({self.deep_stride})")
        if self.init_iterations < 0 or self.update_iterations < 0:
            raise ConfigError("iteration counts must be nonnegative")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError(
                f"dropout_rate must be in [0, 1), got {self.dropout_rate}")
        if self.dropout_draws < 0:
            raise ConfigError("dropout_draws must be nonnegative")
        if self.feature_window not in ("hann", "none"):
            raise ConfigError(
                f"feature_window must be hann or none, got "
                f"{self.feature_window!r}")


@dataclass(frozen=True)
class TargetState:
    "Continuous box state: center in image pixels, size, relative scale."

    center: tuple
    size: tuple
    scale: float = 1.0

    def __post_init__(self):
        if self.size[0] <= 0 or self.size[1] <= 0:
            raise InvalidInputError(f"size must be positive, got {self.size}")
        if self.scale <= 0:
            raise InvalidInputError(
                f"scale must be positive, got {self.scale}")

    @classmethod
    def from_box(cls, box) -> "TargetState":
        x, y, w, h = (float(v) for v in box)
        return cls((x + w / 2.0, y + h / 2.0), (w, h))

    @property
    def box(self) -> tuple:
        cx, cy = self.center
        w, h = self.size
        return (cx - w / 2.0, cy - h / 2.0, w, h)

    @property
    def diagonal(self) -> float:
        return float(np.hypot(self.size[0], self.size[1]))


def parse_mode(mode: str):
    """Map a mode string to a pinned deep weight, or None for adaptive.

    deep and shallow are spelled as pinned weights so every mode runs
    the same selection code path.
    """
    if mode == "adaptive":
        return None
    if mode == "deep":
        return 1.0
    if mode == "shallow":
        return 0.0
    if mode.startswith("fixed:"):
        try:
            beta_s = float(mode[len("fixed:"):])
        except ValueError:
            raise ConfigError(f"bad fixed weight in mode {mode!r}") from None
        if not 0.0 <= beta_s <= 1.0:
            raise ConfigError(f"fixed weight must be in [0, 1], got {beta_s}")
        return 1.0 - beta_s
    raise ConfigError(f"unknown mode {mode!r}")


def state_distance_for(cfg: TrackerConfig, target_patch_px) -> StateDistance:
    """Distance weighting over search states, in center-level patch pixels.

    One scale step counts as a translation of scale_distance_factor times
    the target diagonal times log(scale_step).
    """
    tw, th = target_patch_px
    diag_patch = cfg.patch_pixels / cfg.search_scale
    return StateDistance(
        kappa=cfg.kappa_factor / (tw * th),
        scale_weight=(cfg.scale_distance_factor * diag_patch) ** 2
        if cfg.scale_levels > 1 else 0.0)


def _parabolic_offset(values: np.ndarray, i: int, j: int) -> tuple:
    """Sub-cell peak offset from a 3-point parabola fit per axis.

    Returns (di, dj) in cells, each clamped to half a cell; zero when
    the axis is not locally concave (flat or saddle response).
    """
    h, w = values.shape
    if h < 3 or w < 3:
        return 0.0, 0.0
    center = values[i, j]

    def axis_offset(before, after):
        denom = before - 2.0 * center + after
        if denom >= 0.0:
            return 0.0
        return float(np.clip(0.5 * (before - after) / denom, -0.5, 0.5))

    di = axis_offset(values[(i - 1) % h, j], values[(i + 1) % h, j])
    dj = axis_offset(values[i, (j - 1) % w], values[i, (j + 1) % w])
    return di, dj


def extract_patch(image: np.ndarray, center: tuple, side: float,
                  out_pixels: int) -> np.ndarray:
    """Resample a square window around center to out_pixels per side.

    Bilinear, pixel-center aligned; samples beyond the frame replicate
    the nearest edge pixel.
    """
    if side <= 0:
        raise InvalidInputError(f"patch side must be positive, got {side}")
    image = features.ensure_rgb(np.asarray(image, dtype=np.float64))
    cx, cy = center
    offsets = (np.arange(out_pixels) + 0.5) * (side / out_pixels) - 0.5
    rows = cy - side / 2.0 + offsets
    cols = cx - side / 2.0 + offsets
    rr = np.broadcast_to(rows[:, None], (out_pixels, out_pixels))
    cc = np.broadcast_to(cols[None, :], (out_pixels, out_pixels))
    planes = [ndimage.map_coordinates(image[..., k], [rr, cc], order=1,
                                      mode="nearest")
              for k in range(image.shape[-1])]
    return np.stack(planes, axis=-1)


class _Model:
    "One correlation-filter model: feature provider plus filter bank."

    def __init__(self, provider, sigma_factor, grid_shape, target_cells,
                 cfg: TrackerConfig, name: str):
        self.provider = provider
        self.window = features.feature_window(grid_shape,
                                              cfg.feature_window)
        label = training.gaussian_label(
            grid_shape, training.LabelConfig(sigma_factor, target_cells))
        mask = dcf.bowl_mask(grid_shape, target_cells, cfg.reg_base,
                             cfg.reg_edge_factor)
        support = min(cfg.reg_support, min(grid_shape))
        if support % 2 == 0:
            support -= 1
        self.bank = dcf.FilterBank(label, dcf.reg_taps(mask, support),
                                   learning_rate=cfg.learning_rate,
                                   max_samples=cfg.max_samples,
                                   name=name)

    def window_spectrum(self, channels: np.ndarray) -> np.ndarray:
        return dcf.sample_spectrum(channels * self.window)

    def spectrum(self, patch: np.ndarray, frame_index: int) -> np.ndarray:
        sample = self.provider.extract(patch, frame_index)
        return self.window_spectrum(sample.channels)

    def score(self, patch: np.ndarray, frame_index: int) -> np.ndarray:
        return self.bank.score_map(self.spectrum(patch, frame_index))


class Tracker:
    """Stateful frame-by-frame tracker; single writer, deterministic.

    Construct with the first frame and the initial target state, then
    call process_frame once per subsequent frame.
    """

    def __init__(self, frame: np.ndarray, initial: TargetState,
                 cfg: TrackerConfig | None = None, mode: str = "adaptive"):
        self.cfg = cfg = dataclasses.replace(cfg) if cfg else TrackerConfig()
        cfg.validate()
        self.fixed_beta_d = parse_mode(mode)
        self.mode = mode
        frame = features.ensure_rgb(np.asarray(frame, dtype=np.float64))
        self.frame_shape = frame.shape[:2]
        if initial.diagonal < 2.0:
            raise InvalidInputError(
                f"initial box degenerate: size {initial.size}")
        self._check_inside(initial, frame.shape)

        self.base_size = (initial.size[0] / initial.scale,
                          initial.size[1] / initial.scale)
        self.state = initial
        self.frame_count = 0
        self.rng_dropout = np.random.default_rng(
            np.random.SeedSequence(cfg.seed).spawn(1)[0])

        p = cfg.patch_pixels
        # the target covers a fixed fraction of every search patch
        diag_patch = p / cfg.search_scale
        w, h = initial.size
        self.target_patch_px = (w / initial.diagonal * diag_patch,
                                h / initial.diagonal * diag_patch)
        tw, th = self.target_patch_px
        self.dist = state_distance_for(cfg, self.target_patch_px)
        self.nms_radius = cfg.nms_radius_factor * diag_patch

        shallow_grid = (p // cfg.shallow_cell, p // cfg.shallow_cell)
        deep_grid = (p // cfg.deep_stride, p // cfg.deep_stride)
        self.deep = _Model(
            features.make_deep_provider(cfg.deep_features, cfg.deep_stride,
                                        cfg.deep_octaves),
            cfg.deep_sigma_factor, deep_grid,
            (th / cfg.deep_stride, tw / cfg.deep_stride), cfg, "deep")
        self.shallow = _Model(
            features.ShallowProvider(cfg.shallow_cell),
            cfg.shallow_sigma_factor, shallow_grid,
            (th / cfg.shallow_cell, tw / cfg.shallow_cell), cfg, "shallow")

        patch = self._patch_at(frame, initial, level=0)
        self.deep.bank.set_initial_samples(
            self._augmented_spectra(self.deep, patch, cfg.augment_deep,
                                    cfg.deep_stride))
        self.shallow.bank.set_initial_samples(
            self._augmented_spectra(self.shallow, patch, cfg.augment_shallow,
                                    cfg.shallow_cell))
        self.deep.bank.train(cfg.init_iterations)
        self.shallow.bank.train(cfg.init_iterations)

    # -- geometry ---------------------------------------------------------

    def _check_inside(self, state: TargetState, shape) -> None:
        x, y, w, h = state.box
        if (x + w <= 0 or y + h <= 0 or x >= shape[1] or y >= shape[0]):
            raise InvalidInputError(
                f"initial box {state.box} outside frame {shape[:2]}")

    def _side(self, state: TargetState, level: int) -> float:
        c = self.cfg.scale_levels // 2
        return (self.cfg.search_scale * state.diagonal
                * self.cfg.scale_step ** (level - c))

    def _patch_at(self, frame, state, level) -> np.ndarray:
        return extract_patch(frame, state.center, self._side(state, level),
                             self.cfg.patch_pixels)

    # -- first-frame training set ------------------------------------------

    def _augmented_spectra(self, model: _Model, patch: np.ndarray,
                           augment: bool, stride: int) -> list:
        def spec(p):
            return model.spectrum(p, self.frame_count)

        out = [spec(patch)]
        if not augment:
            return out
        out.append(spec(training.flip_patch(patch)))
        for angle in training.rotation_angles():
            out.append(spec(training.rotate_patch(patch, angle)))
        half = stride // 2
        for di in (-half, half):
            for dj in (-half, half):
                shifted = training.shift_patch(patch, di, dj)
                sample = model.provider.extract(shifted, self.frame_count)
                aligned = training.shift_back(sample.channels, di, dj,
                                              stride)
                out.append(model.window_spectrum(aligned))
        for radius in self.cfg.blur_radii:
            out.append(spec(training.blur_patch(patch, radius)))
        base = model.provider.extract(patch, self.frame_count)
        for _ in range(self.cfg.dropout_draws):
            dropped, _ = training.channel_dropout(
                base.channels, self.rng_dropout, self.cfg.dropout_rate)
            out.append(model.window_spectrum(dropped))
        return out

    # -- per-frame loop ----------------------------------------------------

    def _score_maps(self, frame, frame_index) -> tuple:
        cfg = self.cfg
        gh = cfg.patch_pixels // cfg.shallow_cell
        deep_levels = []
        shallow_levels = []
        for level in range(cfg.scale_levels):
            patch = self._patch_at(frame, self.state, level)
            raw = self.deep.score(patch, frame_index)
            deep_levels.append(grid_resample(raw, gh, gh))
            shallow_levels.append(self.shallow.score(patch, frame_index))
        common = dict(cell_size=float(cfg.shallow_cell),
                      scale_step=cfg.scale_step,
                      center_level=cfg.scale_levels // 2)
        return (ScoreMap(tuple(deep_levels), **common),
                ScoreMap(tuple(shallow_levels), **common))

    def process_frame(self, frame: np.ndarray):
        """Track one frame; returns (state, fusion result, diagnostics)."""
        frame = features.ensure_rgb(np.asarray(frame, dtype=np.float64))
        if frame.shape[:2] != self.frame_shape:
            raise ShapeError(f"frame shape {frame.shape[:2]} does not match "
                             f"first frame {self.frame_shape}")
        self.frame_count += 1
        cfg = self.cfg
        y_d, y_s = self._score_maps(frame, self.frame_count)
        best, results = fusion.fuse_and_select(
            y_d, y_s, self.dist, cfg.mu, self.nms_radius,
            cfg.max_candidates, fixed_beta_d=self.fixed_beta_d)

        level, pi, pj = best.t_star
        center_level = cfg.scale_levels // 2
        gh, gw = y_s.grid_shape
        di, dj = 0.0, 0.0
        if cfg.subcell_refine:
            fused = (best.beta_d * y_d.levels[level]
                     + best.beta_s * y_s.levels[level])
            di, dj = _parabolic_offset(fused, pi, pj)
        cell = y_s.level_cell(level)
        dy_patch = (grid.signed_index(pi, gh) + di) * cell
        dx_patch = (grid.signed_index(pj, gw) + dj) * cell
        to_image = self._side(self.state, center_level) / cfg.patch_pixels
        cx = self.state.center[0] + dx_patch * to_image
        cy = self.state.center[1] + dy_patch * to_image
        clamped = False
        if not 0.0 <= cx <= self.frame_shape[1] - 1.0:
            cx = min(max(cx, 0.0), self.frame_shape[1] - 1.0)
            clamped = True
        if not 0.0 <= cy <= self.frame_shape[0] - 1.0:
            cy = min(max(cy, 0.0), self.frame_shape[0] - 1.0)
            clamped = True
        scale = self.state.scale * cfg.scale_step ** (level - center_level)
        self.state = TargetState(
            (cx, cy), (self.base_size[0] * scale, self.base_size[1] * scale),
            scale)

        updated = False
        if cfg.update_interval and self.frame_count % cfg.update_interval == 0:
            patch = self._patch_at(frame, self.state, center_level)
            self.deep.bank.add_sample(
                self.deep.spectrum(patch, self.frame_count))
            self.shallow.bank.add_sample(
                self.shallow.spectrum(patch, self.frame_count))
            self.deep.bank.train(cfg.update_iterations)
            self.shallow.bank.train(cfg.update_iterations)
            updated = True

        diagnostics = {
            "clamped": clamped,
            "degenerate": best.degenerate,
            "level_offset": level - center_level,
            "candidates": len(results),
            "updated": updated,
        }
        return self.state, best, diagnostics


def grid_resample(values: np.ndarray, new_h: int, new_w: int) -> np.ndarray:
    "Band-limited resample onto the common fusion grid; identity if sized."
    if values.shape == (new_h, new_w):
        return values
    return grid.resample(values, new_h, new_w)


def initialize(frame: np.ndarray, initial: TargetState,
               cfg: TrackerConfig | None = None,
               mode: str = "adaptive") -> Tracker:
    "Build and train a tracker on the first frame."
    return Tracker(frame, initial, cfg, mode)
