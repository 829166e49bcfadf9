"""Training-data construction: desired-response labels, sample weighting,
and the patch augmentation family used to widen the first-frame sample set.

Labels are periodically repeated anisotropic Gaussians on the feature grid.
The two model branches use the same functional form with different width
factors: a wide response for the coarse branch and a narrow one for the
fine branch, so each filter is trained toward the localisation accuracy
its feature resolution can support.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from . import grid
from .errors import ConfigError, InvalidInputError

WIDE_SIGMA_FACTOR = 1.0 / 4.0
NARROW_SIGMA_FACTOR = 1.0 / 16.0

ROTATION_COUNT = 12
ROTATION_MAX_DEG = 60.0
DROPOUT_RATE = 0.2


@dataclass(frozen=True)
class LabelConfig:
    """Shape of the desired correlation response.

    sigma_factor scales the target extent: the Gaussian axis widths are
    sigma_factor * target_size. target_size and center are (rows, cols)
    in feature cells; center may be fractional.
    """

    sigma_factor: float
    target_size: tuple[float, float]
    center: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if self.sigma_factor <= 0:
            raise ConfigError(f"sigma_factor must be positive, got {self.sigma_factor}")
        if min(self.target_size) <= 0:
            raise ConfigError(f"target_size must be positive, got {self.target_size}")

    @property
    def sigmas(self) -> tuple[float, float]:
        a, b = self.target_size
        return (self.sigma_factor * a, self.sigma_factor * b)


def _periodic_gaussian_1d(n: int, center: float, sigma: float) -> np.ndarray:
    """sum_k exp(-(t - center - k*n)^2 / (2 sigma^2)) for t = 0..n-1.

    The sum is truncated once additional images fall below double
    precision; reach 8.3*sigma covers exp(-0.5 * 8.3^2) ~ 1e-15.
    """
    t = np.arange(n, dtype=np.float64)
    reach = int(np.ceil((8.3 * sigma + n) / n))
    out = np.zeros(n)
    for k in range(-reach, reach + 1):
        out += np.exp(-((t - center - k * n) ** 2) / (2.0 * sigma ** 2))
    return out


def gaussian_label(shape: tuple[int, int], config: LabelConfig) -> np.ndarray:
    """Periodic separable Gaussian response on an (H, W) feature grid.

    Peak value is 1 when the periodic images are negligible; with very
    wide sigmas the images overlap and the sum exceeds 1, which is the
    correct periodic limit rather than an error.
    """
    h, w = shape
    s1, s2 = config.sigmas
    u1, u2 = config.center
    col1 = _periodic_gaussian_1d(h, u1 % h, s1)
    col2 = _periodic_gaussian_1d(w, u2 % w, s2)
    return np.outer(col1, col2)


class SampleWeights:
    """Exponentially decaying weights over a memory of training samples.

    Each stored sample keeps an age (0 = newest); its weight is
    proportional to (1 - learning_rate)^age, normalised to sum to 1.
    """

    def __init__(self, learning_rate: float):
        if not 0.0 < learning_rate < 1.0:
            raise ConfigError(f"learning_rate must be in (0, 1), got {learning_rate}")
        self.learning_rate = learning_rate
        self.ages: list[int] = []

    def __len__(self) -> int:
        return len(self.ages)

    def add_sample(self, count: int = 1) -> None:
        "Age every stored sample by one step and prepend `count` new ones."
        self.ages = [0] * count + [age + 1 for age in self.ages]

    def add_initial(self, count: int) -> None:
        "Seed the memory with `count` samples sharing age 0."
        if self.ages:
            raise InvalidInputError("initial samples must come before updates")
        self.ages = [0] * count

    def trim(self, max_samples: int) -> int:
        "Drop the oldest samples beyond max_samples; returns how many."
        dropped = max(0, len(self.ages) - max_samples)
        if dropped:
            self.ages = self.ages[:max_samples]
        return dropped

    def weights(self) -> np.ndarray:
        if not self.ages:
            return np.zeros(0)
        w = (1.0 - self.learning_rate) ** np.asarray(self.ages, dtype=np.float64)
        return w / w.sum()


# ---------------------------------------------------------------------------
# patch-level augmentations (image domain, HxWx3 or HxW float arrays)


def flip_patch(patch: np.ndarray) -> np.ndarray:
    "Mirror the patch horizontally."
    return np.flip(patch, axis=1).copy()


def rotation_angles() -> np.ndarray:
    "The fixed bank of rotation angles in degrees."
    return np.linspace(-ROTATION_MAX_DEG, ROTATION_MAX_DEG, ROTATION_COUNT)


def rotate_patch(patch: np.ndarray, angle_deg: float) -> np.ndarray:
    "Rotate about the patch centre, bilinear, edge values extended."
    return ndimage.rotate(patch, angle_deg, axes=(1, 0), reshape=False,
                          order=1, mode="nearest")


def blur_patch(patch: np.ndarray, radius: float) -> np.ndarray:
    "Isotropic Gaussian blur of the spatial axes."
    if patch.ndim == 3:
        return ndimage.gaussian_filter(patch, sigma=(radius, radius, 0))
    return ndimage.gaussian_filter(patch, sigma=radius)


def shift_patch(patch: np.ndarray, di: int, dj: int) -> np.ndarray:
    "Cyclically shift the patch by whole pixels."
    return np.roll(patch, (di, dj), axis=(0, 1))


def shift_back(channels: np.ndarray, di_pixels: float, dj_pixels: float,
               stride: float) -> np.ndarray:
    """Undo a pixel-domain shift on the feature grid.

    A patch shifted by (di, dj) pixels yields features displaced by
    (di/stride, dj/stride) cells; shifting the feature channels by the
    negated fractional amount re-centres the sample.
    """
    out = np.empty_like(channels, dtype=np.float64)
    for d in range(channels.shape[0]):
        out[d] = grid.cyclic_shift(channels[d], -di_pixels / stride,
                                   -dj_pixels / stride)
    return out


def channel_dropout(channels: np.ndarray, rng: np.random.Generator,
                    rate: float = DROPOUT_RATE) -> tuple[np.ndarray, np.ndarray]:
    """Zero a random subset of feature channels, preserving total energy.

    Returns (augmented_channels, dropped_indices). round(rate * D)
    channels are zeroed and the survivors are scaled up so the sum of
    squares over all channels is unchanged.
    """
    d = channels.shape[0]
    k = int(round(rate * d))
    if k >= d:
        raise InvalidInputError(
            f"dropout would remove all {d} channels at rate {rate}")
    dropped = np.sort(rng.choice(d, size=k, replace=False))
    out = np.array(channels, dtype=np.float64, copy=True)
    if k == 0:
        return out, dropped
    total = float(np.sum(out ** 2))
    out[dropped] = 0.0
    kept = float(np.sum(out ** 2))
    if kept > 0.0:
        out *= np.sqrt(total / kept)
    return out, dropped
