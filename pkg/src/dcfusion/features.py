"""Feature extraction for the two model branches, plus feature-map file I/O.

The fine branch uses hand-crafted channels at a small cell size:
9 unsigned orientation histogram channels with periodic 2x2 block
normalisation, and 10 colour-prototype channels.  The coarse branch
("proxy") uses heavily smoothed gradient and colour maps pooled at a
large stride; it stands in for a semantic feature extractor and exposes
the same interface, so real feature maps can be swapped in from files.

File format (.fmap): magic "FMAP", then little-endian u32 version (=1),
u32 channels, u32 height, u32 width, f64 stride, followed by the samples
as f64, row-major within each channel, channels consecutive.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import ConfigError, DataError, ShapeError

FMAP_MAGIC = b"FMAP"
FMAP_VERSION = 1

ORIENTATION_BINS = 9
BLOCK_NORM_EPS = 1e-4

# colour prototypes in RGB, roughly spanning the cube
COLOR_PROTOTYPES = np.array([
    [0.0, 0.0, 0.0],   # black
    [1.0, 1.0, 1.0],   # white
    [0.5, 0.5, 0.5],   # gray
    [1.0, 0.0, 0.0],   # red
    [1.0, 0.5, 0.0],   # orange
    [1.0, 1.0, 0.0],   # yellow
    [0.0, 1.0, 0.0],   # green
    [0.0, 1.0, 1.0],   # cyan
    [0.0, 0.0, 1.0],   # blue
    [0.5, 0.0, 1.0],   # purple
])
COLOR_BANDWIDTH = 0.2

MIN_PROXY_STRIDE = 8


@dataclass(frozen=True)
class FeatureSample:
    """A multi-channel feature map with its pixel stride.

    channels: float64 array of shape (D, H, W).
    stride:   patch pixels per feature cell.
    provenance: short tag ("shallow", "proxy", "file") for diagnostics.
    """

    channels: np.ndarray
    stride: float
    provenance: str = ""

    def __post_init__(self):
        ch = self.channels
        if ch.ndim != 3 or ch.shape[0] == 0:
            raise ShapeError(f"channels must be (D, H, W), got {ch.shape}")
        if not (self.stride > 0 and np.isfinite(self.stride)):
            raise DataError(f"stride must be positive, got {self.stride}")

    @property
    def grid_shape(self) -> tuple[int, int]:
        return self.channels.shape[1:]


def ensure_rgb(patch: np.ndarray) -> np.ndarray:
    patch = np.asarray(patch, dtype=np.float64)
    if patch.ndim == 2:
        return np.stack([patch] * 3, axis=-1)
    if patch.ndim == 3 and patch.shape[2] == 3:
        return patch
    raise ShapeError(f"expected (H, W) or (H, W, 3) patch, got {patch.shape}")


def rgb_to_gray(patch: np.ndarray) -> np.ndarray:
    rgb = ensure_rgb(patch)
    return 0.299 * rgb[..., 0] + 0.587 * rgb[..., 1] + 0.114 * rgb[..., 2]


def _periodic_gradients(gray: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    "Central differences with wrap-around; returns (d/dcol, d/drow)."
    gx = (np.roll(gray, -1, axis=1) - np.roll(gray, 1, axis=1)) * 0.5
    gy = (np.roll(gray, -1, axis=0) - np.roll(gray, 1, axis=0)) * 0.5
    return gx, gy


def _pool_cells(x: np.ndarray, cell: int, reduce: str) -> np.ndarray:
    h, w = x.shape[-2], x.shape[-1]
    view = x.reshape(*x.shape[:-2], h // cell, cell, w // cell, cell)
    if reduce == "sum":
        return view.sum(axis=(-3, -1))
    return view.mean(axis=(-3, -1))


def _orientation_channels(gray: np.ndarray, cell: int) -> np.ndarray:
    """Unsigned orientation histograms with periodic block normalisation.

    Bin centres sit at (k + 1/2) * pi / bins, so mirroring the patch
    maps bin k exactly onto bin (bins-1-k); tests rely on this.
    """
    h, w = gray.shape
    gx, gy = _periodic_gradients(gray)
    mag = np.hypot(gx, gy)
    theta = np.arctan2(gy, gx) % np.pi
    p = theta / np.pi * ORIENTATION_BINS - 0.5
    k0 = np.floor(p).astype(np.int64)
    frac = p - k0
    k0 %= ORIENTATION_BINS
    k1 = (k0 + 1) % ORIENTATION_BINS

    hist = np.zeros((ORIENTATION_BINS, h * w))
    cols = np.arange(h * w)
    hist[k0.ravel(), cols] = (mag * (1.0 - frac)).ravel()
    hist[k1.ravel(), cols] += (mag * frac).ravel()
    hist = hist.reshape(ORIENTATION_BINS, h, w)

    cells = _pool_cells(hist, cell, "sum")

    # periodic 2x2 block energies; each cell is normalised by the mean
    # energy of the four blocks containing it
    energy = np.sum(cells ** 2, axis=0)
    block = (energy + np.roll(energy, -1, axis=0) + np.roll(energy, -1, axis=1)
             + np.roll(energy, (-1, -1), axis=(0, 1)))
    containing = (block + np.roll(block, 1, axis=0) + np.roll(block, 1, axis=1)
                  + np.roll(block, (1, 1), axis=(0, 1))) / 4.0
    return cells / np.sqrt(containing + BLOCK_NORM_EPS)


def _color_channels(rgb: np.ndarray, cell: int) -> np.ndarray:
    "Soft assignment to colour prototypes, averaged per cell."
    diff = rgb[:, :, None, :] - COLOR_PROTOTYPES[None, None, :, :]
    logits = -np.sum(diff ** 2, axis=-1) / (2.0 * COLOR_BANDWIDTH ** 2)
    logits -= logits.max(axis=-1, keepdims=True)
    weights = np.exp(logits)
    weights /= weights.sum(axis=-1, keepdims=True)
    per_pixel = np.moveaxis(weights, -1, 0)  # (P, H, W)
    return _pool_cells(per_pixel, cell, "mean")


def feature_window(shape: tuple[int, int], kind: str = "hann") -> np.ndarray:
    """Separable taper over the feature grid.

    "hann" fades the cells near the patch boundary to zero, which stops
    a filter from keying on scenery that enters and leaves the search
    region; "none" keeps the raw periodic features (useful for exact
    shift-equivariance checks).
    """
    h, w = shape
    if kind == "none":
        return np.ones(shape)
    if kind != "hann":
        raise ConfigError(f"unknown window kind {kind!r}")
    wy = 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(h) / max(h - 1, 1))
    wx = 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(w) / max(w - 1, 1))
    return wy[:, None] * wx[None, :]


def extract_shallow(patch: np.ndarray, cell_size: int = 4) -> FeatureSample:
    """Hand-crafted fine-resolution channels: 9 orientation + 10 colour."""
    rgb = ensure_rgb(patch)
    h, w = rgb.shape[:2]
    if cell_size < 1:
        raise ConfigError(f"cell_size must be >= 1, got {cell_size}")
    if h % cell_size or w % cell_size:
        raise ShapeError(
            f"patch {h}x{w} is not divisible by cell size {cell_size}")
    gray = rgb_to_gray(rgb)
    channels = np.concatenate([
        _orientation_channels(gray, cell_size),
        _color_channels(rgb, cell_size),
    ])
    return FeatureSample(channels, float(cell_size), "shallow")


def extract_deep_proxy(patch: np.ndarray, stride: int = 20,
                       octaves: int = 2) -> FeatureSample:
    """Coarse context channels standing in for a semantic extractor.

    Per octave o: Gaussian-smoothed gradient magnitude and RGB at scale
    0.4 * stride * (o+1), mean-pooled by `stride`, each channel
    l2-normalised.  The normalisation makes the output exactly invariant
    to a global brightness scale of the patch.
    """
    if stride < MIN_PROXY_STRIDE:
        raise ConfigError(
            f"proxy stride must be >= {MIN_PROXY_STRIDE}, got {stride}")
    if octaves < 1:
        raise ConfigError(f"octaves must be >= 1, got {octaves}")
    rgb = ensure_rgb(patch)
    h, w = rgb.shape[:2]
    if h % stride or w % stride:
        raise ShapeError(f"patch {h}x{w} is not divisible by stride {stride}")
    gray = rgb_to_gray(rgb)
    gx, gy = _periodic_gradients(gray)
    mag = np.hypot(gx, gy)

    maps = []
    for octave in range(octaves):
        sigma = 0.4 * stride * (octave + 1)
        maps.append(ndimage.gaussian_filter(mag, sigma, mode="wrap"))
        for c in range(3):
            maps.append(ndimage.gaussian_filter(rgb[..., c], sigma, mode="wrap"))
    channels = _pool_cells(np.stack(maps), stride, "mean")

    norms = np.sqrt(np.sum(channels ** 2, axis=(1, 2), keepdims=True))
    np.divide(channels, norms, out=channels, where=norms > 0)
    return FeatureSample(channels, float(stride), "proxy")


# ---------------------------------------------------------------------------
# feature-map files


def save_fmap(path, sample: FeatureSample) -> None:
    d, h, w = sample.channels.shape
    payload = np.ascontiguousarray(sample.channels, dtype="<f8").tobytes()
    with open(path, "wb") as f:
        f.write(FMAP_MAGIC)
        f.write(struct.pack("<IIII", FMAP_VERSION, d, h, w))
        f.write(struct.pack("<d", sample.stride))
        f.write(payload)


def load_fmap(path) -> FeatureSample:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"feature file not found: {path}")
    raw = path.read_bytes()
    header = 4 + 16 + 8
    if len(raw) < header:
        raise DataError(f"feature file too short for header: {path}")
    if raw[:4] != FMAP_MAGIC:
        raise DataError(f"bad magic {raw[:4]!r} in feature file: {path}")
    version, d, h, w = struct.unpack("<IIII", raw[4:20])
    if version != FMAP_VERSION:
        raise DataError(f"unsupported feature file version {version}: {path}")
    if d == 0 or h == 0 or w == 0:
        raise DataError(f"degenerate dimensions {d}x{h}x{w} in {path}")
    (stride,) = struct.unpack("<d", raw[20:28])
    expected = header + d * h * w * 8
    if len(raw) != expected:
        raise DataError(
            f"feature file size mismatch: {path} has {len(raw)} bytes, "
            f"dimensions {d}x{h}x{w} require {expected}")
    channels = np.frombuffer(raw, dtype="<f8", offset=header).reshape(d, h, w)
    return FeatureSample(channels.astype(np.float64), float(stride), "file")


def fmap_path(template: str, frame_index: int) -> Path:
    return Path(f"{template}_{frame_index:06d}.fmap")


# ---------------------------------------------------------------------------
# providers (uniform interface the tracker calls per frame)


class ShallowProvider:
    def __init__(self, cell_size: int = 4):
        self.cell_size = cell_size

    def extract(self, patch: np.ndarray, frame_index: int) -> FeatureSample:
        return extract_shallow(patch, self.cell_size)


class DeepProxyProvider:
    def __init__(self, stride: int = 20, octaves: int = 2):
        self.stride = stride
        self.octaves = octaves

    def extract(self, patch: np.ndarray, frame_index: int) -> FeatureSample:
        return extract_deep_proxy(patch, self.stride, self.octaves)


class ExternalFileProvider:
    """Reads per-frame feature maps from `<template>_<frame:06d>.fmap`.

    File maps carry no scale information, so the tracker reuses the same
    map across scale levels; scale evidence then comes from the other
    branch alone.
    """

    def __init__(self, template: str):
        self.template = template

    def extract(self, patch: np.ndarray, frame_index: int) -> FeatureSample:
        return load_fmap(fmap_path(self.template, frame_index))


def make_deep_provider(source: str, stride: int = 20, octaves: int = 2):
    "Parse a deep-feature source string: 'proxy' or 'file:<template>'."
    if source == "proxy":
        return DeepProxyProvider(stride, octaves)
    if source.startswith("file:"):
        template = source[len("file:"):]
        if not template:
            raise ConfigError("file feature source needs a path template")
        return ExternalFileProvider(template)
    raise ConfigError(f"unknown deep feature source: {source!r}")
