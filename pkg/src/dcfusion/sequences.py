"""Sequence I/O and the synthetic sequence generator.

A sequence directory holds frames under img/ plus groundtruth_rect.txt
with one "x,y,w,h" box per line (comma or tab separated, 1-indexed in
the file, 0-indexed in memory). Frames are kept as float arrays in
[0, 1]. The synthetic generator renders a textured rectangle with exact
analytic pixel coverage, so the written ground truth is exact by
construction; box coordinates are quantized to 1/32 pixel so the
1-indexing shift in the text format round-trips without error.
"""

import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import ConfigError, DataError, InvalidInputError

GT_FILENAME = "groundtruth_rect.txt"
FRAME_SUBDIR = "img"
BOX_QUANTUM = 32.0  # sub-pixel grid for synthetic ground truth


@dataclass
class Sequence:
    "In-memory frames plus per-frame ground-truth boxes."

    frames: list
    ground_truth: np.ndarray
    name: str = "sequence"

    def __post_init__(self):
        self.ground_truth = np.asarray(self.ground_truth, dtype=np.float64)
        if len(self.frames) != len(self.ground_truth):
            raise DataError(
                f"{self.name}: {len(self.frames)} frames but "
                f"{len(self.ground_truth)} ground-truth boxes")
        if len(self.frames) == 0:
            raise DataError(f"{self.name}: empty sequence")
        if self.ground_truth.ndim != 2 or self.ground_truth.shape[1] != 4:
            raise DataError(f"{self.name}: ground truth must be (n, 4)")
        if np.any(self.ground_truth[:, 2:] <= 0):
            raise DataError(f"{self.name}: nonpositive box size")

    def __len__(self) -> int:
        return len(self.frames)


# ---------------------------------------------------------------------------
# portable pixmap I/O


def write_ppm(path, image: np.ndarray) -> None:
    "Write a binary P6 pixmap; float input in [0, 1] is quantized."
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3:
        raise InvalidInputError(f"need (h, w, 3) image, got {image.shape}")
    if image.dtype != np.uint8:
        image = (np.clip(image, 0.0, 1.0) * 255.0).round().astype(np.uint8)
    h, w = image.shape[:2]
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(image.tobytes())


def read_ppm(path) -> np.ndarray:
    "Read a binary P6 pixmap to float64 in [0, 1]."
    data = Path(path).read_bytes()
    m = re.match(rb"P6\s+(\d+)\s+(\d+)\s+(\d+)\s", data)
    if not m:
        raise DataError(f"{path}: not a binary P6 pixmap")
    w, h, maxval = (int(g) for g in m.groups())
    if maxval != 255:
        raise DataError(f"{path}: unsupported max value {maxval}")
    pixels = np.frombuffer(data, dtype=np.uint8, offset=m.end())
    if pixels.size < w * h * 3:
        raise DataError(f"{path}: truncated pixel data")
    pixels = pixels[:w * h * 3].reshape(h, w, 3)
    return pixels.astype(np.float64) / 255.0


def load_image(path) -> np.ndarray:
    "Read one frame; PPM natively, anything else through Pillow."
    path = Path(path)
    if path.suffix.lower() == ".ppm":
        return read_ppm(path)
    from PIL import Image

    with Image.open(path) as img:
        arr = np.asarray(img.convert("RGB"), dtype=np.float64)
    return arr / 255.0


# ---------------------------------------------------------------------------
# directory layout


def parse_ground_truth(text: str, origin: str) -> np.ndarray:
    "Parse x,y,w,h lines (comma or tab separated, 1-indexed)."
    boxes = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        parts = re.split(r"[,\t]+", line)
        if len(parts) != 4:
            raise DataError(
                f"{origin}:{lineno}: expected 4 fields, got {len(parts)}")
        try:
            x, y, w, h = (float(p) for p in parts)
        except ValueError:
            raise DataError(
                f"{origin}:{lineno}: non-numeric field in {line!r}"
            ) from None
        boxes.append((x - 1.0, y - 1.0, w, h))
    if not boxes:
        raise DataError(f"{origin}: no ground-truth boxes")
    return np.array(boxes)


def load_sequence(seq_dir) -> Sequence:
    "Load frames and ground truth from a sequence directory."
    seq_dir = Path(seq_dir)
    gt_path = seq_dir / GT_FILENAME
    if not gt_path.is_file():
        raise DataError(f"{gt_path}: missing ground-truth file")
    ground_truth = parse_ground_truth(gt_path.read_text(), str(gt_path))
    frame_dir = seq_dir / FRAME_SUBDIR
    if not frame_dir.is_dir():
        raise DataError(f"{frame_dir}: missing frame directory")
    paths = sorted(p for p in frame_dir.iterdir()
                   if p.suffix.lower() in (".ppm", ".png", ".jpg", ".jpeg",
                                           ".bmp"))
    if not paths:
        raise DataError(f"{frame_dir}: no frames found")
    if len(paths) != len(ground_truth):
        raise DataError(f"{seq_dir}: {len(paths)} frames but "
                        f"{len(ground_truth)} ground-truth lines")
    return Sequence([load_image(p) for p in paths], ground_truth,
                    name=seq_dir.name)


def save_sequence(seq_dir, sequence: Sequence) -> None:
    "Write a sequence directory (P6 frames, 1-indexed ground truth)."
    seq_dir = Path(seq_dir)
    frame_dir = seq_dir / FRAME_SUBDIR
    frame_dir.mkdir(parents=True, exist_ok=True)
    for k, frame in enumerate(sequence.frames):
        write_ppm(frame_dir / f"{k + 1:04d}.ppm", frame)
    lines = []
    for x, y, w, h in sequence.ground_truth:
        lines.append(f"{float(x) + 1.0!r},{float(y) + 1.0!r},"
                     f"{float(w)!r},{float(h)!r}")
    (seq_dir / GT_FILENAME).write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# synthetic sequences


@dataclass
class SynthSpec:
    """Parameters of the synthetic scene.

    Episodes are half-open frame ranges; a negative start disables the
    episode. Field names double as config-file keys.
    """

    width: int = 320
    height: int = 240
    frames: int = 100
    box_x: float = 30.0
    box_y: float = 100.0
    box_w: float = 24.0
    box_h: float = 18.0
    velocity_x: float = 2.0
    velocity_y: float = 0.0
    sine_amplitude: float = 0.0
    sine_period: float = 40.0
    scale_drift: float = 0.0
    distractor_start: int = -1
    distractor_dx: float = 45.0
    distractor_dy: float = 0.0
    distractor_contrast: float = 0.85
    blur_start: int = -1
    blur_end: int = -1
    blur_sigma: float = 1.5
    occlude_start: int = -1
    occlude_end: int = -1
    occlude_fraction: float = 0.4
    noise: float = 0.01
    margin: float = 2.0

    def validate(self) -> None:
        if self.width < 32 or self.height < 32:
            raise ConfigError("frame size must be at least 32x32")
        if self.frames < 1:
            raise ConfigError("need at least one frame")
        if self.box_w <= 0 or self.box_h <= 0:
            raise ConfigError("initial box must have positive size")
        if not 0.0 <= self.occlude_fraction < 1.0:
            raise ConfigError("occlude_fraction must be in [0, 1)")
        if self.noise < 0:
            raise ConfigError("noise must be nonnegative")


def _quantize(v: float) -> float:
    return round(v * BOX_QUANTUM) / BOX_QUANTUM


def _coverage(n: int, lo: float, size: float) -> np.ndarray:
    "Per-pixel overlap of [lo, lo+size) with each unit pixel cell."
    edges = np.arange(n, dtype=np.float64)
    return np.clip(np.minimum(edges + 1.0, lo + size) - np.maximum(edges, lo),
                   0.0, 1.0)


def _paste(frame: np.ndarray, texture: np.ndarray, box) -> None:
    "Alpha-composite a texture over frame at a continuous box, in place."
    x, y, w, h = box
    th, tw = texture.shape[:2]
    cov = (_coverage(frame.shape[0], y, h)[:, None]
           * _coverage(frame.shape[1], x, w)[None, :])
    rows = np.nonzero(cov.any(axis=1))[0]
    cols = np.nonzero(cov.any(axis=0))[0]
    if rows.size == 0 or cols.size == 0:
        return
    rr = (rows[:, None] + 0.5 - y) / h * th - 0.5
    cc = (cols[None, :] + 0.5 - x) / w * tw - 0.5
    rr = np.broadcast_to(rr, (rows.size, cols.size))
    cc = np.broadcast_to(cc, (rows.size, cols.size))
    patch = np.stack(
        [ndimage.map_coordinates(texture[..., k], [rr, cc], order=1,
                                 mode="nearest") for k in range(3)],
        axis=-1)
    region = frame[np.ix_(rows, cols)]
    alpha = cov[np.ix_(rows, cols)][..., None]
    frame[np.ix_(rows, cols)] = region * (1.0 - alpha) + patch * alpha


def _smooth_background(rng, height, width) -> np.ndarray:
    noise = rng.uniform(0.0, 1.0, size=(height, width, 3))
    bg = ndimage.gaussian_filter(noise, sigma=(6.0, 6.0, 0.0), mode="wrap")
    lo, hi = bg.min(), bg.max()
    return 0.15 + 0.35 * (bg - lo) / (hi - lo)


def synth_boxes(spec: SynthSpec) -> np.ndarray:
    "Ground-truth boxes for the spec, quantized and kept inside frame."
    boxes = np.empty((spec.frames, 4))
    for k in range(spec.frames):
        growth = (1.0 + spec.scale_drift) ** k
        w = _quantize(spec.box_w * growth)
        h = _quantize(spec.box_h * growth)
        cx = spec.box_x + spec.box_w / 2.0 + spec.velocity_x * k
        cy = spec.box_y + spec.box_h / 2.0 + spec.velocity_y * k
        if spec.sine_amplitude:
            cy += spec.sine_amplitude * np.sin(2.0 * np.pi * k
                                               / spec.sine_period)
        x = _quantize(np.clip(cx - w / 2.0, spec.margin,
                              spec.width - w - spec.margin))
        y = _quantize(np.clip(cy - h / 2.0, spec.margin,
                              spec.height - h - spec.margin))
        boxes[k] = (x, y, w, h)
    return boxes


def synth_sequence(spec: SynthSpec, seed: int) -> Sequence:
    "Render the synthetic scene; ground truth is exact by construction."
    spec.validate()
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    background = _smooth_background(rng, spec.height, spec.width)
    tex_h = max(8, int(round(spec.box_h)))
    tex_w = max(8, int(round(spec.box_w)))
    texture = rng.uniform(0.35, 1.0, size=(tex_h, tex_w, 3))
    texture = ndimage.gaussian_filter(texture, sigma=(1.0, 1.0, 0.0),
                                      mode="wrap")
    boxes = synth_boxes(spec)
    frames = []
    for k in range(spec.frames):
        frame = background.copy()
        if spec.distractor_start >= 0 and k >= spec.distractor_start:
            dx = boxes[0, 0] + spec.distractor_dx
            dy = boxes[0, 1] + spec.distractor_dy
            _paste(frame, texture * spec.distractor_contrast,
                   (dx, dy, boxes[0, 2], boxes[0, 3]))
        _paste(frame, texture, boxes[k])
        if 0 <= spec.occlude_start <= k < spec.occlude_end:
            x, y, w, h = boxes[k]
            _paste(frame, np.full((8, 8, 3), 0.45),
                   (x, y, w * spec.occlude_fraction, h))
        if 0 <= spec.blur_start <= k < spec.blur_end:
            frame = ndimage.gaussian_filter(
                frame, sigma=(spec.blur_sigma, spec.blur_sigma, 0.0))
        if spec.noise:
            frame = np.clip(frame + rng.normal(0.0, spec.noise, frame.shape),
                            0.0, 1.0)
        frames.append(frame)
    return Sequence(frames, boxes, name="synth")
