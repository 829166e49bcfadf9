"""Versioned binary model container with bit-exact round trips.

Layout (little-endian throughout): magic "DCFM", u32 version, then a
run of sections to end of file. Each section is a 4-byte tag, a u64
payload length, and the payload. Three tags are defined:

  ARRY  named numpy array: u16 name length, name utf-8, 16-byte dtype
        string (ascii, space padded), u8 ndim, ndim u32 dims, raw
        C-order data
  SCLR  named float64 scalar: u16 name length, name utf-8, 8 bytes
  TEXT  named utf-8 string: u16 name length, name, u32 text length, text

Readers fail loudly on unknown tags so stale readers never silently
drop newer content.
"""

import dataclasses
import struct
from pathlib import Path

import numpy as np

from .errors import DataError

DCFM_MAGIC = b"DCFM"
DCFM_VERSION = 1
_ALLOWED_DTYPES = ("float64", "complex128", "int64", "uint8")


def _pack_name(name: str) -> bytes:
    raw = name.encode("utf-8")
    if len(raw) > 0xFFFF:
        raise DataError(f"entry name too long: {name[:40]}...")
    return struct.pack("<H", len(raw)) + raw


def _pack_array(name: str, arr: np.ndarray) -> bytes:
    # ascontiguousarray would flatten 0-d arrays to shape (1,)
    if not arr.flags.c_contiguous:
        arr = np.ascontiguousarray(arr)
    if arr.dtype.name not in _ALLOWED_DTYPES:
        arr = arr.astype(np.float64)
    dtype = arr.dtype.name.encode("ascii").ljust(16)
    head = _pack_name(name) + dtype + struct.pack("<B", arr.ndim)
    head += struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + arr.tobytes()


def save_dcfm(path, arrays=None, scalars=None, text=None) -> None:
    "Write named arrays, float scalars, and strings to a container file."
    sections = []
    for name, arr in (arrays or {}).items():
        sections.append((b"ARRY", _pack_array(name, np.asarray(arr))))
    for name, value in (scalars or {}).items():
        sections.append((b"SCLR",
                         _pack_name(name) + struct.pack("<d", float(value))))
    for name, value in (text or {}).items():
        raw = value.encode("utf-8")
        sections.append((b"TEXT", _pack_name(name)
                         + struct.pack("<I", len(raw)) + raw))
    blob = bytearray(DCFM_MAGIC + struct.pack("<I", DCFM_VERSION))
    for tag, payload in sections:
        blob += tag + struct.pack("<Q", len(payload)) + payload
    Path(path).write_bytes(bytes(blob))


class _Cursor:
    def __init__(self, data: bytes, origin: str):
        self.data = data
        self.pos = 0
        self.origin = origin

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise DataError(f"{self.origin}: truncated at byte {self.pos}")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    @property
    def exhausted(self) -> bool:
        return self.pos >= len(self.data)


def _read_name(cur: _Cursor) -> str:
    (n,) = cur.unpack("<H")
    return cur.take(n).decode("utf-8")


def load_dcfm(path):
    "Read a container; returns (arrays, scalars, text) name maps."
    origin = str(path)
    cur = _Cursor(Path(path).read_bytes(), origin)
    if cur.take(4) != DCFM_MAGIC:
        raise DataError(f"{origin}: bad magic, not a model container")
    (version,) = cur.unpack("<I")
    if version != DCFM_VERSION:
        raise DataError(f"{origin}: unsupported container version {version}")
    arrays, scalars, text = {}, {}, {}
    while not cur.exhausted:
        tag = cur.take(4)
        (length,) = cur.unpack("<Q")
        body = _Cursor(cur.take(length), origin)
        if tag == b"ARRY":
            name = _read_name(body)
            dtype = body.take(16).decode("ascii").strip()
            if dtype not in _ALLOWED_DTYPES:
                raise DataError(f"{origin}: array {name!r} has unsupported "
                                f"dtype {dtype!r}")
            (ndim,) = body.unpack("<B")
            shape = body.unpack(f"<{ndim}I") if ndim else ()
            count = int(np.prod(shape, dtype=np.int64)) if ndim else 1
            raw = body.take(count * np.dtype(dtype).itemsize)
            arrays[name] = np.frombuffer(raw, dtype=dtype).reshape(shape)
        elif tag == b"SCLR":
            name = _read_name(body)
            (scalars[name],) = body.unpack("<d")
        elif tag == b"TEXT":
            name = _read_name(body)
            (n,) = body.unpack("<I")
            text[name] = body.take(n).decode("utf-8")
        else:
            raise DataError(f"{origin}: unknown section tag {tag!r}")
    return arrays, scalars, text


# ---------------------------------------------------------------------------
# tracker snapshots


def save_tracker(path, trk) -> None:
    "Snapshot a tracker mid-sequence; restoring continues bit-exactly."
    from .config import format_config

    arrays = {
        "state.center": np.array(trk.state.center),
        "state.size": np.array(trk.state.size),
        "base_size": np.array(trk.base_size),
        "frame_shape": np.array(trk.frame_shape, dtype=np.int64),
        "target_patch_px": np.array(trk.target_patch_px),
    }
    scalars = {
        "state.scale": trk.state.scale,
        "frame_count": float(trk.frame_count),
    }
    for label, model in (("deep", trk.deep), ("shallow", trk.shallow)):
        bank = model.bank
        arrays[f"{label}.filters"] = bank.filters
        arrays[f"{label}.memory"] = np.stack(bank.memory)
        arrays[f"{label}.ages"] = np.array(bank.weights.ages,
                                           dtype=np.float64)
        arrays[f"{label}.reg_offsets"] = bank.taps.offsets.astype(np.int64)
        arrays[f"{label}.reg_coeffs"] = bank.taps.coeffs
    text = {"config": format_config(trk.cfg), "mode": trk.mode}
    save_dcfm(path, arrays=arrays, scalars=scalars, text=text)


def load_tracker(path):
    "Rebuild a tracker from a snapshot without re-running first-frame fit."
    from . import features, training
    from .config import coerce_dataclass, parse_config_text
    from .tracker import (TargetState, Tracker, TrackerConfig, _Model,
                          parse_mode, state_distance_for)

    arrays, scalars, text = load_dcfm(path)
    try:
        cfg = coerce_dataclass(TrackerConfig,
                               parse_config_text(text["config"], str(path)))
        mode = text["mode"]
        center = tuple(arrays["state.center"])
        size = tuple(arrays["state.size"])
        state = TargetState(center, size, scalars["state.scale"])
        frame_shape = tuple(int(v) for v in arrays["frame_shape"])
        base_size = tuple(arrays["base_size"])
        target_patch_px = tuple(arrays["target_patch_px"])
        frame_count = int(scalars["frame_count"])
        banks = {}
        for label in ("deep", "shallow"):
            banks[label] = {
                "filters": arrays[f"{label}.filters"].copy(),
                "memory": [m.copy() for m in arrays[f"{label}.memory"]],
                "ages": [int(a) for a in arrays[f"{label}.ages"]],
            }
    except KeyError as exc:
        raise DataError(f"{path}: snapshot missing entry {exc}") from None

    trk = Tracker.__new__(Tracker)
    trk.cfg = cfg
    cfg.validate()
    trk.fixed_beta_d = parse_mode(mode)
    trk.mode = mode
    trk.frame_shape = frame_shape
    trk.base_size = base_size
    trk.state = state
    trk.frame_count = frame_count
    trk.target_patch_px = target_patch_px
    trk.rng_dropout = np.random.default_rng(
        np.random.SeedSequence(cfg.seed).spawn(1)[0])

    p = cfg.patch_pixels
    tw, th = target_patch_px
    trk.dist = state_distance_for(cfg, target_patch_px)
    trk.nms_radius = cfg.nms_radius_factor * (p / cfg.search_scale)
    trk.deep = _Model(
        features.make_deep_provider(cfg.deep_features, cfg.deep_stride,
                                    cfg.deep_octaves),
        cfg.deep_sigma_factor, (p // cfg.deep_stride, p // cfg.deep_stride),
        (th / cfg.deep_stride, tw / cfg.deep_stride), cfg, "deep")
    trk.shallow = _Model(
        features.ShallowProvider(cfg.shallow_cell),
        cfg.shallow_sigma_factor,
        (p // cfg.shallow_cell, p // cfg.shallow_cell),
        (th / cfg.shallow_cell, tw / cfg.shallow_cell), cfg, "shallow")
    for label, model in (("deep", trk.deep), ("shallow", trk.shallow)):
        bank = model.bank
        bank.filters = banks[label]["filters"]
        bank.memory = banks[label]["memory"]
        bank.weights = training.SampleWeights(cfg.learning_rate)
        bank.weights.ages = banks[label]["ages"]
    return trk
