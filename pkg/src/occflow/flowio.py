"""Readers and writers for .flo, KITTI flow PNGs and 8-bit images, plus flow coloring.

``.flo`` layout (little endian): float32 magic 202021.25, int32 width,
int32 height, then ``height * width`` interleaved float32 ``(u, v)`` pairs
in row-major order.  Components with magnitude >= 1e9 mean "unknown".

KITTI flow PNGs are 16-bit, 3 channels, stored as (u, v, valid) in RGB
order with ``u = (R - 2**15) / 64``.
"""
from __future__ import annotations

import os
from dataclasses import dataclass

import cv2
import numpy as np

from .core import as_flow
from .errors import BadChannelCount, BadMagic, DimOverflow, NotSixteenBit, TruncatedFile, UnsupportedFormat

FLO_MAGIC = 202021.25
FLO_MAX_DIM = 32767
UNKNOWN_FLOW_THRESH = 1e9
UNKNOWN_FLOW = 1e10
KITTI_SCALE = 64.0
KITTI_OFFSET = 2 ** 15
KITTI_MAX = (65535 - KITTI_OFFSET) / KITTI_SCALE     # 511.984375

_HEADER = np.dtype([("magic", "<f4"), ("width", "<i4"), ("height", "<i4")])


@dataclass
class FlowFile:
    """A flow field with its validity mask (all True for formats without one)."""

    flow: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        self.flow = np.asarray(self.flow, dtype=np.float64)
        if self.flow.ndim != 3 or self.flow.shape[2] != 2:
            raise ValueError(f"flow must be HxWx2, got {self.flow.shape}")
        if self.valid is None:
            self.valid = np.ones(self.flow.shape[:2], dtype=bool)
        self.valid = np.asarray(self.valid, dtype=bool)
        if self.valid.shape != self.flow.shape[:2]:
            raise ValueError(f"valid mask {self.valid.shape} does not match flow {self.flow.shape[:2]}")


def _atomic_write(path, write):
    """Write via a temporary sibling so a failure never leaves a partial file."""
    path = os.fspath(path)
    root, ext = os.path.splitext(path)
    tmp = f"{root}.tmp-{os.getpid()}{ext}"
    try:
        write(tmp)
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.remove(tmp)


def _imread(path) -> np.ndarray:
    path = os.fspath(path)
    if not os.path.isfile(path):
        raise FileNotFoundError(f"{path}: no such file")
    img = cv2.imread(path, cv2.IMREAD_UNCHANGED)
    if img is None:
        raise UnsupportedFormat(f"{path}: cannot decode image")
    return img


# -- .flo ------------------------------------------------------------------------

def read_flo(path) -> FlowFile:
    """Read a Middlebury ``.flo`` file.

    Unknown-flow sentinels come back as ``valid=False``; the stored values are
    kept in ``flow`` so that a re-write reproduces the file.
    """
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.itemsize:
        raise TruncatedFile(f"{path}: {len(raw)} bytes is shorter than the 12-byte header")
    header = np.frombuffer(raw, dtype=_HEADER, count=1)[0]
    if header["magic"] != np.float32(FLO_MAGIC):
        raise BadMagic(f"{path}: magic {float(header['magic'])!r}, expected {FLO_MAGIC}")
    w, h = int(header["width"]), int(header["height"])
    if not (1 <= w <= FLO_MAX_DIM and 1 <= h <= FLO_MAX_DIM):
        raise DimOverflow(f"{path}: dims {w}x{h} outside 1..{FLO_MAX_DIM}")
    need = _HEADER.itemsize + 8 * w * h
    if len(raw) < need:
        raise TruncatedFile(f"{path}: {len(raw)} bytes, expected {need} for {w}x{h}")
    data = np.frombuffer(raw, dtype="<f4", count=2 * w * h, offset=_HEADER.itemsize).reshape(h, w, 2)
    flow = data.astype(np.float64)
    valid = np.all(np.abs(flow) < UNKNOWN_FLOW_THRESH, axis=2) & np.all(np.isfinite(flow), axis=2)
    return FlowFile(flow, valid)


def write_flo(flow, path, valid=None) -> None:
    """Write a ``.flo`` file; pixels with ``valid=False`` get the unknown sentinel."""
    if isinstance(flow, FlowFile):
        flow, valid = flow.flow, flow.valid
    f = as_flow(flow)
    h, w = f.shape[:2]
    if w > FLO_MAX_DIM or h > FLO_MAX_DIM:
        raise DimOverflow(f"dims {w}x{h} exceed {FLO_MAX_DIM}")
    data = f.astype("<f4")
    if valid is not None:
        data[~np.asarray(valid, dtype=bool)] = UNKNOWN_FLOW
    header = np.array([(FLO_MAGIC, w, h)], dtype=_HEADER)

    def write(tmp):
        with open(tmp, "wb") as fh:
            fh.write(header.tobytes())
            fh.write(np.ascontiguousarray(data).tobytes())

    _atomic_write(path, write)


# -- KITTI -----------------------------------------------------------------------

def read_kitti_flow(path) -> FlowFile:
    img = _imread(path)
    if img.dtype != np.uint16:
        raise NotSixteenBit(f"{path}: {img.dtype} pixels, expected 16-bit")
    if img.ndim != 3 or img.shape[2] != 3:
        raise BadChannelCount(f"{path}: expected 3 channels, got shape {img.shape}")
    rgb = img[:, :, ::-1].astype(np.float64)
    flow = (rgb[:, :, :2] - KITTI_OFFSET) / KITTI_SCALE
    return FlowFile(flow, rgb[:, :, 2] > 0)


def write_kitti_flow(ff: FlowFile, path) -> None:
    """Write a KITTI flow PNG, clamping to the representable +-511.984375 px."""
    if not isinstance(ff, FlowFile):
        ff = FlowFile(ff, None)
    f = np.clip(as_flow(ff.flow), -KITTI_MAX, KITTI_MAX)
    out = np.empty(f.shape[:2] + (3,), dtype=np.uint16)
    out[:, :, :2] = np.clip(np.round(f * KITTI_SCALE + KITTI_OFFSET), 0, 65535).astype(np.uint16)
    out[:, :, 2] = ff.valid.astype(np.uint16)
    path = os.fspath(path)

    def write(tmp):
        if not cv2.imwrite(tmp, out[:, :, ::-1].copy()):
            raise UnsupportedFormat(f"{path}: cannot encode PNG")

    _atomic_write(path, write)


def read_flow(path) -> FlowFile:
    """Dispatch on extension: ``.flo`` or KITTI ``.png``."""
    ext = os.path.splitext(os.fspath(path))[1].lower()
    if ext == ".flo":
        return read_flo(path)
    if ext == ".png":
        return read_kitti_flow(path)
    raise UnsupportedFormat(f"{path}: unknown flow extension {ext!r} (use .flo or .png)")


def write_flow(flow, path, valid=None) -> None:
    ext = os.path.splitext(os.fspath(path))[1].lower()
    if ext == ".flo":
        write_flo(flow, path, valid)
    elif ext == ".png":
        write_kitti_flow(flow if isinstance(flow, FlowFile) else FlowFile(flow, valid), path)
    else:
        raise UnsupportedFormat(f"{path}: unknown flow extension {ext!r} (use .flo or .png)")


# -- 8-bit images ----------------------------------------------------------------

def read_image(path) -> np.ndarray:
    """Read an 8-bit gray or RGB image as ``(H, W, C)`` float64 in [0, 1]."""
    img = _imread(path)
    if img.dtype != np.uint8:
        raise UnsupportedFormat(f"{path}: {img.dtype} pixels, expected 8-bit")
    if img.ndim == 2:
        img = img[:, :, None]
    elif img.shape[2] == 3:
        img = img[:, :, ::-1]
    else:
        raise UnsupportedFormat(f"{path}: {img.shape[2]} channels, expected gray or RGB")
    return img.astype(np.float64) / 255.0


def to_uint8(img) -> np.ndarray:
    a = np.asarray(img, dtype=np.float64)
    return np.round(np.clip(a, 0.0, 1.0) * 255.0).astype(np.uint8)


def write_image(img, path) -> None:
    a = to_uint8(img)
    if a.ndim == 3 and a.shape[2] == 1:
        a = a[:, :, 0]
    elif a.ndim == 3 and a.shape[2] == 3:
        a = a[:, :, ::-1]
    elif a.ndim != 2:
        raise UnsupportedFormat(f"cannot write image of shape {a.shape}")
    path = os.fspath(path)

    def write(tmp):
        if not cv2.imwrite(tmp, np.ascontiguousarray(a)):
            raise UnsupportedFormat(f"{path}: cannot encode image")

    _atomic_write(path, write)


# -- visualization ---------------------------------------------------------------

def make_colorwheel() -> np.ndarray:
    """The 55-entry Middlebury color wheel as ``(55, 3)`` RGB in [0, 255]."""
    # (length, channel that ramps, rising?) per segment, starting from red
    segments = ((15, 1, True), (6, 0, False), (4, 2, True), (11, 1, False), (13, 0, True), (6, 2, False))
    rows = []
    col = np.array([255.0, 0.0, 0.0])
    for n, ch, rising in segments:
        ramp = np.floor(255.0 * np.arange(n) / n)
        block = np.tile(col, (n, 1))
        block[:, ch] = ramp if rising else 255.0 - ramp
        rows.append(block)
        col = block[-1].copy()
        col[ch] = 255.0 if rising else 0.0
    return np.concatenate(rows)


def flow_to_color(flow, max_radius=None) -> np.ndarray:
    """Color-code a flow field; returns an RGB image in [0, 1].

    Hue follows the direction and saturation the magnitude relative to
    ``max_radius``.  By default ``max_radius`` is the 99th percentile of the
    finite magnitudes, so a few outliers do not wash out the picture.
    """
    f = as_flow(flow)
    u, v = f[:, :, 0], f[:, :, 1]
    rad = np.hypot(u, v)
    if max_radius is None:
        max_radius = float(np.percentile(rad, 99)) if rad.size else 0.0
    max_radius = float(max_radius)
    if max_radius <= 0:
        max_radius = 1.0
    wheel = make_colorwheel()
    ncols = wheel.shape[0]
    r = np.minimum(rad / max_radius, 1.0)
    angle = np.arctan2(-v, -u) / np.pi
    fk = (angle + 1.0) / 2.0 * (ncols - 1)
    k0 = np.floor(fk).astype(np.intp)
    k1 = (k0 + 1) % ncols
    frac = (fk - k0)[:, :, None]
    col = ((1.0 - frac) * wheel[k0] + frac * wheel[k1]) / 255.0
    col = 1.0 - r[:, :, None] * (1.0 - col)
    return col
