"""Field types, directional finite differences and image pyramids.

All fields are plain numpy arrays indexed ``[row, col, ...]``:

* images are ``(H, W, C)`` float64 with ``C`` in ``{1, 3}`` and values in [0, 1]
* flow fields are ``(H, W, 2)`` with ``[..., 0] = u`` (along x, columns) and
  ``[..., 1] = v`` (along y, rows)
* scalar fields and validity masks are ``(H, W)``
"""
from __future__ import annotations

import math
from typing import NamedTuple, Sequence

import numpy as np
from scipy.ndimage import correlate1d

from .errors import BadDims, DimMismatch, ImageTooSmall, TooManyLevels


class Direction(NamedTuple):
    """Integer pixel offset ``(dx, dy)`` used by directional differences."""

    dx: int
    dy: int

    @property
    def angle(self) -> float:
        """Angle in degrees in image coordinates (y down)."""
        return math.degrees(math.atan2(self.dy, self.dx)) % 360.0


#: 0, 45, 90 and 135 degrees.
DIRECTIONS_4 = (Direction(1, 0), Direction(1, 1), Direction(0, 1), Direction(-1, 1))
#: 0, 45, 90 and 180 degrees, taken literally.
DIRECTIONS_PAPER = (Direction(1, 0), Direction(1, 1), Direction(0, 1), Direction(-1, 0))
#: 0 and 90 degrees only.
DIRECTIONS_AXIS = (Direction(1, 0), Direction(0, 1))

_NAMED_DIRECTIONS = {
    "4": DIRECTIONS_4,
    "paper": DIRECTIONS_PAPER,
    "axis": DIRECTIONS_AXIS,
}

BINOMIAL5 = np.array([1.0, 4.0, 6.0, 4.0, 1.0]) / 16.0
MIN_PYRAMID_DIM = 4


def make_direction(d) -> Direction:
    dx, dy = (int(c) for c in d)
    if dx not in (-1, 0, 1) or dy not in (-1, 0, 1) or (dx == 0 and dy == 0):
        raise ValueError(f"invalid direction {d!r}: components must be in {{-1,0,1}}, not both 0")
    return Direction(dx, dy)


def parse_directions(spec) -> tuple[Direction, ...]:
    """Parse ``"4"``, ``"paper"``, ``"axis"`` or ``"dx,dy;dx,dy;..."``.

    Sequences of pairs are accepted as-is.
    """
    if isinstance(spec, str):
        key = spec.strip().lower()
        if key in _NAMED_DIRECTIONS:
            return _NAMED_DIRECTIONS[key]
        try:
            pairs = [tuple(int(t) for t in part.split(",")) for part in key.split(";") if part.strip()]
        except ValueError:
            raise ValueError(f"cannot parse directions {spec!r}") from None
    else:
        pairs = list(spec)
    dirs = tuple(make_direction(p) for p in pairs)
    if not dirs:
        raise ValueError("direction set is empty")
    if len(set(dirs)) != len(dirs):
        raise ValueError(f"duplicate directions in {spec!r}")
    return dirs


def format_directions(dirs: Sequence[Direction]) -> str:
    for name, named in _NAMED_DIRECTIONS.items():
        if tuple(dirs) == named:
            return name
    return ";".join(f"{d.dx},{d.dy}" for d in dirs)


def as_image(img) -> np.ndarray:
    """Return ``img`` as a validated ``(H, W, C)`` float64 array.

    A 2-D array is treated as a single channel image.
    """
    a = np.asarray(img, dtype=np.float64)
    if a.ndim == 2:
        a = a[:, :, None]
    if a.ndim != 3 or a.shape[2] not in (1, 3):
        raise DimMismatch(f"image must be HxW, HxWx1 or HxWx3, got shape {a.shape}")
    if a.shape[0] < 2 or a.shape[1] < 2:
        raise ImageTooSmall(f"image must be at least 2x2, got {a.shape[:2]}")
    if not np.all(np.isfinite(a)):
        raise ValueError("image contains non-finite values")
    return a


def as_flow(flow, shape: tuple[int, int] | None = None) -> np.ndarray:
    f = np.asarray(flow, dtype=np.float64)
    if f.ndim != 3 or f.shape[2] != 2:
        raise DimMismatch(f"flow must be HxWx2, got shape {f.shape}")
    if shape is not None and f.shape[:2] != tuple(shape):
        raise DimMismatch(f"flow is {f.shape[:2]}, expected {tuple(shape)}")
    if not np.all(np.isfinite(f)):
        raise ValueError("flow contains non-finite values")
    return f


def shift_slices(n: int, k: int) -> tuple[slice, slice]:
    """Slices ``(dst, src)`` such that ``a[dst]`` pairs with ``a[src]`` at index ``i - k``."""
    if k >= 0:
        return slice(k, n), slice(0, n - k)
    return slice(0, n + k), slice(-k, n)


def directional_gradient(field, d) -> tuple[np.ndarray, np.ndarray]:
    """Backward difference ``field(p) - field(p - d)`` along direction ``d``.

    Works on any array whose first two axes are rows and columns.  Pixels
    where ``p - d`` leaves the grid are set to 0 and reported invalid.

    Returns:
        ``(grad, valid)`` where ``valid`` is an ``(H, W)`` boolean mask.
    """
    a = np.asarray(field, dtype=np.float64)
    d = make_direction(d)
    h, w = a.shape[:2]
    out = np.zeros_like(a)
    valid = np.zeros((h, w), dtype=bool)
    ry, sy = shift_slices(h, d.dy)
    rx, sx = shift_slices(w, d.dx)
    out[ry, rx] = a[ry, rx] - a[sy, sx]
    valid[ry, rx] = True
    return out, valid


def downsample2(img) -> np.ndarray:
    """Blur with a separable 5-tap binomial kernel and keep every other pixel.

    Output dims are ``ceil(H/2) x ceil(W/2)``.  The border is mirrored about
    the edge pixel, which keeps periodic patterns unbiased.
    """
    a = np.asarray(img, dtype=np.float64)
    if a.shape[0] < MIN_PYRAMID_DIM or a.shape[1] < MIN_PYRAMID_DIM:
        raise ImageTooSmall(f"downsample2 needs at least {MIN_PYRAMID_DIM}x{MIN_PYRAMID_DIM}, got {a.shape[:2]}")
    blurred = correlate1d(a, BINOMIAL5, axis=0, mode="mirror")
    blurred = correlate1d(blurred, BINOMIAL5, axis=1, mode="mirror")
    return blurred[::2, ::2].copy()


def pyramid_shapes(h: int, w: int, levels: int) -> list[tuple[int, int]]:
    shapes = [(h, w)]
    for _ in range(levels - 1):
        h, w = (h + 1) // 2, (w + 1) // 2
        shapes.append((h, w))
    return shapes


def build_pyramid(img, levels: int) -> list[np.ndarray]:
    """Return ``[finest, ..., coarsest]`` with ``levels`` entries."""
    if levels < 1:
        raise ValueError("levels must be >= 1")
    a = np.asarray(img, dtype=np.float64)
    shapes = pyramid_shapes(a.shape[0], a.shape[1], levels)
    if levels > 1 and min(shapes[-1]) < MIN_PYRAMID_DIM:
        raise TooManyLevels(
            f"{levels} levels on a {a.shape[0]}x{a.shape[1]} image gives a "
            f"{shapes[-1][0]}x{shapes[-1][1]} coarsest level (< {MIN_PYRAMID_DIM}x{MIN_PYRAMID_DIM})"
        )
    pyr = [a]
    for _ in range(levels - 1):
        pyr.append(downsample2(pyr[-1]))
    return pyr


def _interp_coords(n_src: int, n_dst: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    scale = n_dst / n_src
    pos = np.clip(np.arange(n_dst) / scale, 0.0, n_src - 1)
    i0 = np.minimum(np.floor(pos).astype(np.intp), max(n_src - 2, 0))
    i1 = np.minimum(i0 + 1, n_src - 1)
    return i0, i1, pos - i0


def upsample_flow(flow, target_h: int, target_w: int) -> np.ndarray:
    """Bilinearly resample a flow field onto a finer grid and rescale it.

    Target pixel ``x`` reads the source at ``x * source_w / target_w`` (same
    for rows); ``u`` is multiplied by ``target_w / source_w`` and ``v`` by
    ``target_h / source_h``.
    """
    f = as_flow(flow)
    h, w = f.shape[:2]
    if target_h < h or target_w < w:
        raise BadDims(f"target {target_h}x{target_w} is smaller than source {h}x{w}")
    y0, y1, fy = _interp_coords(h, target_h)
    x0, x1, fx = _interp_coords(w, target_w)
    fy = fy[:, None, None]
    fx = fx[None, :, None]
    top = (1.0 - fx) * f[y0][:, x0] + fx * f[y0][:, x1]
    bot = (1.0 - fx) * f[y1][:, x0] + fx * f[y1][:, x1]
    out = (1.0 - fy) * top + fy * bot
    out[..., 0] *= target_w / w
    out[..., 1] *= target_h / h
    return out
