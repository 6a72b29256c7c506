"""Backward warping with analytic sampling Jacobians."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .core import as_flow, directional_gradient
from .errors import DimMismatch

# A bilinearly sampled validity indicator below this counts as touching an
# invalid tap (the fused photometric kernels hard-code the same value).
_INDICATOR_TOL = 1e-9


@dataclass(frozen=True)
class WarpResult:
    """A source field sampled at ``p + flow(p)``.

    ``jac_u``/``jac_v`` are d(warped)/du and d(warped)/dv, shaped like
    ``warped``.  ``valid`` is False where the unclamped sample point leaves
    ``[0, W-1] x [0, H-1]`` (and, for gradient images, where any weighted tap
    hits a pixel whose gradient is undefined).
    """

    warped: np.ndarray
    valid: np.ndarray
    jac_u: np.ndarray
    jac_v: np.ndarray


def _as_field(src) -> np.ndarray:
    a = np.asarray(src, dtype=np.float64)
    if a.ndim == 2:
        a = a[:, :, None]
    if a.ndim != 3:
        raise DimMismatch(f"source must be HxW or HxWxC, got shape {a.shape}")
    return a


def _check(src: np.ndarray, flow) -> np.ndarray:
    if src.shape[0] < 2 or src.shape[1] < 2:
        raise DimMismatch(f"source must be at least 2x2, got {src.shape[:2]}")
    try:
        return as_flow(flow, src.shape[:2])
    except DimMismatch as exc:
        raise DimMismatch(f"flow/source size mismatch: {exc}") from None


def bilinear_sample(src, flow) -> WarpResult:
    """Bilinearly sample ``src`` at ``p + flow(p)`` for every pixel ``p``.

    Sample points are clamped to the image for the lookup.  On lattice lines
    the Jacobian is taken from the cell to the right of / below the point.
    """
    a = _as_field(src)
    f = _check(a, flow)
    warped, ju, jv, valid = kernels.bilinear_sample(a, f)
    return WarpResult(warped, valid, ju, jv)


def gradient_stack(src: np.ndarray, directions) -> tuple[np.ndarray, list[np.ndarray]]:
    """Stack ``src``'s directional gradients with their validity indicators.

    Returns ``(stack, masks)`` where ``stack`` is ``(H, W, n*C + n)``: the n
    gradient images followed by n float indicators (1 = defined).
    """
    grads, masks = [], []
    for d in directions:
        g, m = directional_gradient(src, d)
        grads.append(g)
        masks.append(m)
    indicators = np.stack(masks, axis=-1).astype(np.float64)
    return np.concatenate(grads + [indicators], axis=-1), masks


def warp_gradient_images(src, flow, directions) -> list[WarpResult]:
    """Take each directional gradient of ``src``, then sample it at ``p + flow(p)``."""
    a = _as_field(src)
    f = _check(a, flow)
    dirs = list(directions)
    c = a.shape[2]
    stack, _ = gradient_stack(a, dirs)
    warped, ju, jv, valid = kernels.bilinear_sample(stack, f)
    results = []
    n = len(dirs)
    for i in range(n):
        sl = slice(i * c, (i + 1) * c)
        ok = valid & (warped[:, :, n * c + i] > 1.0 - _INDICATOR_TOL)
        results.append(WarpResult(warped[:, :, sl], ok, ju[:, :, sl], jv[:, :, sl]))
    return results
