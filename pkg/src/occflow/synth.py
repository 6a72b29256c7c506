"""Synthetic frame triplets with exact ground truth.

All images are quantized to the 8-bit grid, so writing them to PNG and
reading them back gives the same arrays.
"""
from __future__ import annotations

import math
import os
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import gaussian_filter, shift as nd_shift

SCENES = ("translate", "occluder", "diagonal")


@dataclass
class Scene:
    name: str
    prev: np.ndarray
    curr: np.ndarray
    next: np.ndarray
    flow_b: np.ndarray
    flow_f: np.ndarray
    # True where the pixel of the middle frame has no correspondence in the
    # previous / next frame (covered, or outside the frame).
    occ_b: np.ndarray
    occ_f: np.ndarray
    params: dict = field(default_factory=dict)
    # optional evaluation region, e.g. the band around a motion boundary
    region: np.ndarray | None = None

    @property
    def triplet(self):
        return self.prev, self.curr, self.next


def quantize8(img: np.ndarray) -> np.ndarray:
    return np.round(np.clip(img, 0.0, 1.0) * 255.0) / 255.0


def texture(rng: np.random.Generator, h: int, w: int, channels: int = 1,
            lo: float = 0.05, hi: float = 0.95) -> np.ndarray:
    """Multi-scale blurred noise stretched to ``[lo, hi]``."""
    img = np.zeros((h, w, channels))
    for sigma, amp in ((1.0, 0.5), (2.0, 1.0), (4.0, 1.0)):
        img += amp * gaussian_filter(rng.standard_normal((h, w, channels)), sigma=(sigma, sigma, 0), mode="wrap")
    a, b = img.min(), img.max()
    return lo + (hi - lo) * (img - a) / (b - a)


def _shifted(canvas: np.ndarray, dy: float, dx: float) -> np.ndarray:
    """``out(q) = canvas(q - (dy, dx))``."""
    if float(dx).is_integer() and float(dy).is_integer():
        return np.roll(canvas, (int(dy), int(dx)), axis=(0, 1))
    return nd_shift(canvas, (dy, dx, 0), order=3, mode="wrap")


def _out_of_frame(h: int, w: int, flow: np.ndarray) -> np.ndarray:
    ys, xs = np.mgrid[0:h, 0:w]
    X = xs + flow[..., 0]
    Y = ys + flow[..., 1]
    return (X < 0) | (X > w - 1) | (Y < 0) | (Y > h - 1)


def translate_scene(size: int = 64, dx: float = 2.0, dy: float = 0.0, seed: int = 0,
                    channels: int = 1, width: int | None = None) -> Scene:
    """A textured image translating by ``(dx, dy)`` per frame.

    The ground truth is ``F_f = (dx, dy)`` and ``F_b = (-dx, -dy)`` everywhere.
    """
    h, w = size, width or size
    pad = int(math.ceil(max(abs(dx), abs(dy)))) + 4
    rng = np.random.default_rng(seed)
    canvas = texture(rng, h + 2 * pad, w + 2 * pad, channels)
    crop = (slice(pad, pad + h), slice(pad, pad + w))
    curr = canvas[crop]
    nxt = _shifted(canvas, dy, dx)[crop]
    prev = _shifted(canvas, -dy, -dx)[crop]
    flow_f = np.broadcast_to(np.array([dx, dy], dtype=np.float64), (h, w, 2)).copy()
    flow_b = -flow_f
    return Scene("translate", quantize8(prev), quantize8(curr), quantize8(nxt), flow_b, flow_f,
                 _out_of_frame(h, w, flow_b), _out_of_frame(h, w, flow_f),
                 dict(size=size, dx=dx, dy=dy, seed=seed))


def occluder_scene(size: int = 64, speed: int = 3, block: int = 20, seed: int = 0, channels: int = 1,
                   bg_range: tuple[float, float] = (0.05, 0.95), fg_range: tuple[float, float] = (0.1, 0.9)) -> Scene:
    """A textured opaque block sliding right over a static textured background.

    At time t the block covers columns ``[x0, x0 + block)``.  Background just
    right of the block (leading edge) is covered at t+1, background just left
    of it (trailing edge) was covered at t-1; both bands are ``speed`` wide.
    """
    if speed < 0 or int(speed) != speed:
        raise ValueError("speed must be a non-negative integer")
    speed = int(speed)
    h = w = size
    if block + 2 * speed >= w or block >= h:
        raise ValueError("block and speed do not fit in the frame")
    rng = np.random.default_rng(seed)
    bg = texture(rng, h, w, channels, *bg_range)
    fg = texture(rng, block, block, channels, *fg_range)
    x0 = (w - block) // 2
    y0 = (h - block) // 2
    rows = slice(y0, y0 + block)

    def frame(k: int) -> np.ndarray:
        img = bg.copy()
        left = x0 + k * speed
        img[rows, left:left + block] = fg
        return quantize8(img)

    flow_f = np.zeros((h, w, 2))
    flow_b = np.zeros((h, w, 2))
    flow_f[rows, x0:x0 + block, 0] = speed
    flow_b[rows, x0:x0 + block, 0] = -speed
    occ_f = np.zeros((h, w), dtype=bool)
    occ_b = np.zeros((h, w), dtype=bool)
    occ_f[rows, x0 + block:x0 + block + speed] = True
    occ_b[rows, x0 - speed:x0] = True
    return Scene("occluder", frame(-1), frame(0), frame(1), flow_b, flow_f,
                 occ_b | _out_of_frame(h, w, flow_b), occ_f | _out_of_frame(h, w, flow_f),
                 dict(size=size, speed=speed, block=block, seed=seed))


def diagonal_scene(size: int = 64, speed: int = 2, seed: int = 0, channels: int = 1, band: float = 3.0) -> Scene:
    """Two textured half-planes split by the 45 degree line ``x = y``.

    The upper-right half slides along the edge by ``(speed, speed)`` per frame,
    the lower-left half is static, so the edge itself never moves and nothing
    is occluded except at the frame border.  ``region`` marks pixels within
    ``band`` px of the edge.
    """
    speed = int(speed)
    h = w = size
    pad = abs(speed) + 4
    rng = np.random.default_rng(seed)
    tex_a = texture(rng, h + 2 * pad, w + 2 * pad, channels)
    tex_b = texture(rng, h, w, channels)
    ys, xs = np.mgrid[0:h, 0:w]
    in_a = (xs - ys) > 0
    crop = (slice(pad, pad + h), slice(pad, pad + w))

    def frame(k: int) -> np.ndarray:
        moving = _shifted(tex_a, k * speed, k * speed)[crop]
        return quantize8(np.where(in_a[..., None], moving, tex_b))

    flow_f = np.zeros((h, w, 2))
    flow_f[in_a] = speed
    flow_b = -flow_f
    region = np.abs(xs - ys) / math.sqrt(2.0) <= band
    return Scene("diagonal", frame(-1), frame(0), frame(1), flow_b, flow_f,
                 _out_of_frame(h, w, flow_b), _out_of_frame(h, w, flow_f),
                 dict(size=size, speed=speed, seed=seed, band=band), region)


def make_scene(name: str, **params) -> Scene:
    if name == "translate":
        return translate_scene(**params)
    if name == "occluder":
        return occluder_scene(**params)
    if name == "diagonal":
        return diagonal_scene(**params)
    raise ValueError(f"unknown scene {name!r}; expected one of {SCENES}")


def write_scene(scene: Scene, out_dir) -> dict[str, str]:
    """Write frames, ground-truth flows and occlusion masks into ``out_dir``.

    Returns a mapping from role to the written path.
    """
    from . import flowio

    os.makedirs(out_dir, exist_ok=True)
    paths = {}

    def path(name):
        paths[name.split(".")[0]] = p = os.path.join(out_dir, name)
        return p

    flowio.write_image(scene.prev, path("prev.png"))
    flowio.write_image(scene.curr, path("curr.png"))
    flowio.write_image(scene.next, path("next.png"))
    flowio.write_flo(scene.flow_f, path("flow_fwd.flo"))
    flowio.write_flo(scene.flow_b, path("flow_bwd.flo"))
    flowio.write_image(scene.occ_f.astype(np.float64), path("occ_fwd.png"))
    flowio.write_image(scene.occ_b.astype(np.float64), path("occ_bwd.png"))
    h, w = scene.curr.shape[:2]
    flowio.write_kitti_flow(flowio.FlowFile(scene.flow_f, np.ones((h, w), dtype=bool)), path("gt_fwd_occ.png"))
    flowio.write_kitti_flow(flowio.FlowFile(scene.flow_f, ~scene.occ_f), path("gt_fwd_noc.png"))
    if scene.region is not None:
        flowio.write_image(scene.region.astype(np.float64), path("region.png"))
    with open(path("scene.txt"), "w") as fh:
        fh.write(f"scene={scene.name}\n")
        for k, v in scene.params.items():
            fh.write(f"{k}={v}\n")
    return paths
