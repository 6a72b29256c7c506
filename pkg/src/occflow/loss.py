"""Occlusion-weighted photometric + edge-aware smoothness objective.

The objective for a frame triplet ``(I_prev, I_t, I_next)`` and the two flows
``F_b`` (t -> t-1) and ``F_f`` (t -> t+1) is::

    total = level_weight * (lambda_p * (lambda_p1st * p1st + lambda_p2nd * p2nd)
                            + lambda_s * lambda_s2nd * smooth)

Every term is a mean over valid pixels rather than a raw sum.  Per-pixel
occlusion weights ``w_b``/``w_f`` are recomputed from the current errors and
held constant when differentiating.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import NamedTuple, Sequence

import numpy as np
from scipy.special import expit

from . import kernels
from .core import DIRECTIONS_4, Direction, as_flow, as_image, directional_gradient, parse_directions, shift_slices
from .errors import AllPixelsInvalid, DimMismatch
from .warp import gradient_stack

OCCLUSION_MODES = ("soft", "hard_min", "off")
SMOOTH_ORDERS = ("second", "first")
LEVEL_DECAY = 2.0 * math.sqrt(2.0)


@dataclass(frozen=True)
class LossConfig:
    lambda_p: float = 1.0
    lambda_s: float = 1.0
    lambda_p1st: float = 0.06
    lambda_p2nd: float = 8.0
    lambda_s2nd: float = 10.0
    epsilon: float = 1e-4
    kappa: float = 2.0
    alpha: float = 10.0
    directions: tuple[Direction, ...] = DIRECTIONS_4
    occlusion_mode: str = "soft"
    smooth_order: str = "second"
    # None: smooth along ``directions`` as well
    smooth_directions: tuple[Direction, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "directions", parse_directions(self.directions))
        if self.smooth_directions is not None:
            object.__setattr__(self, "smooth_directions", parse_directions(self.smooth_directions))
        for name in ("lambda_p", "lambda_s", "lambda_p1st", "lambda_p2nd", "lambda_s2nd"):
            if not getattr(self, name) >= 0:
                raise ValueError(f"{name} must be >= 0")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be > 0")
        if not self.kappa > 0:
            raise ValueError("kappa must be > 0")
        if not self.alpha >= 0:
            raise ValueError("alpha must be >= 0")
        if self.occlusion_mode not in OCCLUSION_MODES:
            raise ValueError(f"occlusion_mode must be one of {OCCLUSION_MODES}")
        if self.smooth_order not in SMOOTH_ORDERS:
            raise ValueError(f"smooth_order must be one of {SMOOTH_ORDERS}")

    @property
    def smoothness_directions(self) -> tuple[Direction, ...]:
        return self.directions if self.smooth_directions is None else self.smooth_directions

    def level_weight(self, level_index: int) -> float:
        """Multiplier for pyramid level ``level_index`` (1 = finest)."""
        if level_index < 1:
            raise ValueError("level_index starts at 1")
        w = 1.0
        for _ in range(level_index - 1):
            w /= LEVEL_DECAY
        return w

    def level_weights(self, levels: int) -> tuple[float, ...]:
        return tuple(self.level_weight(i) for i in range(1, levels + 1))

    def replace(self, **changes) -> "LossConfig":
        return replace(self, **changes)


class Triplet(NamedTuple):
    prev: np.ndarray
    curr: np.ndarray
    next: np.ndarray


@dataclass
class LossBreakdown:
    total: float
    p1st: float
    p2nd: float
    smooth: float
    level_weight: float = 1.0
    E_b: np.ndarray | None = field(default=None, repr=False)
    E_f: np.ndarray | None = field(default=None, repr=False)
    w_b: np.ndarray | None = field(default=None, repr=False)
    w_f: np.ndarray | None = field(default=None, repr=False)
    valid_b: np.ndarray | None = field(default=None, repr=False)
    valid_f: np.ndarray | None = field(default=None, repr=False)


def charbonnier(x, epsilon=1e-4, kappa=2.0):
    """Generalized Charbonnier penalty ``(x**2 + epsilon**2) ** kappa``."""
    x = np.asarray(x, dtype=np.float64)
    return (x * x + epsilon * epsilon) ** kappa


def charbonnier_grad(x, epsilon=1e-4, kappa=2.0):
    x = np.asarray(x, dtype=np.float64)
    return 2.0 * kappa * x * (x * x + epsilon * epsilon) ** (kappa - 1.0)


def occlusion_weights(E_b, E_f) -> tuple[np.ndarray, np.ndarray]:
    """Softmax occlusion weights; the direction with the larger error gets less weight.

    ``w_f = 1 - e^E_f / (e^E_b + e^E_f)`` is evaluated as ``expit(E_b - E_f)``,
    which cannot overflow and swaps exactly when the inputs are swapped.
    """
    E_b = np.asarray(E_b, dtype=np.float64)
    E_f = np.asarray(E_f, dtype=np.float64)
    if E_b.shape != E_f.shape:
        raise DimMismatch(f"E_b {E_b.shape} vs E_f {E_f.shape}")
    return expit(E_f - E_b), expit(E_b - E_f)


def photometric_error(target, source, flow):
    """Warp ``source`` onto ``target`` with ``flow`` and compare.

    Returns:
        ``(E, signed, valid)``: the channel-mean absolute error (H, W), the
        signed per-channel difference ``target - warped`` and the warp
        validity mask.
    """
    t = as_image(target)
    s = as_image(source)
    if t.shape != s.shape:
        raise DimMismatch(f"target {t.shape} vs source {s.shape}")
    f = as_flow(flow, t.shape[:2])
    warped, _, _, valid = kernels.bilinear_sample(s, f)
    signed = t - warped
    return np.mean(np.abs(signed), axis=2), signed, valid


def edge_weight(img, d, alpha) -> tuple[np.ndarray, np.ndarray]:
    """``exp(-alpha * mean_c |grad_d img|)`` and the gradient's validity."""
    g, valid = directional_gradient(img, d)
    return np.exp(-alpha * np.mean(np.abs(g), axis=2)), valid


class _Side(NamedTuple):
    E: np.ndarray
    m1: np.ndarray               # (H, W) bool
    c1: np.ndarray               # channel-mean Charbonnier, (H, W)
    m2: np.ndarray               # (H, W, n) bool, one slice per direction
    c2: np.ndarray               # (H, W, n)
    g1: np.ndarray | None        # d c1 / d flow, (H, W, 2)
    g2: np.ndarray | None        # (H, W, n, 2)


class FlowObjective:
    """The full objective for one triplet at one pyramid level.

    Everything that does not depend on the flows (gradient images, edge
    weights, stacked sampling sources) is computed once here.
    """

    def __init__(self, prev, curr, nxt, cfg: LossConfig | None = None, level_index: int = 1):
        self.cfg = cfg = cfg or LossConfig()
        prev, curr, nxt = as_image(prev), as_image(curr), as_image(nxt)
        if not (prev.shape == curr.shape == nxt.shape):
            raise DimMismatch(f"triplet shapes differ: {prev.shape}, {curr.shape}, {nxt.shape}")
        self.shape = curr.shape[:2]
        self.channels = curr.shape[2]
        self.level_index = level_index
        self.level_weight = cfg.level_weight(level_index)
        self.curr = np.ascontiguousarray(curr)
        dirs = cfg.directions
        self._n = len(dirs)

        tstack, tmasks = gradient_stack(curr, dirs)
        self._target_grads = np.ascontiguousarray(tstack[:, :, :self._n * self.channels])
        self._target_masks = np.ascontiguousarray(np.stack(tmasks, axis=-1).astype(np.uint8))
        self._sources = {}
        for key, img in (("b", prev), ("f", nxt)):
            gstack, _ = gradient_stack(img, dirs)
            self._sources[key] = np.ascontiguousarray(np.concatenate([img, gstack], axis=-1))

        self._smooth = []
        for d in cfg.smoothness_directions:
            wt, valid = edge_weight(curr, d, cfg.alpha)
            self._smooth.append((d, np.ascontiguousarray(wt), valid))

    # -- pieces ---------------------------------------------------------------

    def _side(self, key: str, flow: np.ndarray, need_grad: bool) -> _Side:
        cfg = self.cfg
        return _Side(*kernels.photometric_side(self._sources[key], flow, self.curr, self._target_grads,
                                               self._target_masks, self._n, cfg.epsilon, cfg.kappa, need_grad))

    def _weights(self, sb: _Side, sf: _Side, n1: float, n2: np.ndarray):
        mode = self.cfg.occlusion_mode
        if mode == "soft":
            return occlusion_weights(sb.E, sf.E)
        if mode == "off":
            half = np.full(self.shape, 0.5)
            return half, half.copy()
        # hard_min: keep the direction whose per-pixel photometric penalty is
        # smaller; an invalid term counts as zero penalty.
        pb, pf = self._pixel_penalty(sb, n1, n2), self._pixel_penalty(sf, n1, n2)
        w_b = np.where(pb < pf, 1.0, np.where(pb > pf, 0.0, 0.5))
        return w_b, 1.0 - w_b

    def _pixel_penalty(self, side: _Side, n1: float, n2: np.ndarray) -> np.ndarray:
        cfg = self.cfg
        pen = cfg.lambda_p1st * np.where(side.m1, side.c1, 0.0) / n1
        inv2 = np.divide(1.0, n2, out=np.zeros_like(n2), where=n2 > 0)
        pen += cfg.lambda_p2nd * np.sum(np.where(side.m2, side.c2, 0.0) * inv2, axis=2)
        return cfg.lambda_p * pen

    def smoothness(self, F_b: np.ndarray, F_f: np.ndarray, need_grad: bool = False):
        """Return ``(smooth, grad_b, grad_f)`` for the unscaled smoothness mean."""
        total = 0.0
        gb = np.zeros_like(F_b) if need_grad else None
        gf = np.zeros_like(F_f) if need_grad else None
        for d, wt, valid in self._smooth:
            if self.cfg.smooth_order == "second":
                sb, count, db = kernels.smooth_second_order(F_b, wt, d.dx, d.dy, need_grad)
                sf, _, df = kernels.smooth_second_order(F_f, wt, d.dx, d.dy, need_grad)
            else:
                sb, count, db = _smooth_first_order(F_b, wt, valid, d, need_grad)
                sf, _, df = _smooth_first_order(F_f, wt, valid, d, need_grad)
            if count == 0:
                continue
            total += (sb + sf) / count
            if need_grad:
                gb += db / count
                gf += df / count
        return total, gb, gf

    # -- public ---------------------------------------------------------------

    def evaluate(self, F_b, F_f, weights=None, need_grad: bool = False):
        """Evaluate the objective.

        Args:
            F_b, F_f: (H, W, 2) flows towards the previous and next frame.
            weights: optional fixed ``(w_b, w_f)``; by default they are derived
                from the current errors according to ``occlusion_mode``.
            need_grad: also return the analytic gradient.

        Returns:
            ``LossBreakdown`` or ``(LossBreakdown, (grad_b, grad_f))``.
        """
        F_b = np.ascontiguousarray(as_flow(F_b, self.shape))
        F_f = np.ascontiguousarray(as_flow(F_f, self.shape))
        cfg = self.cfg
        sb = self._side("b", F_b, need_grad)
        sf = self._side("f", F_f, need_grad)

        n1 = 0.5 * (np.count_nonzero(sb.m1) + np.count_nonzero(sf.m1))
        if n1 == 0:
            raise AllPixelsInvalid("every warped pixel falls outside the frame")
        n2 = 0.5 * (np.count_nonzero(sb.m2, axis=(0, 1)) + np.count_nonzero(sf.m2, axis=(0, 1)))
        inv2 = np.divide(1.0, n2, out=np.zeros(self._n), where=n2 > 0)

        if weights is None:
            w_b, w_f = self._weights(sb, sf, n1, n2)
        else:
            w_b = np.broadcast_to(np.asarray(weights[0], dtype=np.float64), self.shape)
            w_f = np.broadcast_to(np.asarray(weights[1], dtype=np.float64), self.shape)

        # per-pixel coefficients of each penalty; zero where a term is invalid
        a1_b = np.where(sb.m1, w_b, 0.0) / n1
        a1_f = np.where(sf.m1, w_f, 0.0) / n1
        a2_b = np.where(sb.m2, w_b[:, :, None], 0.0) * inv2
        a2_f = np.where(sf.m2, w_f[:, :, None], 0.0) * inv2
        p1st = float(np.sum(a1_b * sb.c1) + np.sum(a1_f * sf.c1))
        p2nd = float(np.sum(a2_b * sb.c2) + np.sum(a2_f * sf.c2))
        smooth, sgb, sgf = self.smoothness(F_b, F_f, need_grad)

        lw = self.level_weight
        total = lw * (cfg.lambda_p * (cfg.lambda_p1st * p1st + cfg.lambda_p2nd * p2nd)
                      + cfg.lambda_s * cfg.lambda_s2nd * smooth)
        out = LossBreakdown(total, p1st, p2nd, smooth, lw, sb.E, sf.E, w_b, w_f, sb.m1, sf.m1)
        if not need_grad:
            return out

        kp, ks = lw * cfg.lambda_p, lw * cfg.lambda_s * cfg.lambda_s2nd
        k1, k2 = kp * cfg.lambda_p1st, kp * cfg.lambda_p2nd
        gb = k1 * a1_b[:, :, None] * sb.g1 + k2 * np.einsum("hwn,hwnk->hwk", a2_b, sb.g2) + ks * sgb
        gf = k1 * a1_f[:, :, None] * sf.g1 + k2 * np.einsum("hwn,hwnk->hwk", a2_f, sf.g2) + ks * sgf
        return out, (gb, gf)

    def __call__(self, F_b, F_f, weights=None) -> float:
        return self.evaluate(F_b, F_f, weights).total

    def gradient(self, F_b, F_f, weights=None):
        return self.evaluate(F_b, F_f, weights, need_grad=True)[1]


def _smooth_first_order(flow, weight, valid, d, need_grad):
    g, _ = directional_gradient(flow, d)
    wr = np.where(valid, weight, 0.0)[:, :, None] * g
    total = float(np.sum(wr * g))
    count = int(np.count_nonzero(valid))
    grad = None
    if need_grad:
        grad = 2.0 * wr
        # the subtracted neighbour p - d receives the opposite sign
        grad -= _shift_back(2.0 * wr, d)
    return total, count, grad


def _shift_back(a, d):
    """Move each value at ``p`` to ``p - d`` (dropping what leaves the grid)."""
    out = np.zeros_like(a)
    h, w = a.shape[:2]
    ry, sy = shift_slices(h, d.dy)
    rx, sx = shift_slices(w, d.dx)
    out[sy, sx] = a[ry, rx]
    return out


# -- functional API ------------------------------------------------------------

def _objective(I_t, I_prev, I_next, cfg, level_index=1) -> FlowObjective:
    return FlowObjective(I_prev, I_t, I_next, cfg, level_index)


def loss_p1st(I_t, I_prev, I_next, F_b, F_f, w_b, w_f, cfg: LossConfig | None = None) -> float:
    """Weighted first-order photometric term (mean over valid pixels)."""
    return _objective(I_t, I_prev, I_next, cfg).evaluate(F_b, F_f, (w_b, w_f)).p1st


def loss_p2nd(I_t, I_prev, I_next, F_b, F_f, w_b, w_f, cfg: LossConfig | None = None) -> float:
    """Weighted gradient-constancy term summed over ``cfg.directions``."""
    return _objective(I_t, I_prev, I_next, cfg).evaluate(F_b, F_f, (w_b, w_f)).p2nd


def loss_smooth(F_b, F_f, I_t, cfg: LossConfig | None = None) -> float:
    """Edge-aware smoothness of both flows, summed over directions."""
    I_t = as_image(I_t)
    obj = FlowObjective(I_t, I_t, I_t, cfg)
    F_b = np.ascontiguousarray(as_flow(F_b, obj.shape))
    F_f = np.ascontiguousarray(as_flow(F_f, obj.shape))
    return obj.smoothness(F_b, F_f)[0]


def total_loss(triplet: Sequence, F_b, F_f, cfg: LossConfig | None = None, level_index: int = 1) -> LossBreakdown:
    """Full objective for ``triplet = (I_prev, I_t, I_next)``."""
    prev, curr, nxt = triplet
    return FlowObjective(prev, curr, nxt, cfg, level_index).evaluate(F_b, F_f)


def loss_gradient(triplet: Sequence, F_b, F_f, cfg: LossConfig | None = None, level_index: int = 1):
    """Analytic ``(dL/dF_b, dL/dF_f)`` with the occlusion weights held fixed."""
    prev, curr, nxt = triplet
    return FlowObjective(prev, curr, nxt, cfg, level_index).gradient(F_b, F_f)
