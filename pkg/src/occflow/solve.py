"""Coarse-to-fine estimation of the backward/forward flow pair with Adam."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
from scipy.ndimage import gaussian_filter

from .core import MIN_PYRAMID_DIM, as_image, build_pyramid, upsample_flow
from .errors import DimMismatch, ImageTooSmall, NonFiniteGradient, NonFiniteLoss
from .loss import OCCLUSION_MODES, FlowObjective, LossConfig

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SolveConfig:
    levels: int = 4
    iterations_per_level: int = 300
    step_size: float = 0.05
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    convergence_tol: float = 1e-6
    convergence_window: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.levels < 1:
            raise ValueError("levels must be >= 1")
        if self.iterations_per_level < 1:
            raise ValueError("iterations_per_level must be >= 1")
        if not self.step_size > 0:
            raise ValueError("step_size must be > 0")
        for name in ("adam_beta1", "adam_beta2"):
            if not 0.0 <= getattr(self, name) < 1.0:
                raise ValueError(f"{name} must be in [0, 1)")
        if not self.adam_eps > 0:
            raise ValueError("adam_eps must be > 0")
        if self.convergence_tol < 0:
            raise ValueError("convergence_tol must be >= 0")
        if self.convergence_window < 1:
            raise ValueError("convergence_window must be >= 1")

    def replace(self, **changes) -> "SolveConfig":
        return replace(self, **changes)


@dataclass
class SolverState:
    F_b: np.ndarray
    F_f: np.ndarray
    m: np.ndarray               # first moments, (2, H, W, 2) for (F_b, F_f)
    v: np.ndarray               # second moments
    iteration: int = 0
    losses: list[float] = field(default_factory=list)

    @classmethod
    def zeros(cls, h: int, w: int) -> "SolverState":
        return cls.from_flows(np.zeros((h, w, 2)), np.zeros((h, w, 2)))

    @classmethod
    def from_flows(cls, F_b, F_f) -> "SolverState":
        F_b = np.array(F_b, dtype=np.float64)
        F_f = np.array(F_f, dtype=np.float64)
        if F_b.shape != F_f.shape:
            raise DimMismatch(f"F_b {F_b.shape} vs F_f {F_f.shape}")
        return cls(F_b, F_f, np.zeros((2,) + F_b.shape), np.zeros((2,) + F_b.shape))


@dataclass
class LevelTrace:
    level_index: int            # 1 = finest
    shape: tuple[int, int]
    losses: list[float]
    converged: bool

    @property
    def iterations(self) -> int:
        return len(self.losses)


@dataclass
class SolveReport:
    levels: list[LevelTrace]

    @property
    def final_loss(self) -> float:
        return self.levels[-1].losses[-1]


def adam_step(state: SolverState, grads, scfg: SolveConfig | None = None) -> SolverState:
    """One bias-corrected Adam update of both flows; returns a new state."""
    scfg = scfg or SolveConfig()
    g = np.stack([np.asarray(grads[0], dtype=np.float64), np.asarray(grads[1], dtype=np.float64)])
    if g.shape != state.m.shape:
        raise DimMismatch(f"gradient shape {g.shape[1:]} does not match flow shape {state.m.shape[1:]}")
    if not np.all(np.isfinite(g)):
        raise NonFiniteGradient(f"non-finite gradient at iteration {state.iteration}")
    b1, b2 = scfg.adam_beta1, scfg.adam_beta2
    t = state.iteration + 1
    m = b1 * state.m + (1.0 - b1) * g
    v = b2 * state.v + (1.0 - b2) * g * g
    m_hat = m / (1.0 - b1 ** t)
    v_hat = v / (1.0 - b2 ** t)
    delta = scfg.step_size * m_hat / (np.sqrt(v_hat) + scfg.adam_eps)
    return SolverState(state.F_b - delta[0], state.F_f - delta[1], m, v, t, list(state.losses))


def _converged(losses: list[float], window: int, tol: float) -> bool:
    if len(losses) <= window:
        return False
    old, new = losses[-1 - window], losses[-1]
    return abs(new - old) <= tol * max(abs(old), np.finfo(float).tiny)


def solve_level(objective: FlowObjective, state: SolverState, scfg: SolveConfig,
                callback: Callable | None = None) -> tuple[SolverState, LevelTrace]:
    """Run Adam on one pyramid level starting from ``state``'s flows."""
    state = SolverState.from_flows(state.F_b, state.F_f)
    converged = False
    for _ in range(scfg.iterations_per_level):
        br, grads = objective.evaluate(state.F_b, state.F_f, need_grad=True)
        if not np.isfinite(br.total):
            raise NonFiniteLoss(
                f"loss became {br.total} at level {objective.level_index}, iteration {state.iteration}", state
            )
        state.losses.append(br.total)
        if callback is not None:
            callback(objective.level_index, state.iteration, br)
        if _converged(state.losses, scfg.convergence_window, scfg.convergence_tol):
            converged = True
            break
        state = adam_step(state, grads, scfg)
    return state, LevelTrace(objective.level_index, objective.shape, list(state.losses), converged)


def estimate_flow(I_prev, I_t, I_next, scfg: SolveConfig | None = None, lcfg: LossConfig | None = None,
                  callback: Callable | None = None):
    """Estimate ``(F_b, F_f)`` for the middle frame of a triplet.

    Both flows start at zero on the coarsest pyramid level, are refined by
    Adam on the occlusion-weighted objective, and are upsampled to seed the
    next finer level.

    Args:
        callback: optional ``f(level_index, iteration, LossBreakdown)`` called
            once per evaluated iteration.

    Returns:
        ``(F_b, F_f, SolveReport)``; the report lists levels coarse to fine.
    """
    scfg = scfg or SolveConfig()
    lcfg = lcfg or LossConfig()
    prev, curr, nxt = as_image(I_prev), as_image(I_t), as_image(I_next)
    if not (prev.shape == curr.shape == nxt.shape):
        raise DimMismatch(f"triplet shapes differ: {prev.shape}, {curr.shape}, {nxt.shape}")
    need = 2 ** (scfg.levels - 1) * MIN_PYRAMID_DIM
    if min(curr.shape[:2]) < need:
        raise ImageTooSmall(f"{scfg.levels} levels need images of at least {need}x{need}, got {curr.shape[:2]}")

    pyramids = [build_pyramid(img, scfg.levels) for img in (prev, curr, nxt)]
    traces = []
    state = None
    for idx in range(scfg.levels, 0, -1):
        p, c, n = (pyr[idx - 1] for pyr in pyramids)
        h, w = c.shape[:2]
        if state is None:
            state = SolverState.zeros(h, w)
        else:
            state = SolverState.from_flows(upsample_flow(state.F_b, h, w), upsample_flow(state.F_f, h, w))
        objective = FlowObjective(p, c, n, lcfg, level_index=idx)
        state, trace = solve_level(objective, state, scfg, callback)
        log.debug("level %d (%dx%d): %d iterations, loss %.6g", idx, h, w, trace.iterations, trace.losses[-1])
        traces.append(trace)
    return state.F_b, state.F_f, SolveReport(traces)


# -- gradient checking -----------------------------------------------------------

def finite_diff_gradient(objective: Callable[[np.ndarray], float], F, h: float = 1e-3) -> np.ndarray:
    """Central differences ``(L(F + h e_i) - L(F - h e_i)) / 2h`` for every entry of ``F``."""
    if not h > 0:
        raise ValueError("h must be > 0")
    F = np.array(F, dtype=np.float64)
    grad = np.empty_like(F)
    flat, gflat = F.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = objective(F)
        flat[i] = orig - h
        down = objective(F)
        flat[i] = orig
        gflat[i] = (up - down) / (2.0 * h)
    return grad


def relative_error(a, b, floor: float = 1e-8) -> np.ndarray:
    a, b = np.asarray(a), np.asarray(b)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def smooth_texture(rng: np.random.Generator, h: int, w: int, channels: int = 1, sigma: float = 1.0) -> np.ndarray:
    """Blurred uniform noise stretched to [0, 1]."""
    img = gaussian_filter(rng.random((h, w, channels)), sigma=(sigma, sigma, 0), mode="reflect")
    lo, hi = img.min(), img.max()
    return (img - lo) / (hi - lo) if hi > lo else np.full_like(img, 0.5)


def random_flow(rng: np.random.Generator, h: int, w: int, magnitude: float = 2.0, margin: float = 0.01) -> np.ndarray:
    """Uniform random flow whose sample points stay ``margin`` away from lattice lines.

    Bilinear sampling is only piecewise smooth and validity changes at the
    image border, so a finite-difference probe must not straddle either.
    """
    flow = rng.uniform(-magnitude, magnitude, (h, w, 2))
    grid = np.stack(np.meshgrid(np.arange(w), np.arange(h)), axis=-1).astype(np.float64)
    for _ in range(100):
        frac = (grid + flow) % 1.0
        bad = (frac < margin) | (frac > 1.0 - margin)
        if not bad.any():
            return flow
        flow[bad] = rng.uniform(-magnitude, magnitude, int(bad.sum()))
    raise RuntimeError("could not place sample points away from the lattice")


@dataclass
class GradcheckReport:
    max_rel_error: float
    trials: int
    occlusion_mode: str
    worst: tuple | None = None          # (trial, flow index 0=b/1=f, y, x, component)
    failing: list[tuple] = field(default_factory=list)
    tolerance: float = 1e-4

    @property
    def ok(self) -> bool:
        return self.max_rel_error <= self.tolerance


def gradcheck(scfg: SolveConfig | None = None, lcfg: LossConfig | None = None, size: int = 8, trials: int = 100,
              seed: int | None = None, h: float = 1e-3, channels: int = 1, tolerance: float = 1e-4,
              corrupt: bool = False) -> GradcheckReport:
    """Compare the analytic gradient with central differences on random instances.

    Occlusion weights are computed once per instance and frozen for both
    routes, matching the stop-gradient used by the analytic path.  With
    ``corrupt`` a unit error is injected into one analytic entry per trial.
    """
    scfg = scfg or SolveConfig()
    lcfg = lcfg or LossConfig()
    if size < 4:
        raise ValueError("size must be >= 4")
    if trials < 1:
        raise ValueError("trials must be >= 1")
    rng = np.random.default_rng(scfg.seed if seed is None else seed)
    worst, worst_at, failing = 0.0, None, []
    for trial in range(trials):
        imgs = [smooth_texture(rng, size, size, channels) for _ in range(3)]
        obj = FlowObjective(*imgs, lcfg)
        pair = np.stack([random_flow(rng, size, size), random_flow(rng, size, size)])
        br, (gb, gf) = obj.evaluate(pair[0], pair[1], need_grad=True)
        analytic = np.stack([gb, gf])
        if corrupt:
            analytic[tuple(rng.integers(0, s) for s in analytic.shape)] += 1.0
        frozen = (br.w_b, br.w_f)
        numeric = finite_diff_gradient(lambda X: obj(X[0], X[1], frozen), pair, h)
        rel = relative_error(analytic, numeric)
        for idx in zip(*np.nonzero(rel > tolerance)):
            failing.append((trial,) + tuple(int(i) for i in idx))
        k = np.unravel_index(np.argmax(rel), rel.shape)
        if rel[k] > worst or worst_at is None:
            worst = float(rel[k])
            worst_at = (trial,) + tuple(int(i) for i in k)
    return GradcheckReport(worst, trials, lcfg.occlusion_mode, worst_at, failing, tolerance)


def gradcheck_all_modes(scfg=None, lcfg=None, **kwargs) -> list[GradcheckReport]:
    lcfg = lcfg or LossConfig()
    return [gradcheck(scfg, lcfg.replace(occlusion_mode=mode), **kwargs) for mode in OCCLUSION_MODES]
