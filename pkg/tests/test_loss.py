import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from occflow.core import DIRECTIONS_4, DIRECTIONS_AXIS, DIRECTIONS_PAPER
from occflow.errors import AllPixelsInvalid, DimMismatch
from occflow.loss import (
    FlowObjective,
    LossConfig,
    charbonnier,
    charbonnier_grad,
    loss_gradient,
    loss_p1st,
    loss_p2nd,
    loss_smooth,
    occlusion_weights,
    photometric_error,
    total_loss,
)
from occflow.solve import finite_diff_gradient, random_flow, relative_error, smooth_texture

from test_core import loop_gradient
from test_warp import bilinear_oracle


# -- scalar oracle -----------------------------------------------------------------

def _delta(x, cfg):
    return (x * x + cfg.epsilon ** 2) ** cfg.kappa


def _side_oracle(curr, src, flow, cfg):
    """Per-pixel E, m1, c1 and per-direction (m2, c2) by explicit loops."""
    h, w, c = curr.shape
    grads = [loop_gradient(src, d) for d in cfg.directions]
    tgrads = [loop_gradient(curr, d) for d in cfg.directions]
    E = np.zeros((h, w))
    m1 = np.zeros((h, w), dtype=bool)
    c1 = np.zeros((h, w))
    m2 = np.zeros((len(cfg.directions), h, w), dtype=bool)
    c2 = np.zeros((len(cfg.directions), h, w))
    for y in range(h):
        for x in range(w):
            X, Y = x + flow[y, x, 0], y + flow[y, x, 1]
            inside = 0 <= X <= w - 1 and 0 <= Y <= h - 1
            m1[y, x] = inside
            ws = bilinear_oracle(src, X, Y)
            E[y, x] = sum(abs(curr[y, x, k] - ws[k]) for k in range(c)) / c
            c1[y, x] = sum(_delta(curr[y, x, k] - ws[k], cfg) for k in range(c)) / c
            Xc, Yc = min(max(X, 0.0), w - 1.0), min(max(Y, 0.0), h - 1.0)
            x0, y0 = min(int(math.floor(Xc)), w - 2), min(int(math.floor(Yc)), h - 2)
            fx, fy = Xc - x0, Yc - y0
            taps = [((y0, x0), (1 - fx) * (1 - fy)), ((y0, x0 + 1), fx * (1 - fy)),
                    ((y0 + 1, x0), (1 - fx) * fy), ((y0 + 1, x0 + 1), fx * fy)]
            for i, ((g, gv), (tg, tv)) in enumerate(zip(grads, tgrads)):
                wg = bilinear_oracle(g, X, Y)
                m2[i, y, x] = inside and tv[y, x] and all(gv[p] for p, wt in taps if wt > 0)
                c2[i, y, x] = sum(_delta(tg[y, x, k] - wg[k], cfg) for k in range(c)) / c
    return E, m1, c1, m2, c2


def smooth_oracle(F_b, F_f, curr, cfg):
    h, w, c = curr.shape
    total = 0.0
    for d in cfg.smoothness_directions:
        acc, count = 0.0, 0
        for y in range(h):
            for x in range(w):
                ym, xm, yp, xp = y - d.dy, x - d.dx, y + d.dy, x + d.dx
                if cfg.smooth_order == "second":
                    if not (0 <= ym < h and 0 <= xm < w and 0 <= yp < h and 0 <= xp < w):
                        continue
                elif not (0 <= ym < h and 0 <= xm < w):
                    continue
                count += 1
                grad_i = sum(abs(curr[y, x, k] - curr[ym, xm, k]) for k in range(c)) / c
                wt = math.exp(-cfg.alpha * grad_i)
                for F in (F_b, F_f):
                    for k in range(2):
                        if cfg.smooth_order == "second":
                            r = F[ym, xm, k] - 2 * F[y, x, k] + F[yp, xp, k]
                        else:
                            r = F[y, x, k] - F[ym, xm, k]
                        acc += wt * r * r
        if count:
            total += acc / count
    return total


def objective_oracle(prev, curr, nxt, F_b, F_f, cfg, w_b, w_f, level_index=1):
    Eb, m1b, c1b, m2b, c2b = _side_oracle(curr, prev, F_b, cfg)
    Ef, m1f, c1f, m2f, c2f = _side_oracle(curr, nxt, F_f, cfg)
    n1 = (m1b.sum() + m1f.sum()) / 2
    p1st = float(np.sum(w_b * m1b * c1b + w_f * m1f * c1f) / n1)
    p2nd = 0.0
    for i in range(len(cfg.directions)):
        n2 = (m2b[i].sum() + m2f[i].sum()) / 2
        if n2:
            p2nd += float(np.sum(w_b * m2b[i] * c2b[i] + w_f * m2f[i] * c2f[i]) / n2)
    smooth = smooth_oracle(F_b, F_f, curr, cfg)
    lw = (2 * math.sqrt(2)) ** -(level_index - 1)
    total = lw * (cfg.lambda_p * (cfg.lambda_p1st * p1st + cfg.lambda_p2nd * p2nd)
                  + cfg.lambda_s * cfg.lambda_s2nd * smooth)
    return dict(total=total, p1st=p1st, p2nd=p2nd, smooth=smooth, E_b=Eb, E_f=Ef)


def _instance(seed, size=6, channels=1, mag=1.5):
    r = np.random.default_rng(seed)
    imgs = [r.random((size, size, channels)) for _ in range(3)]
    return imgs, random_flow(r, size, size, mag), random_flow(r, size, size, mag), r


# -- Charbonnier -------------------------------------------------------------------

class TestCharbonnier:
    def test_at_zero(self):
        assert charbonnier(0.0) == pytest.approx(1e-16, rel=1e-12)

    def test_at_one(self):
        assert charbonnier(1.0) == pytest.approx(1.00000002, rel=1e-12)

    def test_sublinear_high_precision(self):
        mpmath.mp.dps = 50
        ref = (mpmath.mpf("0.3") ** 2 + mpmath.mpf("1e-4") ** 2) ** mpmath.mpf("0.45")
        assert charbonnier(0.3, 1e-4, 0.45) == pytest.approx(float(ref), rel=1e-14)

    @settings(max_examples=200, deadline=None)
    @given(st.floats(-50, 50), st.sampled_from([0.45, 1.0, 2.0]))
    def test_even(self, x, kappa):
        assert charbonnier(x, 1e-4, kappa) == charbonnier(-x, 1e-4, kappa)

    @settings(max_examples=200, deadline=None)
    @given(st.floats(0, 50), st.floats(1e-6, 5), st.sampled_from([0.45, 1.0, 2.0]))
    def test_increasing_in_magnitude(self, x, dx, kappa):
        assert charbonnier(x + dx, 1e-4, kappa) > charbonnier(x, 1e-4, kappa)

    @pytest.mark.parametrize("kappa", [0.45, 2.0])
    def test_derivative(self, kappa):
        xs = np.linspace(-2, 2, 41)
        h = 1e-6
        fd = (charbonnier(xs + h, 1e-4, kappa) - charbonnier(xs - h, 1e-4, kappa)) / (2 * h)
        np.testing.assert_allclose(charbonnier_grad(xs, 1e-4, kappa), fd, rtol=1e-6, atol=1e-9)

    def test_epsilon_power(self):
        for kappa in (0.45, 2.0, 3.0):
            assert charbonnier(0.0, 1e-3, kappa) == pytest.approx(1e-3 ** (2 * kappa), rel=1e-12)


# -- occlusion weights -------------------------------------------------------------

class TestOcclusionWeights:
    def test_equal_errors(self):
        w_b, w_f = occlusion_weights(np.array([0.3]), np.array([0.3]))
        assert w_b[0] == 0.5 and w_f[0] == 0.5

    def test_high_precision_reference(self):
        mpmath.mp.dps = 50
        e10 = mpmath.e ** 10
        w_b, w_f = occlusion_weights(np.array([0.0]), np.array([10.0]))
        assert w_f[0] == pytest.approx(float(1 - e10 / (1 + e10)), rel=1e-13)
        assert w_b[0] == pytest.approx(float(e10 / (1 + e10)), rel=1e-15)
        assert w_f[0] == pytest.approx(4.54e-5, rel=1e-3)

    @settings(max_examples=300, deadline=None)
    @given(st.floats(-1e4, 1e4), st.floats(-1e4, 1e4))
    def test_complement_symmetry_finite(self, a, b):
        w_b, w_f = occlusion_weights(np.array([a]), np.array([b]))
        assert np.isfinite(w_b).all() and np.isfinite(w_f).all()
        assert abs(w_b[0] + w_f[0] - 1.0) <= 1e-12
        s_b, s_f = occlusion_weights(np.array([b]), np.array([a]))
        assert s_b[0] == w_f[0] and s_f[0] == w_b[0]

    @settings(max_examples=300, deadline=None)
    @given(st.floats(-100, 100), st.floats(-100, 100))
    def test_monotone(self, a, b):
        w_b, w_f = occlusion_weights(np.array([a]), np.array([b]))
        if b > a:
            assert w_f[0] <= w_b[0]
        # strictness is exact wherever the weights are representable apart from 0.5
        if b - a > 1e-12:
            assert w_f[0] < w_b[0]

    def test_shape_mismatch(self):
        with pytest.raises(DimMismatch):
            occlusion_weights(np.zeros(3), np.zeros(4))


# -- photometric error -------------------------------------------------------------

class TestPhotometricError:
    def test_identity(self, rng):
        img = rng.random((5, 5, 3))
        E, signed, valid = photometric_error(img, img, np.zeros((5, 5, 2)))
        assert np.all(E == 0) and valid.all()

    def test_constant_images(self, rng):
        t, s = np.full((6, 6, 1), 0.8), np.full((6, 6, 1), 0.3)
        E, signed, _ = photometric_error(t, s, rng.uniform(-2, 2, (6, 6, 2)))
        np.testing.assert_allclose(E, 0.5, atol=1e-15)
        np.testing.assert_allclose(signed, 0.5, atol=1e-15)

    def test_matches_oracle(self, rng):
        t, s = rng.random((5, 5, 3)), rng.random((5, 5, 3))
        flow = rng.uniform(-2, 2, (5, 5, 2))
        E, signed, valid = photometric_error(t, s, flow)
        for y in range(5):
            for x in range(5):
                X, Y = x + flow[y, x, 0], y + flow[y, x, 1]
                ref = t[y, x] - bilinear_oracle(s, X, Y)
                np.testing.assert_allclose(signed[y, x], ref, atol=1e-14)
                assert abs(E[y, x] - np.mean(np.abs(ref))) <= 1e-14
                assert valid[y, x] == (0 <= X <= 4 and 0 <= Y <= 4)

    def test_dim_mismatch(self):
        with pytest.raises(DimMismatch):
            photometric_error(np.zeros((4, 4)), np.zeros((4, 5)), np.zeros((4, 4, 2)))


# -- loss terms --------------------------------------------------------------------

class TestFirstOrder:
    def test_identical_triplet(self, rng):
        img = rng.random((6, 6, 3))
        z = np.zeros((6, 6, 2))
        half = np.full((6, 6), 0.5)
        assert loss_p1st(img, img, img, z, z, half, half) == pytest.approx(1e-16, rel=1e-9)

    def test_off_is_half_unweighted(self):
        (prev, curr, nxt), F_b, F_f, _ = _instance(1)
        cfg = LossConfig()
        ones = np.ones((6, 6))
        half = 0.5 * ones
        unweighted = loss_p1st(curr, prev, nxt, F_b, F_f, ones, ones, cfg)
        assert loss_p1st(curr, prev, nxt, F_b, F_f, half, half, cfg) == pytest.approx(0.5 * unweighted, rel=1e-14)

    @pytest.mark.parametrize("channels", [1, 3])
    def test_matches_oracle(self, channels):
        (prev, curr, nxt), F_b, F_f, r = _instance(2, size=4, channels=channels)
        w_b = r.random((4, 4))
        w_f = 1 - w_b
        cfg = LossConfig(kappa=0.45)
        ref = objective_oracle(prev, curr, nxt, F_b, F_f, cfg, w_b, w_f)
        assert loss_p1st(curr, prev, nxt, F_b, F_f, w_b, w_f, cfg) == pytest.approx(ref["p1st"], rel=1e-12)

    def test_all_invalid(self):
        img = np.full((4, 4, 1), 0.5)
        far = np.full((4, 4, 2), 50.0)
        half = np.full((4, 4), 0.5)
        with pytest.raises(AllPixelsInvalid):
            loss_p1st(img, img, img, far, far, half, half)


class TestSecondOrder:
    def test_identical_triplet(self, rng):
        img = rng.random((6, 6, 1))
        z = np.zeros((6, 6, 2))
        half = np.full((6, 6), 0.5)
        assert loss_p2nd(img, img, img, z, z, half, half) == pytest.approx(4e-16, rel=1e-9)

    @pytest.mark.parametrize("dirs", [DIRECTIONS_4, DIRECTIONS_PAPER, DIRECTIONS_AXIS])
    def test_constant_images_any_flow(self, rng, dirs):
        img = np.full((6, 6, 1), 0.3)
        cfg = LossConfig(directions=dirs)
        br = total_loss((img, img, img), rng.uniform(-2, 2, (6, 6, 2)), rng.uniform(-2, 2, (6, 6, 2)), cfg)
        assert br.p2nd == pytest.approx(len(dirs) * 1e-16, rel=1e-12)

    @pytest.mark.parametrize("dirs", [DIRECTIONS_4, DIRECTIONS_PAPER])
    def test_matches_oracle(self, dirs):
        (prev, curr, nxt), F_b, F_f, r = _instance(3, size=6, channels=3)
        w_b = r.random((6, 6))
        cfg = LossConfig(directions=dirs)
        ref = objective_oracle(prev, curr, nxt, F_b, F_f, cfg, w_b, 1 - w_b)
        assert loss_p2nd(curr, prev, nxt, F_b, F_f, w_b, 1 - w_b, cfg) == pytest.approx(ref["p2nd"], rel=1e-12)


class TestSmoothness:
    @pytest.mark.parametrize("order", ["second", "first"])
    def test_constant_flow(self, rng, order):
        F = np.broadcast_to(np.array([1.3, -0.4]), (7, 7, 2))
        assert loss_smooth(F, F, rng.random((7, 7, 1)), LossConfig(smooth_order=order)) == 0.0

    def test_affine_flow(self, rng):
        ys, xs = np.mgrid[0:7, 0:8].astype(np.float64)
        F = np.stack([0.5 + 0.25 * xs - 0.125 * ys, -1.0 + 0.5 * xs + 0.375 * ys], axis=-1)
        assert loss_smooth(F, -F, rng.random((7, 8, 3)), LossConfig()) == pytest.approx(0.0, abs=1e-28)

    @pytest.mark.parametrize("order", ["second", "first"])
    @pytest.mark.parametrize("alpha", [0.0, 10.0])
    def test_matches_oracle(self, rng, order, alpha):
        img = rng.random((6, 7, 3))
        F_b, F_f = rng.normal(0, 1, (6, 7, 2)), rng.normal(0, 1, (6, 7, 2))
        cfg = LossConfig(alpha=alpha, smooth_order=order)
        assert loss_smooth(F_b, F_f, img, cfg) == pytest.approx(smooth_oracle(F_b, F_f, img, cfg), rel=1e-12)

    def test_smooth_directions_override(self, rng):
        img = rng.random((6, 6, 1))
        F = rng.normal(0, 1, (6, 6, 2))
        cfg = LossConfig(directions="4", smooth_directions="axis")
        assert cfg.smoothness_directions == DIRECTIONS_AXIS
        assert loss_smooth(F, F, img, cfg) == pytest.approx(smooth_oracle(F, F, img, cfg), rel=1e-12)


class TestTotal:
    def test_level_weights(self):
        cfg = LossConfig()
        assert cfg.level_weight(1) == 1.0
        assert cfg.level_weight(2) == pytest.approx(0.3535534, abs=1e-7)
        ws = cfg.level_weights(5)
        for a, b in zip(ws, ws[1:]):
            assert b == pytest.approx(a / (2 * math.sqrt(2)), rel=1e-15)

    def test_zero_terms(self):
        img = np.full((5, 5, 1), 0.5)
        z = np.zeros((5, 5, 2))
        cfg = LossConfig(lambda_p=0.0)
        assert total_loss((img, img, img), z, z, cfg).total == 0.0

    @pytest.mark.parametrize("mode", ["soft", "off", "hard_min"])
    @pytest.mark.parametrize("level", [1, 3])
    def test_recomposition(self, mode, level):
        (prev, curr, nxt), F_b, F_f, _ = _instance(4, size=6, channels=1)
        cfg = LossConfig(occlusion_mode=mode, kappa=0.45)
        br = total_loss((prev, curr, nxt), F_b, F_f, cfg, level_index=level)
        ref = objective_oracle(prev, curr, nxt, F_b, F_f, cfg, br.w_b, br.w_f, level)
        assert br.total == pytest.approx(ref["total"], rel=1e-12)
        assert br.p1st == pytest.approx(ref["p1st"], rel=1e-12)
        assert br.p2nd == pytest.approx(ref["p2nd"], rel=1e-12)
        assert br.smooth == pytest.approx(ref["smooth"], rel=1e-12)
        lw = br.level_weight
        assert br.total == pytest.approx(lw * (cfg.lambda_p * (cfg.lambda_p1st * br.p1st + cfg.lambda_p2nd * br.p2nd)
                                               + cfg.lambda_s * cfg.lambda_s2nd * br.smooth), rel=1e-14)

    def test_soft_weights_come_from_errors(self):
        (prev, curr, nxt), F_b, F_f, _ = _instance(5, size=6, channels=3)
        cfg = LossConfig()
        br = total_loss((prev, curr, nxt), F_b, F_f, cfg)
        ref = objective_oracle(prev, curr, nxt, F_b, F_f, cfg, br.w_b, br.w_f)
        np.testing.assert_allclose(br.E_b, ref["E_b"], atol=1e-14)
        w_b, w_f = occlusion_weights(ref["E_b"], ref["E_f"])
        np.testing.assert_allclose(br.w_b, w_b, atol=1e-14)
        np.testing.assert_allclose(br.w_f, w_f, atol=1e-14)

    def test_off_is_half_unweighted(self):
        (prev, curr, nxt), F_b, F_f, _ = _instance(6)
        cfg = LossConfig(occlusion_mode="off", lambda_s=0.0)
        obj = FlowObjective(prev, curr, nxt, cfg)
        ones = np.ones((6, 6))
        assert obj(F_b, F_f) == pytest.approx(0.5 * obj(F_b, F_f, (ones, ones)), rel=1e-14)

    def test_hard_min_never_exceeds_off(self):
        for seed in range(40):
            (prev, curr, nxt), F_b, F_f, _ = _instance(100 + seed, size=7, mag=3.0)
            for kappa in (0.45, 2.0):
                hard = total_loss((prev, curr, nxt), F_b, F_f, LossConfig(occlusion_mode="hard_min", kappa=kappa))
                off = total_loss((prev, curr, nxt), F_b, F_f, LossConfig(occlusion_mode="off", kappa=kappa))
                assert hard.total <= off.total
                assert set(np.unique(hard.w_b)) <= {0.0, 0.5, 1.0}

    def test_normalization_invariance_tiled(self):
        # constant colors: every valid pixel carries the same statistics at any size
        cfg = LossConfig(kappa=0.45)
        flows = (np.full((4, 4, 2), -0.5), np.full((4, 4, 2), 0.75))
        small = [np.full((4, 4, 1), v) for v in (0.2, 0.5, 0.9)]
        big = [np.tile(a, (2, 2, 1)) for a in small]
        t_small = total_loss(small, *flows, cfg).total
        t_big = total_loss(big, *(np.tile(f, (2, 2, 1)) for f in flows), cfg).total
        assert t_big == pytest.approx(t_small, rel=1e-13)

    def test_normalization_invariance_ramp(self):
        # "off" keeps the weights uniform; soft weights differ where only one side is clamped
        cfg = LossConfig(kappa=0.45, alpha=0.0, occlusion_mode="off")

        def ramp(n, off):
            ys, xs = np.mgrid[0:n, 0:n].astype(np.float64)
            return (off + 0.01 * xs + 0.02 * ys)[:, :, None]

        def run(n):
            imgs = [ramp(n, o) for o in (0.1, 0.2, 0.35)]
            return total_loss(imgs, np.full((n, n, 2), -0.5), np.full((n, n, 2), 0.5), cfg).total

        assert run(8) == pytest.approx(run(4), rel=1e-12)

    def test_dim_mismatch(self):
        with pytest.raises(DimMismatch):
            FlowObjective(np.zeros((4, 4)), np.zeros((4, 4)), np.zeros((4, 5)))

    @pytest.mark.parametrize("kw", [dict(epsilon=0), dict(kappa=0), dict(alpha=-1), dict(lambda_p=-1),
                                    dict(occlusion_mode="max"), dict(smooth_order="third"), dict(directions="")])
    def test_config_validation(self, kw):
        with pytest.raises(ValueError):
            LossConfig(**kw)


class TestGradient:
    def test_constant_images_zero_photometric_gradient(self, rng):
        img = np.full((6, 6, 1), 0.4)
        cfg = LossConfig(lambda_s=0.0)
        gb, gf = loss_gradient((img, img, img), rng.uniform(-1, 1, (6, 6, 2)), rng.uniform(-1, 1, (6, 6, 2)), cfg)
        assert np.all(gb == 0.0) and np.all(gf == 0.0)

    def test_affine_flow_zero_smoothness_gradient(self, rng):
        ys, xs = np.mgrid[0:6, 0:6].astype(np.float64)
        F = np.stack([0.1 * xs + 0.2 * ys, 0.3 - 0.1 * xs], axis=-1)
        img = rng.random((6, 6, 1))
        gb, gf = loss_gradient((img, img, img), F, -F, LossConfig(lambda_p=0.0))
        np.testing.assert_allclose(gb, 0.0, atol=1e-14)
        np.testing.assert_allclose(gf, 0.0, atol=1e-14)

    def test_zero_motion_fixed_point(self, rng):
        img = rng.random((8, 8, 3))
        z = np.zeros((8, 8, 2))
        for mode in ("soft", "off", "hard_min"):
            gb, gf = loss_gradient((img, img, img), z, z, LossConfig(occlusion_mode=mode))
            # zero residuals: pen'(0) = 0, and zero flow has zero second differences
            assert np.all(gb == 0.0) and np.all(gf == 0.0)

    @pytest.mark.parametrize("order", ["second", "first"])
    def test_smoothness_only_exact(self, rng, order):
        img = rng.random((8, 8, 1))
        cfg = LossConfig(lambda_p=0.0, smooth_order=order)
        obj = FlowObjective(img, img, img, cfg)
        F_b, F_f = rng.normal(0, 1, (8, 8, 2)), rng.normal(0, 1, (8, 8, 2))
        gb, gf = obj.gradient(F_b, F_f)
        fd = finite_diff_gradient(lambda X: obj(X, F_f), F_b, 1e-3)
        assert relative_error(gb, fd).max() <= 1e-6

    @pytest.mark.parametrize("mode", ["soft", "off", "hard_min"])
    @pytest.mark.parametrize("channels", [1, 3])
    def test_random_instance(self, mode, channels):
        r = np.random.default_rng(11)
        imgs = [smooth_texture(r, 8, 8, channels) for _ in range(3)]
        obj = FlowObjective(*imgs, LossConfig(occlusion_mode=mode))
        F_b, F_f = random_flow(r, 8, 8), random_flow(r, 8, 8)
        br, (gb, gf) = obj.evaluate(F_b, F_f, need_grad=True)
        frozen = (br.w_b, br.w_f)
        fd_b = finite_diff_gradient(lambda X: obj(X, F_f, frozen), F_b, 1e-3)
        fd_f = finite_diff_gradient(lambda X: obj(F_b, X, frozen), F_f, 1e-3)
        assert relative_error(gb, fd_b).max() <= 1e-4
        assert relative_error(gf, fd_f).max() <= 1e-4

    def test_white_noise_against_extrapolated_differences(self):
        # On white noise the quartic penalty makes plain central differences
        # too coarse at h=1e-3; Richardson extrapolation removes the h^2 term.
        r = np.random.default_rng(5)
        imgs = [r.random((8, 8, 1)) for _ in range(3)]
        obj = FlowObjective(*imgs, LossConfig())
        F_b, F_f = random_flow(r, 8, 8), random_flow(r, 8, 8)
        br, (gb, _) = obj.evaluate(F_b, F_f, need_grad=True)
        frozen = (br.w_b, br.w_f)
        f = lambda X: obj(X, F_f, frozen)
        d1 = finite_diff_gradient(f, F_b, 2e-3)
        d2 = finite_diff_gradient(f, F_b, 1e-3)
        rich = (4.0 * d2 - d1) / 3.0
        assert relative_error(gb, rich).max() <= 1e-6
