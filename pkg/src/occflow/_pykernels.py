"""Pure-numpy implementations of the hot kernels.

Each function here has a twin in ``_ckernels.pyx`` with the same signature
and the same floating point formulas.
"""
import numpy as np


def bilinear_sample(src, flow, num_threads=1):
    """Sample ``src`` (H, W, K) at ``p + flow(p)``.

    Returns ``(warped, jac_u, jac_v, valid)``.  Out-of-grid coordinates are
    clamped for sampling, flagged invalid, and get a zero Jacobian along the
    clamped axis.
    """
    h, w, _ = src.shape
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    X = xs + flow[:, :, 0]
    Y = ys + flow[:, :, 1]
    in_x = (X >= 0.0) & (X <= w - 1.0)
    in_y = (Y >= 0.0) & (Y <= h - 1.0)
    X = np.clip(X, 0.0, w - 1.0)
    Y = np.clip(Y, 0.0, h - 1.0)
    x0 = np.minimum(np.floor(X).astype(np.intp), w - 2)
    y0 = np.minimum(np.floor(Y).astype(np.intp), h - 2)
    fx = (X - x0)[:, :, None]
    fy = (Y - y0)[:, :, None]
    a = src[y0, x0]
    b = src[y0, x0 + 1]
    c = src[y0 + 1, x0]
    d = src[y0 + 1, x0 + 1]
    gx = 1.0 - fx
    gy = 1.0 - fy
    warped = gy * (gx * a + fx * b) + fy * (gx * c + fx * d)
    jac_u = (gy * (b - a) + fy * (d - c)) * in_x[:, :, None]
    jac_v = (gx * (c - a) + fx * (d - b)) * in_y[:, :, None]
    return warped, jac_u, jac_v, in_x & in_y


def smooth_second_order(flow, weight, dx, dy, need_grad=True):
    """Edge-weighted squared second difference along ``(dx, dy)``.

    ``weight`` is (H, W); only interior pixels where both ``p - d`` and
    ``p + d`` are on the grid contribute.  Returns ``(sum, count, grad)``
    where ``grad`` is d(sum)/d(flow) or None.
    """
    h, w, _ = flow.shape
    y_lo, y_hi = abs(dy), h - abs(dy)
    x_lo, x_hi = abs(dx), w - abs(dx)
    if y_hi <= y_lo or x_hi <= x_lo:
        return 0.0, 0, (np.zeros_like(flow) if need_grad else None)
    c = flow[y_lo:y_hi, x_lo:x_hi]
    m = flow[y_lo - dy:y_hi - dy, x_lo - dx:x_hi - dx]
    p = flow[y_lo + dy:y_hi + dy, x_lo + dx:x_hi + dx]
    wt = weight[y_lo:y_hi, x_lo:x_hi, None]
    r = m - 2.0 * c + p
    wr = wt * r
    total = float(np.sum(wr * r))
    count = (y_hi - y_lo) * (x_hi - x_lo)
    grad = None
    if need_grad:
        grad = np.zeros_like(flow)
        g = 2.0 * wr
        grad[y_lo - dy:y_hi - dy, x_lo - dx:x_hi - dx] += g
        grad[y_lo:y_hi, x_lo:x_hi] -= 2.0 * g
        grad[y_lo + dy:y_hi + dy, x_lo + dx:x_hi + dx] += g
    return total, count, grad


def photometric_side(src, flow, curr, tgrads, tmasks, n, epsilon, kappa, need_grad=True, num_threads=1):
    """Per-pixel photometric penalties of one warp direction.

    ``src`` is the sampling stack ``[image, n gradient images, n indicators]``
    (channels ``C, n*C, n``), ``curr`` the (H, W, C) target, ``tgrads`` its
    (H, W, n*C) gradients and ``tmasks`` the (H, W, n) uint8 validity of
    those gradients.

    Returns ``(E, m1, c1, m2, c2, g1, g2)``: channel-mean absolute error,
    sample validity, channel-mean Charbonnier of the brightness difference,
    (H, W, n) validity and penalties of the gradient differences, and the
    derivatives ``g1`` (H, W, 2) and ``g2`` (H, W, n, 2) (None without
    ``need_grad``).
    """
    h, w, c = curr.shape
    warped, ju, jv, valid = bilinear_sample(src, flow)
    e2 = epsilon * epsilon
    s1 = curr - warped[:, :, :c]
    q1 = s1 * s1 + e2
    E = np.mean(np.abs(s1), axis=2)
    c1 = np.mean(q1 ** kappa, axis=2)
    s2 = (tgrads - warped[:, :, c:c * (n + 1)]).reshape(h, w, n, c)
    q2 = s2 * s2 + e2
    c2 = np.mean(q2 ** kappa, axis=3)
    m2 = valid[:, :, None] & (tmasks != 0) & (warped[:, :, c * (n + 1):] > 1.0 - 1e-9)
    g1 = g2 = None
    if need_grad:
        d1 = 2.0 * kappa * s1 * q1 ** (kappa - 1.0)
        g1 = -np.stack([np.mean(d1 * ju[:, :, :c], axis=2), np.mean(d1 * jv[:, :, :c], axis=2)], axis=-1)
        d2 = 2.0 * kappa * s2 * q2 ** (kappa - 1.0)
        ju2 = ju[:, :, c:c * (n + 1)].reshape(h, w, n, c)
        jv2 = jv[:, :, c:c * (n + 1)].reshape(h, w, n, c)
        g2 = -np.stack([np.mean(d2 * ju2, axis=3), np.mean(d2 * jv2, axis=3)], axis=-1)
    return E, valid, c1, m2, c2, g1, g2
