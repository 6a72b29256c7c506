# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled twins of the kernels in ``_pykernels``."""
import numpy as np
cimport cython
from cython.parallel cimport prange
from libc.math cimport fabs, floor, pow


def bilinear_sample(const double[:, :, ::1] src, const double[:, :, ::1] flow, int num_threads=1):
    cdef Py_ssize_t h = src.shape[0], w = src.shape[1], nk = src.shape[2]
    cdef Py_ssize_t y, x, k, x0, y0
    cdef double X, Y, fx, fy, gx, gy, cx, cy, a, b, c, d
    cdef unsigned char ok

    warped_a = np.empty((h, w, nk), dtype=np.float64)
    ju_a = np.empty((h, w, nk), dtype=np.float64)
    jv_a = np.empty((h, w, nk), dtype=np.float64)
    valid_a = np.empty((h, w), dtype=np.bool_)
    cdef double[:, :, ::1] warped = warped_a
    cdef double[:, :, ::1] ju = ju_a
    cdef double[:, :, ::1] jv = jv_a
    cdef unsigned char[:, ::1] valid = valid_a.view(np.uint8)

    for y in prange(h, nogil=True, num_threads=num_threads, schedule="static"):
        for x in range(w):
            X = x + flow[y, x, 0]
            Y = y + flow[y, x, 1]
            ok = 1
            cx = 1.0
            cy = 1.0
            if not (X >= 0.0):
                X = 0.0
                cx = 0.0
                ok = 0
            elif X > w - 1.0:
                X = w - 1.0
                cx = 0.0
                ok = 0
            if not (Y >= 0.0):
                Y = 0.0
                cy = 0.0
                ok = 0
            elif Y > h - 1.0:
                Y = h - 1.0
                cy = 0.0
                ok = 0
            x0 = <Py_ssize_t>floor(X)
            if x0 > w - 2:
                x0 = w - 2
            y0 = <Py_ssize_t>floor(Y)
            if y0 > h - 2:
                y0 = h - 2
            fx = X - x0
            fy = Y - y0
            gx = 1.0 - fx
            gy = 1.0 - fy
            valid[y, x] = ok
            for k in range(nk):
                a = src[y0, x0, k]
                b = src[y0, x0 + 1, k]
                c = src[y0 + 1, x0, k]
                d = src[y0 + 1, x0 + 1, k]
                warped[y, x, k] = gy * (gx * a + fx * b) + fy * (gx * c + fx * d)
                ju[y, x, k] = (gy * (b - a) + fy * (d - c)) * cx
                jv[y, x, k] = (gx * (c - a) + fx * (d - b)) * cy
    return warped_a, ju_a, jv_a, valid_a


def smooth_second_order(const double[:, :, ::1] flow, const double[:, ::1] weight,
                        int dx, int dy, bint need_grad=True):
    cdef Py_ssize_t h = flow.shape[0], w = flow.shape[1], nc = flow.shape[2]
    cdef Py_ssize_t y_lo = abs(dy), y_hi = h - abs(dy)
    cdef Py_ssize_t x_lo = abs(dx), x_hi = w - abs(dx)
    cdef Py_ssize_t y, x, k
    cdef double r, wr, total = 0.0
    grad_a = np.zeros((h, w, nc), dtype=np.float64)
    if y_hi <= y_lo or x_hi <= x_lo:
        return 0.0, 0, (grad_a if need_grad else None)
    cdef double[:, :, ::1] grad = grad_a
    for y in range(y_lo, y_hi):
        for x in range(x_lo, x_hi):
            for k in range(nc):
                r = flow[y - dy, x - dx, k] - 2.0 * flow[y, x, k] + flow[y + dy, x + dx, k]
                wr = weight[y, x] * r
                total += wr * r
                if need_grad:
                    grad[y - dy, x - dx, k] += 2.0 * wr
                    grad[y, x, k] -= 4.0 * wr
                    grad[y + dy, x + dx, k] += 2.0 * wr
    return total, (y_hi - y_lo) * (x_hi - x_lo), (grad_a if need_grad else None)


def photometric_side(const double[:, :, ::1] src, const double[:, :, ::1] flow,
                     const double[:, :, ::1] curr, const double[:, :, ::1] tgrads,
                     const unsigned char[:, :, ::1] tmasks, int n, double epsilon, double kappa,
                     bint need_grad=True, int num_threads=1):
    cdef Py_ssize_t h = curr.shape[0], w = curr.shape[1], nc = curr.shape[2]
    cdef Py_ssize_t y, x, k, i, x0, y0, kk
    cdef double X, Y, fx, fy, gx, gy, cx, cy, a, b, c, d
    cdef double s, q, pq, dq, wv, su, sv, sj, sc, se, e2 = epsilon * epsilon
    cdef double inv_c = 1.0 / nc
    cdef bint kappa2 = kappa == 2.0
    cdef unsigned char ok

    E_a = np.empty((h, w), dtype=np.float64)
    m1_a = np.empty((h, w), dtype=np.bool_)
    c1_a = np.empty((h, w), dtype=np.float64)
    m2_a = np.empty((h, w, n), dtype=np.bool_)
    c2_a = np.empty((h, w, n), dtype=np.float64)
    g1_a = np.zeros((h, w, 2), dtype=np.float64)
    g2_a = np.zeros((h, w, n, 2), dtype=np.float64)
    cdef double[:, ::1] E = E_a
    cdef unsigned char[:, ::1] m1 = m1_a.view(np.uint8)
    cdef double[:, ::1] c1 = c1_a
    cdef unsigned char[:, :, ::1] m2 = m2_a.view(np.uint8)
    cdef double[:, :, ::1] c2 = c2_a
    cdef double[:, :, ::1] g1 = g1_a
    cdef double[:, :, :, ::1] g2 = g2_a

    for y in prange(h, nogil=True, num_threads=num_threads, schedule="static"):
        for x in range(w):
            X = x + flow[y, x, 0]
            Y = y + flow[y, x, 1]
            ok = 1
            cx = 1.0
            cy = 1.0
            if not (X >= 0.0):
                X = 0.0
                cx = 0.0
                ok = 0
            elif X > w - 1.0:
                X = w - 1.0
                cx = 0.0
                ok = 0
            if not (Y >= 0.0):
                Y = 0.0
                cy = 0.0
                ok = 0
            elif Y > h - 1.0:
                Y = h - 1.0
                cy = 0.0
                ok = 0
            x0 = <Py_ssize_t>floor(X)
            if x0 > w - 2:
                x0 = w - 2
            y0 = <Py_ssize_t>floor(Y)
            if y0 > h - 2:
                y0 = h - 2
            fx = X - x0
            fy = Y - y0
            gx = 1.0 - fx
            gy = 1.0 - fy
            m1[y, x] = ok
            # i == 0 is the image itself, i >= 1 the gradient images
            for i in range(n + 1):
                se = 0.0
                sc = 0.0
                su = 0.0
                sv = 0.0
                for k in range(nc):
                    kk = i * nc + k
                    a = src[y0, x0, kk]
                    b = src[y0, x0 + 1, kk]
                    c = src[y0 + 1, x0, kk]
                    d = src[y0 + 1, x0 + 1, kk]
                    wv = gy * (gx * a + fx * b) + fy * (gx * c + fx * d)
                    if i == 0:
                        s = curr[y, x, k] - wv
                        se = se + fabs(s)
                    else:
                        s = tgrads[y, x, kk - nc] - wv
                    q = s * s + e2
                    if kappa2:
                        pq = q
                    else:
                        pq = pow(q, kappa - 1.0)
                    sc = sc + q * pq
                    if need_grad:
                        dq = 2.0 * kappa * s * pq
                        su = su + dq * (gy * (b - a) + fy * (d - c)) * cx
                        sv = sv + dq * (gx * (c - a) + fx * (d - b)) * cy
                if i == 0:
                    E[y, x] = se * inv_c
                    c1[y, x] = sc * inv_c
                    g1[y, x, 0] = -su * inv_c
                    g1[y, x, 1] = -sv * inv_c
                else:
                    kk = (n + 1) * nc + i - 1
                    a = src[y0, x0, kk]
                    b = src[y0, x0 + 1, kk]
                    c = src[y0 + 1, x0, kk]
                    d = src[y0 + 1, x0 + 1, kk]
                    wv = gy * (gx * a + fx * b) + fy * (gx * c + fx * d)
                    m2[y, x, i - 1] = ok and tmasks[y, x, i - 1] != 0 and wv > 1.0 - 1e-9
                    c2[y, x, i - 1] = sc * inv_c
                    g2[y, x, i - 1, 0] = -su * inv_c
                    g2[y, x, i - 1, 1] = -sv * inv_c
    if not need_grad:
        return E_a, m1_a, c1_a, m2_a, c2_a, None, None
    return E_a, m1_a, c1_a, m2_a, c2_a, g1_a, g2_a
