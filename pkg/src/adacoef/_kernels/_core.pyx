# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled hot kernels: fused affine layers, activations and the Adam update.

Matrix products go through BLAS dgemm (row-major handled by the usual
transpose identity). Formulas match adacoef._kernels._fallback exactly.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, sqrt, tanh as ctanh
from scipy.linalg.cython_blas cimport dgemm

cnp.import_array()

BACKEND = "compiled"


cdef void _gemm(double[:, ::1] a, double[:, ::1] b, double[:, ::1] c,
                bint ta, bint tb) noexcept nogil:
    # c = op(a) @ op(b), all buffers row-major; computed column-major as
    # c^T = op(b)^T @ op(a)^T.
    cdef int m = c.shape[0]
    cdef int n = c.shape[1]
    cdef int k = a.shape[0] if ta else a.shape[1]
    cdef char fa = b'T' if ta else b'N'
    cdef char fb = b'T' if tb else b'N'
    cdef int lda = <int> a.shape[1]
    cdef int ldb = <int> b.shape[1]
    cdef int ldc = n
    cdef double one = 1.0
    cdef double zero = 0.0
    if m == 0 or n == 0:
        return
    dgemm(&fb, &fa, &n, &m, &k, &one, &b[0, 0], &ldb, &a[0, 0], &lda,
          &zero, &c[0, 0], &ldc)


def matmul(cnp.ndarray a, cnp.ndarray b, bint ta=False, bint tb=False):
    cdef Py_ssize_t m = a.shape[1] if ta else a.shape[0]
    cdef Py_ssize_t k = a.shape[0] if ta else a.shape[1]
    cdef Py_ssize_t n = b.shape[0] if tb else b.shape[1]
    out = np.empty((m, n), dtype=np.float64)
    _gemm(a, b, out, ta, tb)
    return out


def linear_fwd(cnp.ndarray x, cnp.ndarray w, cnp.ndarray b):
    # y = x @ w + b
    cdef cnp.ndarray y = matmul(x, w)
    cdef double[:, ::1] ym = y
    cdef double[::1] bv = b
    cdef Py_ssize_t i, j, n = ym.shape[0], o = ym.shape[1]
    with nogil:
        for i in range(n):
            for j in range(o):
                ym[i, j] += bv[j]
    return y


def linear_bwd(cnp.ndarray x, cnp.ndarray w, cnp.ndarray gy):
    # returns (gx, gw, gb) for y = x @ w + b
    gx = matmul(gy, w, False, True)
    gw = matmul(x, gy, True, False)
    cdef cnp.ndarray gb = np.zeros(w.shape[1], dtype=np.float64)
    cdef double[:, ::1] g = gy
    cdef double[::1] gbv = gb
    cdef Py_ssize_t i, j, n = g.shape[0], o = g.shape[1]
    with nogil:
        for i in range(n):
            for j in range(o):
                gbv[j] += g[i, j]
    return gx, gw, gb


def silu_fwd(cnp.ndarray x):
    cdef cnp.ndarray out = np.empty_like(x)
    cdef double[::1] xv = x.ravel()
    cdef double[::1] ov = out.ravel()
    cdef Py_ssize_t i, n = xv.shape[0]
    cdef double s
    with nogil:
        for i in range(n):
            s = 1.0 / (1.0 + exp(-xv[i]))
            ov[i] = xv[i] * s
    return out


def silu_bwd(cnp.ndarray x, cnp.ndarray gy):
    cdef cnp.ndarray out = np.empty_like(x)
    cdef double[::1] xv = x.ravel()
    cdef double[::1] gv = gy.ravel()
    cdef double[::1] ov = out.ravel()
    cdef Py_ssize_t i, n = xv.shape[0]
    cdef double s
    with nogil:
        for i in range(n):
            s = 1.0 / (1.0 + exp(-xv[i]))
            ov[i] = gv[i] * s * (1.0 + xv[i] * (1.0 - s))
    return out


def tanh_fwd(cnp.ndarray x):
    cdef cnp.ndarray out = np.empty_like(x)
    cdef double[::1] xv = x.ravel()
    cdef double[::1] ov = out.ravel()
    cdef Py_ssize_t i, n = xv.shape[0]
    with nogil:
        for i in range(n):
            ov[i] = ctanh(xv[i])
    return out


def tanh_bwd(cnp.ndarray y, cnp.ndarray gy):
    # gradient from the forward output y = tanh(x)
    cdef cnp.ndarray out = np.empty_like(y)
    cdef double[::1] yv = y.ravel()
    cdef double[::1] gv = gy.ravel()
    cdef double[::1] ov = out.ravel()
    cdef Py_ssize_t i, n = yv.shape[0]
    with nogil:
        for i in range(n):
            ov[i] = gv[i] * (1.0 - yv[i] * yv[i])
    return out


def leaky_relu_fwd(cnp.ndarray x, double slope):
    cdef cnp.ndarray out = np.empty_like(x)
    cdef double[::1] xv = x.ravel()
    cdef double[::1] ov = out.ravel()
    cdef Py_ssize_t i, n = xv.shape[0]
    with nogil:
        for i in range(n):
            ov[i] = xv[i] if xv[i] > 0.0 else slope * xv[i]
    return out


def leaky_relu_bwd(cnp.ndarray x, cnp.ndarray gy, double slope):
    cdef cnp.ndarray out = np.empty_like(x)
    cdef double[::1] xv = x.ravel()
    cdef double[::1] gv = gy.ravel()
    cdef double[::1] ov = out.ravel()
    cdef Py_ssize_t i, n = xv.shape[0]
    with nogil:
        for i in range(n):
            ov[i] = gv[i] if xv[i] > 0.0 else slope * gv[i]
    return out


def auction_assignment(cnp.ndarray cost, long long theta=8, long long start_div=8):
    """Exact minimum-cost assignment by forward auction with eps-scaling.

    Costs are scaled to int64 (relative resolution ~2^-36) and multiplied by
    (n+1); running the final phase at eps == 1 then guarantees optimality
    for the integerized costs (Bertsekas). Returns the person->object
    permutation. Much faster than shortest-augmenting-path solvers on dense
    geometric instances.
    """
    cdef Py_ssize_t n = cost.shape[0]
    out = np.empty(n, dtype=np.intp)
    cdef Py_ssize_t[::1] perm = out
    if n == 1:
        perm[0] = 0
        return out
    cdef double[:, ::1] c = np.ascontiguousarray(cost, dtype=np.float64)
    cdef double cmax = 0.0
    cdef Py_ssize_t i, j
    for i in range(n):
        for j in range(n):
            if c[i, j] > cmax:
                cmax = c[i, j]
    cdef double scale = (<double>(1 << 36)) / (cmax if cmax > 0.0 else 1.0)
    benefit_arr = np.empty((n, n), dtype=np.int64)
    cdef long long[:, ::1] b = benefit_arr
    cdef long long mult = <long long>(n + 1)
    with nogil:
        for i in range(n):
            for j in range(n):
                b[i, j] = -<long long>(c[i, j] * scale + 0.5) * mult
    prices_arr = np.zeros(n, dtype=np.int64)
    owner_arr = np.empty(n, dtype=np.intp)
    stack_arr = np.empty(n, dtype=np.intp)
    cdef long long[::1] p = prices_arr
    cdef Py_ssize_t[::1] owner = owner_arr
    cdef Py_ssize_t[::1] stack = stack_arr
    cdef long long NEG = <long long>-(1 << 62)
    cdef long long eps, best, second, v, bmax, bmin
    cdef Py_ssize_t top, person, jbest, prev
    bmax = NEG
    bmin = -NEG
    for i in range(n):
        for j in range(n):
            if b[i, j] > bmax:
                bmax = b[i, j]
            if b[i, j] < bmin:
                bmin = b[i, j]
    eps = (bmax - bmin) // start_div
    if eps < 1:
        eps = 1
    with nogil:
        while True:
            # phase: clear the assignment, keep prices
            for i in range(n):
                owner[i] = -1
                perm[i] = -1
                stack[i] = i
            top = n
            while top > 0:
                top -= 1
                person = stack[top]
                best = NEG
                second = NEG
                jbest = 0
                for j in range(n):
                    v = b[person, j] - p[j]
                    if v > best:
                        second = best
                        best = v
                        jbest = j
                    elif v > second:
                        second = v
                if second == NEG:
                    second = best
                p[jbest] += best - second + eps
                prev = owner[jbest]
                owner[jbest] = person
                perm[person] = jbest
                if prev >= 0:
                    perm[prev] = -1
                    stack[top] = prev
                    top += 1
            if eps == 1:
                break
            eps = eps // theta
            if eps < 1:
                eps = 1
    return out


def adam_step(cnp.ndarray p, cnp.ndarray m, cnp.ndarray v, cnp.ndarray g,
              long step, double lr, double beta1, double beta2, double eps):
    # in-place fused Adam with bias correction; step is 1-based
    cdef double[::1] pv = p
    cdef double[::1] mv = m
    cdef double[::1] vv = v
    cdef double[::1] gv = g
    cdef Py_ssize_t i, n = pv.shape[0]
    cdef double c1 = 1.0 - beta1 ** step
    cdef double c2 = 1.0 - beta2 ** step
    cdef double mh, vh
    with nogil:
        for i in range(n):
            mv[i] = beta1 * mv[i] + (1.0 - beta1) * gv[i]
            vv[i] = beta2 * vv[i] + (1.0 - beta2) * gv[i] * gv[i]
            mh = mv[i] / c1
            vh = vv[i] / c2
            pv[i] -= lr * mh / (sqrt(vh) + eps)
