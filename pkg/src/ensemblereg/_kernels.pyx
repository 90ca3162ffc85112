# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels; see ``_pykernels`` for the reference semantics.

Every reduction runs in a fixed sequential order inside one thread, and
parallelism is only across independent displacement columns, so results
do not depend on the thread count.
"""
import numpy as np
cimport numpy as cnp
from cython.parallel cimport prange
from libc.math cimport sqrt
from libc.stdlib cimport malloc, free

cnp.import_array()


cdef inline Py_ssize_t _clamp(Py_ssize_t v, Py_ssize_t hi) noexcept nogil:
    if v < 0:
        return 0
    if v > hi:
        return hi
    return v


def patch_ssd(fixed, moving, disps, int radius):
    cdef const double[:, ::1] f = np.ascontiguousarray(fixed, dtype=np.float64)
    cdef const double[:, ::1] m = np.ascontiguousarray(moving, dtype=np.float64)
    cdef const long long[:, ::1] d = np.ascontiguousarray(disps, dtype=np.int64)
    cdef Py_ssize_t H = f.shape[0], W = f.shape[1], K = d.shape[0]
    out_arr = np.zeros((H, W, K))
    cdef double[:, :, ::1] out = out_arr
    cdef Py_ssize_t y, x, k, oy, ox, fy, fx, my, mx
    cdef long long dx, dy
    cdef double acc, diff
    with nogil:
        for y in range(H):
            for x in range(W):
                for k in range(K):
                    dx = d[k, 0]
                    dy = d[k, 1]
                    acc = 0.0
                    for oy in range(-radius, radius + 1):
                        fy = _clamp(y + oy, H - 1)
                        my = _clamp(y + oy + dy, H - 1)
                        for ox in range(-radius, radius + 1):
                            fx = _clamp(x + ox, W - 1)
                            mx = _clamp(x + ox + dx, W - 1)
                            diff = f[fy, fx] - m[my, mx]
                            acc = acc + diff * diff
                    out[y, x, k] = acc
    return out_arr


cdef void _apply(const double* x, double* y, const double* wh, const double* wv,
                 double gamma, Py_ssize_t H, Py_ssize_t W) noexcept nogil:
    cdef Py_ssize_t i, j, n
    cdef double acc, xi
    for i in range(H):
        for j in range(W):
            n = i * W + j
            xi = x[n]
            acc = gamma * xi
            if j > 0:
                acc = acc + wh[i * (W - 1) + j - 1] * (xi - x[n - 1])
            if j < W - 1:
                acc = acc + wh[i * (W - 1) + j] * (xi - x[n + 1])
            if i > 0:
                acc = acc + wv[(i - 1) * W + j] * (xi - x[n - W])
            if i < H - 1:
                acc = acc + wv[i * W + j] * (xi - x[n + W])
            y[n] = acc


cdef double _dot(const double* a, const double* b, Py_ssize_t n) noexcept nogil:
    cdef Py_ssize_t i
    cdef double s = 0.0
    for i in range(n):
        s = s + a[i] * b[i]
    return s


cdef void _pcg(const double* b, double* x, const double* inv_diag,
               const double* wh, const double* wv, double gamma,
               Py_ssize_t H, Py_ssize_t W, double tol, long long max_iter,
               long long* iters_out, double* relres_out) noexcept nogil:
    cdef Py_ssize_t N = H * W, i
    cdef double* r = <double*> malloc(N * sizeof(double))
    cdef double* z = <double*> malloc(N * sizeof(double))
    cdef double* p = <double*> malloc(N * sizeof(double))
    cdef double* q = <double*> malloc(N * sizeof(double))
    cdef double bnorm, relres, rz, rz_new, alpha, beta
    cdef long long it = 0
    bnorm = sqrt(_dot(b, b, N))
    if bnorm == 0.0:
        bnorm = 1.0
    _apply(x, q, wh, wv, gamma, H, W)
    for i in range(N):
        r[i] = b[i] - q[i]
    relres = sqrt(_dot(r, r, N)) / bnorm
    for i in range(N):
        z[i] = inv_diag[i] * r[i]
        p[i] = z[i]
    rz = _dot(r, z, N)
    while relres > tol and it < max_iter:
        it += 1
        _apply(p, q, wh, wv, gamma, H, W)
        alpha = rz / _dot(p, q, N)
        for i in range(N):
            x[i] = x[i] + alpha * p[i]
            r[i] = r[i] - alpha * q[i]
        relres = sqrt(_dot(r, r, N)) / bnorm
        for i in range(N):
            z[i] = inv_diag[i] * r[i]
        rz_new = _dot(r, z, N)
        beta = rz_new / rz
        rz = rz_new
        for i in range(N):
            p[i] = z[i] + beta * p[i]
    iters_out[0] = it
    relres_out[0] = relres
    free(r)
    free(z)
    free(p)
    free(q)


def solve_shifted_laplacian(wh, wv, double gamma, rhs, x0, double tol,
                            long long max_iter, int num_threads=1):
    cdef const double[:, ::1] wh_v = np.ascontiguousarray(wh, dtype=np.float64).reshape(wh.shape[0], -1) \
        if wh.size else np.zeros((1, 1))
    cdef const double[:, ::1] wv_v = np.ascontiguousarray(wv, dtype=np.float64).reshape(wv.shape[0], -1) \
        if wv.size else np.zeros((1, 1))
    rhs_arr = np.ascontiguousarray(rhs, dtype=np.float64)
    cdef Py_ssize_t K = rhs_arr.shape[0], H = rhs_arr.shape[1], W = rhs_arr.shape[2]
    cdef const double[:, ::1] b = rhs_arr.reshape(K, H * W)
    x_arr = np.array(x0, dtype=np.float64, order="C").reshape(K, H * W)
    cdef double[:, ::1] x = x_arr

    diag = np.full((H, W), gamma)
    diag[:, :-1] += wh
    diag[:, 1:] += wh
    diag[:-1, :] += wv
    diag[1:, :] += wv
    cdef const double[::1] inv_diag = np.ascontiguousarray((1.0 / diag).ravel())

    iters_arr = np.zeros(K, dtype=np.int64)
    relres_arr = np.zeros(K)
    cdef long long[::1] iters = iters_arr
    cdef double[::1] relres = relres_arr
    cdef Py_ssize_t k
    if num_threads < 1:
        num_threads = 1
    for k in prange(K, nogil=True, num_threads=num_threads, schedule="static"):
        _pcg(&b[k, 0], &x[k, 0], &inv_diag[0], &wh_v[0, 0], &wv_v[0, 0], gamma,
             H, W, tol, max_iter, &iters[k], &relres[k])
    return x_arr.reshape(K, H, W), iters_arr, relres_arr


cdef inline bint _less(double ka, double va, Py_ssize_t ia,
                       double kb, double vb, Py_ssize_t ib) noexcept nogil:
    if ka != kb:
        return ka < kb
    if va != vb:
        return va < vb
    return ia < ib


def aggregate_rows(keys, values, weights):
    cdef const double[:, ::1] kk = np.ascontiguousarray(keys, dtype=np.float64)
    cdef const double[:, ::1] vv = np.ascontiguousarray(values, dtype=np.float64)
    cdef const double[:, ::1] ww = np.ascontiguousarray(weights, dtype=np.float64)
    cdef Py_ssize_t N = kk.shape[0], K = kk.shape[1]
    offsets_arr = np.zeros(N + 1, dtype=np.int64)
    out_v_arr = np.empty(N * K)
    out_w_arr = np.empty(N * K)
    cdef long long[::1] offsets = offsets_arr
    cdef double[::1] out_v = out_v_arr
    cdef double[::1] out_w = out_w_arr
    cdef Py_ssize_t* idx = <Py_ssize_t*> malloc(K * sizeof(Py_ssize_t))
    cdef Py_ssize_t n, i, j, m, a, cur, pos = 0
    cdef double last_key
    with nogil:
        for n in range(N):
            m = 0
            for i in range(K):
                if ww[n, i] > 0.0:
                    idx[m] = i
                    m += 1
            # insertion sort by (key, value, index); K is small
            for i in range(1, m):
                a = idx[i]
                j = i - 1
                while j >= 0 and _less(kk[n, a], vv[n, a], a,
                                       kk[n, idx[j]], vv[n, idx[j]], idx[j]):
                    idx[j + 1] = idx[j]
                    j -= 1
                idx[j + 1] = a
            for i in range(m):
                cur = idx[i]
                if i == 0 or kk[n, cur] != last_key:
                    out_v[pos] = vv[n, cur]
                    out_w[pos] = ww[n, cur]
                    pos += 1
                    last_key = kk[n, cur]
                else:
                    out_w[pos - 1] = out_w[pos - 1] + ww[n, cur]
            offsets[n + 1] = pos
    free(idx)
    return offsets_arr, out_v_arr[:pos].copy(), out_w_arr[:pos].copy()
