# cython: language_level=3
"""Compiled hot kernels: fixed-point solve, adjoint solve, l1 row projection.

Mirrors the contracts of ``fedeq._kernels_py`` (same signatures and status
codes); the dispatcher in ``fedeq.kernels`` picks whichever is available.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, fabs, isfinite, log1p, tanh

cnp.import_array()

BACKEND = "compiled"

OK = 0
NO_CONVERGENCE = 1
NOT_FINITE = 2

cdef int _OK = 0
cdef int _NO_CONVERGENCE = 1
cdef int _NOT_FINITE = 2


cdef inline double _act1(int act_id, double u) noexcept nogil:
    if act_id == 0:
        return tanh(u)
    elif act_id == 1:
        if u >= 0.0:
            return 1.0 / (1.0 + exp(-u))
        return exp(u) / (1.0 + exp(u))
    elif act_id == 2:
        return u if u > 0.0 else 0.0
    # softplus
    return (u if u > 0.0 else 0.0) + log1p(exp(-fabs(u)))


cdef inline void _apply_map(double[:, ::1] B, double[::1] cxb, int act_id,
                            double[::1] z, double[::1] out) noexcept nogil:
    cdef Py_ssize_t i, j, d = B.shape[0]
    cdef double s
    for i in range(d):
        s = cxb[i]
        for j in range(d):
            s += B[i, j] * z[j]
        out[i] = _act1(act_id, s)


cdef inline int _all_finite(double[::1] v) noexcept nogil:
    cdef Py_ssize_t i
    for i in range(v.shape[0]):
        if not isfinite(v[i]):
            return 0
    return 1


cdef inline double _max_abs_diff(double[::1] a, double[::1] b) noexcept nogil:
    cdef Py_ssize_t i
    cdef double r = 0.0, t
    for i in range(a.shape[0]):
        t = fabs(a[i] - b[i])
        if t > r:
            r = t
    return r


cdef int _gauss_solve(double[:, ::1] A, double[::1] rhs, double[::1] out,
                      Py_ssize_t q) noexcept nogil:
    """Partial-pivot Gaussian elimination; returns 0 on success."""
    cdef Py_ssize_t i, j, k, p
    cdef double piv, f
    for k in range(q):
        p = k
        piv = fabs(A[k, k])
        for i in range(k + 1, q):
            if fabs(A[i, k]) > piv:
                piv = fabs(A[i, k])
                p = i
        if piv == 0.0 or not isfinite(piv):
            return 1
        if p != k:
            for j in range(q):
                f = A[k, j]
                A[k, j] = A[p, j]
                A[p, j] = f
            f = rhs[k]
            rhs[k] = rhs[p]
            rhs[p] = f
        for i in range(k + 1, q):
            f = A[i, k] / A[k, k]
            for j in range(k, q):
                A[i, j] -= f * A[k, j]
            rhs[i] -= f * rhs[k]
    for k in range(q - 1, -1, -1):
        f = rhs[k]
        for j in range(k + 1, q):
            f -= A[k, j] * out[j]
        out[k] = f / A[k, k]
    return 0


def fp_solve(double[:, ::1] B, double[::1] cxb, double[::1] z0,
             int act_id, int method, int max_iters, double tol,
             int m, double damping, double reg):
    """See ``fedeq._kernels_py.fp_solve``."""
    cdef Py_ssize_t d = B.shape[0]
    if m < 1:
        m = 1
    cdef cnp.ndarray z_arr = np.array(z0, dtype=np.float64)
    cdef cnp.ndarray gz_arr = np.empty(d, dtype=np.float64)
    cdef cnp.ndarray zn_arr = np.empty(d, dtype=np.float64)
    cdef cnp.ndarray gzn_arr = np.empty(d, dtype=np.float64)
    cdef cnp.ndarray Z_arr = np.empty((m, d), dtype=np.float64)
    cdef cnp.ndarray G_arr = np.empty((m, d), dtype=np.float64)
    cdef Py_ssize_t q_cap = m - 1 if m > 1 else 1
    cdef cnp.ndarray DF_arr = np.empty((q_cap, d), dtype=np.float64)
    cdef cnp.ndarray A_arr = np.empty((q_cap, q_cap), dtype=np.float64)
    cdef cnp.ndarray rhs_arr = np.empty(q_cap, dtype=np.float64)
    cdef cnp.ndarray alpha_arr = np.empty(q_cap, dtype=np.float64)

    cdef double[::1] z = z_arr, gz = gz_arr, zn = zn_arr, gzn = gzn_arr
    cdef double[::1] rhs = rhs_arr, alpha = alpha_arr
    cdef double[:, ::1] Z = Z_arr, G = G_arr, DF = DF_arr, A = A_arr

    cdef Py_ssize_t i, j, a, b, h, q
    cdef int k = 0
    cdef double r, s, zmix, gmix
    cdef bint singular

    _apply_map(B, cxb, act_id, z, gz)
    if not _all_finite(gz):
        return z_arr, 0, float("nan"), NOT_FINITE
    r = _max_abs_diff(gz, z)
    for i in range(d):
        Z[0, i] = z[i]
        G[0, i] = gz[i]
    h = 1

    while True:
        if r <= tol:
            return z_arr.copy(), k, r, OK
        if k >= max_iters:
            return z_arr.copy(), k, r, NO_CONVERGENCE

        singular = False
        if method == 0:
            for i in range(d):
                zn[i] = gz[i]
        elif h == 1:
            for i in range(d):
                zn[i] = (1.0 - damping) * z[i] + damping * gz[i]
        else:
            q = h - 1
            # residual differences: DF[a] = (G[a+1]-Z[a+1]) - (G[a]-Z[a])
            for a in range(q):
                for i in range(d):
                    DF[a, i] = (G[a + 1, i] - Z[a + 1, i]) - (G[a, i] - Z[a, i])
            for a in range(q):
                s = 0.0
                for i in range(d):
                    s += DF[a, i] * (G[h - 1, i] - Z[h - 1, i])
                rhs[a] = s
                for b in range(a, q):
                    s = 0.0
                    for i in range(d):
                        s += DF[a, i] * DF[b, i]
                    A[a, b] = s
                    A[b, a] = s
                A[a, a] += reg
            if _gauss_solve(A, rhs, alpha, q) != 0:
                singular = True
            if singular:
                for i in range(d):
                    zn[i] = (1.0 - damping) * z[i] + damping * gz[i]
            else:
                for i in range(d):
                    zmix = Z[h - 1, i]
                    gmix = G[h - 1, i]
                    for a in range(q):
                        zmix -= alpha[a] * (Z[a + 1, i] - Z[a, i])
                        gmix -= alpha[a] * (G[a + 1, i] - G[a, i])
                    zn[i] = (1.0 - damping) * zmix + damping * gmix

        _apply_map(B, cxb, act_id, zn, gzn)
        if not _all_finite(zn) or not _all_finite(gzn):
            return z_arr.copy(), k, r, NOT_FINITE

        if h == m:
            for a in range(m - 1):
                for i in range(d):
                    Z[a, i] = Z[a + 1, i]
                    G[a, i] = G[a + 1, i]
            h -= 1
        for i in range(d):
            Z[h, i] = zn[i]
            G[h, i] = gzn[i]
            z[i] = zn[i]
            gz[i] = gzn[i]
        h += 1
        r = _max_abs_diff(gz, z)
        k += 1


def adjoint_solve(double[:, ::1] B, double[::1] dphi, double[::1] y,
                  int max_iters, double tol):
    """See ``fedeq._kernels_py.adjoint_solve``."""
    cdef Py_ssize_t d = B.shape[0]
    cdef cnp.ndarray u_arr = np.array(y, dtype=np.float64)
    cdef cnp.ndarray au_arr = np.empty(d, dtype=np.float64)
    cdef double[::1] u = u_arr, au = au_arr
    cdef Py_ssize_t i, j
    cdef int k = 0
    cdef double r, wj

    while True:
        for i in range(d):
            au[i] = y[i]
        for j in range(d):
            wj = dphi[j] * u[j]
            for i in range(d):
                au[i] += B[j, i] * wj
        if not _all_finite(au):
            return u_arr.copy(), k, float("nan"), NOT_FINITE
        r = _max_abs_diff(au, u)
        if r <= tol:
            return u_arr.copy(), k, r, OK
        if k >= max_iters:
            return u_arr.copy(), k, r, NO_CONVERGENCE
        for i in range(d):
            u[i] = au[i]
        k += 1


def project_l1(double[::1] v, double kappa, double bisect_tol, int max_iters):
    """Euclidean projection of one row onto the l1 ball of radius kappa."""
    cdef cnp.ndarray out_arr = np.empty(v.shape[0], dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef int st = _project_row(v, out, kappa, bisect_tol, max_iters)
    return out_arr, st


cdef int _project_row(double[::1] v, double[::1] out, double kappa,
                      double bisect_tol, int max_iters) noexcept nogil:
    cdef Py_ssize_t i, n = v.shape[0]
    cdef double l1 = 0.0, hi = 0.0, lo = 0.0, mid, s, a
    cdef int it, ok
    for i in range(n):
        a = fabs(v[i])
        l1 += a
        if a > hi:
            hi = a
    if l1 <= kappa:
        for i in range(n):
            out[i] = v[i]
        return _OK
    ok = _NO_CONVERGENCE
    for it in range(max_iters):
        if hi - lo <= bisect_tol:
            ok = _OK
            break
        mid = 0.5 * (lo + hi)
        s = 0.0
        for i in range(n):
            a = fabs(v[i]) - mid
            if a > 0.0:
                s += a
        if s > kappa:
            lo = mid
        else:
            hi = mid
    # gamma = hi is on the feasible side, so the l1 constraint holds exactly
    for i in range(n):
        a = fabs(v[i]) - hi
        if a > 0.0:
            out[i] = a if v[i] > 0.0 else -a
        else:
            out[i] = 0.0
    return ok


def project_rows(double[:, ::1] M, double kappa, double bisect_tol,
                 int max_iters):
    """Project every row of M onto the l1 ball; rows are independent."""
    cdef cnp.ndarray out_arr = np.empty((M.shape[0], M.shape[1]), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i
    cdef int status = OK, st
    for i in range(M.shape[0]):
        st = _project_row(M[i], out[i], kappa, bisect_tol, max_iters)
        if st > status:
            status = st
    return out_arr, status
