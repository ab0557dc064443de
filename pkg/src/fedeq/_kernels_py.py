"""Pure-numpy reference kernels.

These implement the same contracts as the compiled ``fedeq._accel``
extension (fixed-point solve, adjoint solve, row-wise l1 projection) and are
selected automatically when the extension is unavailable, or when the
``FEDEQ_PURE_PYTHON`` environment variable is set. Status codes returned by
every kernel: 0 = converged/ok, 1 = iteration budget exhausted, 2 = NaN/Inf
encountered.
"""

import numpy as np

BACKEND = "python"

OK = 0
NO_CONVERGENCE = 1
NOT_FINITE = 2

_METHOD_PLAIN = 0
_METHOD_ANDERSON = 1


def _act(act_id, u):
    if act_id == 0:
        return np.tanh(u)
    if act_id == 1:
        out = np.empty_like(u)
        pos = u >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-u[pos]))
        e = np.exp(u[~pos])
        out[~pos] = e / (1.0 + e)
        return out
    if act_id == 2:
        return np.maximum(u, 0.0)
    if act_id == 3:
        return np.maximum(u, 0.0) + np.log1p(np.exp(-np.abs(u)))
    raise ValueError(f"unknown activation id {act_id}")


def fp_solve(B, cxb, z0, act_id, method, max_iters, tol, m, damping, reg):
    """Iterate z <- act(B z + cxb) from z0 until the residual drops below tol.

    method 0 is plain iteration, 1 is Anderson mixing with window ``m``,
    damping ``damping`` and Tikhonov regularization ``reg`` on the normal
    equations of the window least-squares problem. Returns
    ``(z, iterations, residual, status)`` where ``iterations`` counts update
    steps and ``residual`` is the exit value of ``max|act(Bz+cxb) - z|``.
    """
    with np.errstate(over="ignore", invalid="ignore"):
        return _fp_solve(B, cxb, z0, act_id, method, max_iters, tol, m, damping, reg)


def _fp_solve(B, cxb, z0, act_id, method, max_iters, tol, m, damping, reg):
    # overflow to inf/NaN is detected and reported via NOT_FINITE
    z = np.array(z0, dtype=np.float64, copy=True)
    gz = _act(act_id, B @ z + cxb)
    if not np.isfinite(gz).all():
        return z, 0, float("nan"), NOT_FINITE
    r = float(np.abs(gz - z).max())

    hist_z = [z]
    hist_g = [gz]
    k = 0
    while True:
        if r <= tol:
            return z, k, r, OK
        if k >= max_iters:
            return z, k, r, NO_CONVERGENCE

        if method == _METHOD_PLAIN:
            z_next = gz
        else:
            z_next = _anderson_step(hist_z, hist_g, damping, reg)

        gz_next = _act(act_id, B @ z_next + cxb)
        if not np.isfinite(z_next).all() or not np.isfinite(gz_next).all():
            return z, k, r, NOT_FINITE

        z, gz = z_next, gz_next
        r = float(np.abs(gz - z).max())
        hist_z.append(z)
        hist_g.append(gz)
        if len(hist_z) > m:
            hist_z.pop(0)
            hist_g.pop(0)
        k += 1


def _anderson_step(hist_z, hist_g, damping, reg):
    h = len(hist_z)
    z_last, g_last = hist_z[-1], hist_g[-1]
    if h == 1:
        return (1.0 - damping) * z_last + damping * g_last

    Z = np.asarray(hist_z)
    G = np.asarray(hist_g)
    F = G - Z
    dZ = np.diff(Z, axis=0)  # (h-1, d)
    dG = np.diff(G, axis=0)
    dF = dG - dZ

    A = dF @ dF.T
    A[np.diag_indices_from(A)] += reg
    try:
        alpha = np.linalg.solve(A, dF @ F[-1])
    except np.linalg.LinAlgError:
        return (1.0 - damping) * z_last + damping * g_last

    z_mix = z_last - alpha @ dZ
    g_mix = g_last - alpha @ dG
    return (1.0 - damping) * z_mix + damping * g_mix


def adjoint_solve(B, dphi, y, max_iters, tol):
    """Solve u = B^T (dphi * u) + y by linear fixed-point iteration.

    Converges geometrically whenever the spectral radius of diag(dphi) @ B
    is below one, which the projection step guarantees. Returns
    ``(u, iterations, residual, status)``.
    """
    u = np.array(y, dtype=np.float64, copy=True)
    k = 0
    while True:
        au = B.T @ (dphi * u) + y
        if not np.isfinite(au).all():
            return u, k, float("nan"), NOT_FINITE
        r = float(np.abs(au - u).max())
        if r <= tol:
            return u, k, r, OK
        if k >= max_iters:
            return u, k, r, NO_CONVERGENCE
        u = au
        k += 1


def project_l1(v, kappa, bisect_tol, max_iters):
    """Euclidean projection of one row onto the l1 ball of radius kappa."""
    v = np.asarray(v, dtype=np.float64)
    a = np.abs(v)
    if a.sum() <= kappa:
        return v.copy(), OK
    lo, hi = 0.0, float(a.max())
    ok = NO_CONVERGENCE
    for _ in range(max_iters):
        if hi - lo <= bisect_tol:
            ok = OK
            break
        mid = 0.5 * (lo + hi)
        if np.maximum(a - mid, 0.0).sum() > kappa:
            lo = mid
        else:
            hi = mid
    # gamma = hi sits on the feasible side of the root, so the result
    # satisfies the l1 constraint exactly
    return np.sign(v) * np.maximum(a - hi, 0.0), ok


def project_rows(M, kappa, bisect_tol, max_iters):
    """Project every row of M onto the l1 ball; rows are independent."""
    out = np.empty_like(M)
    status = OK
    for i in range(M.shape[0]):
        out[i], st = project_l1(M[i], kappa, bisect_tol, max_iters)
        status = max(status, st)
    return out, status
