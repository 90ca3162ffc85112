"""Pure numpy implementations of the hot kernels.

Used when the compiled ``_kernels`` extension is missing, or when
``ENSEMBLEREG_BACKEND=python`` is set.  Signatures match ``_kernels.pyx``.
"""
import numpy as np


def patch_ssd(fixed, moving, disps, radius):
    """Sum of squared patch differences for every voxel and displacement.

    Returns an ``(H, W, K)`` array.  Coordinates falling outside the grid
    are clamped to the nearest border pixel, independently in ``fixed``
    and in ``moving``.
    """
    fixed = np.ascontiguousarray(fixed, dtype=np.float64)
    moving = np.ascontiguousarray(moving, dtype=np.float64)
    H, W = fixed.shape
    K = disps.shape[0]
    out = np.zeros((H, W, K))
    ys = np.arange(H)
    xs = np.arange(W)
    for k in range(K):
        dx, dy = int(disps[k, 0]), int(disps[k, 1])
        acc = np.zeros((H, W))
        for oy in range(-radius, radius + 1):
            fy = np.clip(ys + oy, 0, H - 1)
            my = np.clip(ys + oy + dy, 0, H - 1)
            for ox in range(-radius, radius + 1):
                fx = np.clip(xs + ox, 0, W - 1)
                mx = np.clip(xs + ox + dx, 0, W - 1)
                d = fixed[np.ix_(fy, fx)] - moving[np.ix_(my, mx)]
                acc += d * d
        out[:, :, k] = acc
    return out


def _apply(x, wh, wv, gamma):
    # (L + gamma I) x on a 4-connected grid; x has shape (K, H, W)
    y = gamma * x
    dh = wh * (x[:, :, :-1] - x[:, :, 1:])
    y[:, :, :-1] += dh
    y[:, :, 1:] -= dh
    dv = wv * (x[:, :-1, :] - x[:, 1:, :])
    y[:, :-1, :] += dv
    y[:, 1:, :] -= dv
    return y


def _dot(a, b):
    return np.sum(a * b, axis=(1, 2))


def solve_shifted_laplacian(wh, wv, gamma, rhs, x0, tol, max_iter, num_threads=1):
    """Jacobi-preconditioned CG for ``(L + gamma I) x_k = rhs_k``, all k.

    ``rhs`` and ``x0`` have shape ``(K, H, W)``.  Returns ``(x, iters,
    relres)`` where ``relres`` is the final ``||r|| / ||rhs||`` per column.
    ``num_threads`` is accepted for signature parity and ignored.
    """
    rhs = np.asarray(rhs, dtype=np.float64)
    x = np.array(x0, dtype=np.float64)
    K, H, W = rhs.shape
    diag = np.full((H, W), float(gamma))
    diag[:, :-1] += wh
    diag[:, 1:] += wh
    diag[:-1, :] += wv
    diag[1:, :] += wv
    inv_diag = 1.0 / diag

    bnorm = np.sqrt(_dot(rhs, rhs))
    scale = np.where(bnorm > 0, bnorm, 1.0)
    r = rhs - _apply(x, wh, wv, gamma)
    relres = np.sqrt(_dot(r, r)) / scale
    active = relres > tol
    iters = np.zeros(K, dtype=np.int64)
    z = inv_diag * r
    p = z.copy()
    rz = _dot(r, z)
    it = 0
    while np.any(active) and it < max_iter:
        it += 1
        idx = np.flatnonzero(active)
        pa = p[idx]
        q = _apply(pa, wh, wv, gamma)
        alpha = rz[idx] / _dot(pa, q)
        x[idx] += alpha[:, None, None] * pa
        r[idx] -= alpha[:, None, None] * q
        relres[idx] = np.sqrt(_dot(r[idx], r[idx])) / scale[idx]
        iters[idx] = it
        done = relres[idx] <= tol
        z_new = inv_diag * r[idx]
        rz_new = _dot(r[idx], z_new)
        beta = rz_new / rz[idx]
        p[idx] = z_new + beta[:, None, None] * pa
        rz[idx] = rz_new
        active[idx[done]] = False
    return x, iters, relres


def aggregate_rows(keys, values, weights):
    """Aggregate each row of ``(N, K)`` realizations by key.

    Zero weights are dropped; within a group the smallest value represents
    it.  Returns ragged ``(offsets, values, weights)`` sorted by key per row.
    """
    keys = np.asarray(keys, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    N, K = keys.shape
    order = np.lexsort((np.broadcast_to(np.arange(K), (N, K)), values, keys), axis=-1)
    ks = np.take_along_axis(keys, order, axis=1)
    vs = np.take_along_axis(values, order, axis=1)
    ws = np.take_along_axis(weights, order, axis=1)
    keep = ws > 0
    rows = np.broadcast_to(np.arange(N)[:, None], (N, K))[keep]
    ks, vs, ws = ks[keep], vs[keep], ws[keep]
    start = np.ones(ws.size, dtype=bool)
    start[1:] = (rows[1:] != rows[:-1]) | (ks[1:] != ks[:-1])
    starts = np.flatnonzero(start)
    out_w = np.add.reduceat(ws, starts) if starts.size else np.zeros(0)
    out_v = vs[starts]
    per_row = np.bincount(rows[starts], minlength=N)
    offsets = np.zeros(N + 1, dtype=np.int64)
    np.cumsum(per_row, out=offsets[1:])
    return offsets, out_v, out_w
