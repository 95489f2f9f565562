"""NumPy implementations of the hot loops.

Same signatures and results as the compiled ``_ckernels`` module; used when
the extension is unavailable or ``QUADRADON_PURE=1``.
"""

import numpy as np
import scipy.sparse as sp

_CHUNK_SAMPLES = 1 << 21


def _circle_sample_counts(r, arc_step):
    m = np.ceil(2 * np.pi * r / arc_step).astype(np.int64)
    return np.maximum(m, 8)


def _circle_hits_grid(cx, cy, r, lower, upper, pad):
    """Circles whose locus can reach the padded grid box."""
    dx = np.maximum(np.maximum(lower[0] - pad - cx, cx - upper[0] - pad), 0.0)
    dy = np.maximum(np.maximum(lower[1] - pad - cy, cy - upper[1] - pad), 0.0)
    near = np.hypot(dx, dy)
    fx = np.maximum(np.abs(cx - lower[0] + pad), np.abs(cx - upper[0] - pad))
    fy = np.maximum(np.abs(cy - lower[1] + pad), np.abs(cy - upper[1] - pad))
    far = np.hypot(fx, fy)
    return (r > 0) & (r >= near) & (r <= far)


def splat_circles(cx, cy, r, origin, spacing, dims, arc_step):
    """Arc-length weighted bilinear footprints of circles, one CSR row per circle.

    Returns ``(indptr, indices, data)``; pixel ``(i, j)`` has flat index
    ``i * dims[1] + j`` with axis 0 along ``x1``.
    """
    cx = np.ascontiguousarray(cx, dtype=float)
    cy = np.ascontiguousarray(cy, dtype=float)
    r = np.ascontiguousarray(r, dtype=float)
    ox, oy = float(origin[0]), float(origin[1])
    hx, hy = float(spacing[0]), float(spacing[1])
    nx, ny = int(dims[0]), int(dims[1])
    nrows = r.size
    lower = np.array([ox, oy])
    upper = lower + np.array([nx * hx, ny * hy])
    active = _circle_hits_grid(cx, cy, r, lower, upper, max(hx, hy))
    counts = np.where(active, _circle_sample_counts(r, arc_step), 0)

    blocks = []
    start = 0
    while start < nrows:
        stop = start
        total = 0
        while stop < nrows and (total == 0 or total + counts[stop] <= _CHUNK_SAMPLES):
            total += counts[stop]
            stop += 1
        blocks.append(_splat_block(cx[start:stop], cy[start:stop], r[start:stop],
                                   counts[start:stop], ox, oy, hx, hy, nx, ny))
        start = stop
    if not blocks:
        mat = sp.csr_matrix((0, nx * ny))
    else:
        mat = sp.vstack(blocks, format="csr")
    mat.sum_duplicates()
    mat.sort_indices()
    return (mat.indptr.astype(np.int64), mat.indices.astype(np.int64),
            mat.data.astype(np.float64))


def _splat_block(cx, cy, r, counts, ox, oy, hx, hy, nx, ny):
    nrows = r.size
    total = int(counts.sum())
    if total == 0:
        return sp.csr_matrix((nrows, nx * ny))
    row = np.repeat(np.arange(nrows), counts)
    first = np.repeat(np.cumsum(counts) - counts, counts)
    m = np.arange(total) - first
    mm = counts[row].astype(float)
    theta = (m + 0.5) * (2 * np.pi / mm)
    rr = r[row]
    ds = rr * (2 * np.pi / mm)
    fx = (cx[row] + rr * np.cos(theta) - ox) / hx - 0.5
    fy = (cy[row] + rr * np.sin(theta) - oy) / hy - 0.5
    i0 = np.floor(fx)
    j0 = np.floor(fy)
    ax = fx - i0
    ay = fy - j0
    i0 = i0.astype(np.int64)
    j0 = j0.astype(np.int64)
    rows, cols, vals = [], [], []
    for di, dj, w in ((0, 0, (1 - ax) * (1 - ay)), (1, 0, ax * (1 - ay)),
                      (0, 1, (1 - ax) * ay), (1, 1, ax * ay)):
        ii = i0 + di
        jj = j0 + dj
        ok = (ii >= 0) & (ii < nx) & (jj >= 0) & (jj < ny)
        rows.append(row[ok])
        cols.append(ii[ok] * ny + jj[ok])
        vals.append((w * ds)[ok])
    coo = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                        shape=(nrows, nx * ny))
    return coo.tocsr()


def volterra_kernel_pairs(p, u, aspect, eta, nmax, order):
    """Kernel ``K_n(eta; p_k, u_k)`` and ``dK_n/dp`` for ``n = 0..nmax`` at paired points.

    Gauss-Chebyshev (first kind) rule with ``order`` nodes on the
    regularized ``v`` integral; returns two ``(nmax + 1, len(p))`` arrays.
    """
    p = np.asarray(p, dtype=float).ravel()
    u = np.asarray(u, dtype=float).ravel()
    K = np.zeros((nmax + 1, p.size))
    Kp = np.zeros((nmax + 1, p.size))
    z = np.cos((2 * np.arange(1, order + 1) - 1) * np.pi / (2 * order))
    v = 0.5 * (1 + z)
    wq = np.pi / order
    s2 = aspect * aspect
    a = eta / aspect
    step = max(1, (1 << 19) // order)
    for lo in range(0, p.size, step):
        sl = slice(lo, lo + step)
        P = p[sl][:, None]
        U = u[sl][:, None]
        X = U + v[None, :] * (P - U)
        Q2 = (1 - s2) * X * X + s2 * P * P
        B = 1 + (U * U - X * X) / (4 * (1 - U))
        G = X * np.sqrt(Q2) / np.sqrt((P + X) * (X + U) * B)
        arg = a * np.sqrt(np.maximum(P * P - X * X, 0.0))
        C = np.cos(arg)
        sinc = np.where(arg == 0, 1.0, np.sin(arg) / np.where(arg == 0, 1.0, arg))
        dC = -(a * a) * (P - v * X) * sinc
        dlogG = (v / X + ((1 - s2) * X * v + s2 * P) / Q2 - (1 + v) / (2 * (P + X))
                 - v / (2 * (X + U)) + X * v / (4 * (1 - U) * B))
        c = 1 + (U * U - X * X) / (2 * (1 - U))
        dc = -X * v / (1 - U)
        pref = wq * np.sqrt(1 - u[sl])
        base = G * C
        dbase = G * (dlogG * C + dC)
        gcd = G * C * dc
        # Chebyshev recurrences for T_n(c) and dT_n/dc
        t_prev, t_cur = np.ones_like(c), c
        d_prev, d_cur = np.zeros_like(c), np.ones_like(c)
        for n in range(nmax + 1):
            if n == 0:
                t, d = t_prev, d_prev
            elif n == 1:
                t, d = t_cur, d_cur
            else:
                t_prev, t_cur = t_cur, 2 * c * t_cur - t_prev
                d_prev, d_cur = d_cur, 2 * t_prev + 2 * c * d_cur - d_prev
                t, d = t_cur, d_cur
            K[n, sl] = pref * np.sum(base * t, axis=1)
            Kp[n, sl] = pref * np.sum(dbase * t + gcd * d, axis=1)
    return K, Kp


def volterra_kernel_stack(p, aspect, eta, nmax, order):
    """Kernel ``K_n(eta; p_i, p_j)`` and ``dK_n/dp`` for ``n = 0..nmax``, ``j <= i``.

    Entries above the diagonal are zero.
    """
    p = np.asarray(p, dtype=float)
    npts = p.size
    K = np.zeros((nmax + 1, npts, npts))
    Kp = np.zeros((nmax + 1, npts, npts))
    ii, jj = np.tril_indices(npts)
    k, kp = volterra_kernel_pairs(p[ii], p[jj], aspect, eta, nmax, order)
    K[:, ii, jj] = k
    Kp[:, ii, jj] = kp
    return K, Kp


def direction_bins(xi, n_lat, n_lon):
    """Antipodally identified longitude-latitude bin of 3D directions.

    The polar axis is ``x2``; ``n_lat`` counts full-sphere latitude bands,
    only the upper ``n_lat // 2`` are reachable after identification.
    """
    x1, x2, x3 = xi[..., 0], xi[..., 1], xi[..., 2]
    lon = np.arctan2(x3, x1)
    flip = (x2 < 0) | ((x2 == 0) & (lon < 0))
    x1 = np.where(flip, -x1, x1)
    x2 = np.where(flip, -x2, x2)
    x3 = np.where(flip, -x3, x3)
    norm = np.sqrt(x1 * x1 + x2 * x2 + x3 * x3)
    lat = np.arcsin(np.minimum(x2 / norm, 1.0))
    lon = np.arctan2(x3, x1)
    lon = np.where(lon < 0, lon + 2 * np.pi, lon)
    half = n_lat // 2
    lb = np.minimum((lat * (2 * half / np.pi)).astype(np.int64), half - 1)
    ob = np.minimum((lon * (n_lon / (2 * np.pi))).astype(np.int64), n_lon - 1)
    return lb * n_lon + ob


def coverage_hits(points, phis, heights, spheroid, n_lat, n_lon):
    """Boolean ``(len(points), n_lat // 2 * n_lon)`` table of direction bins hit.

    Sphere mode: one direction per center ``(cos phi, h, sin phi)``.
    Spheroid mode: every unordered pair of heights at each ``phi`` (pairs
    with equal heights reduce to the sphere direction).
    """
    pts = np.asarray(points, dtype=float)
    nb = (n_lat // 2) * n_lon
    hits = np.zeros((len(pts), nb), dtype=bool)
    cphi, sphi = np.cos(phis), np.sin(phis)
    heights = np.asarray(heights, dtype=float)
    pi_, pj_ = np.triu_indices(heights.size)
    per_voxel = phis.size * (pi_.size if spheroid else heights.size)
    chunk = max(1, 2_000_000 // max(per_voxel, 1))
    for start in range(0, len(pts), chunk):
        x = pts[start:start + chunk]
        # unit vectors from every center to every point: (V, P, H, 3)
        d = np.empty((len(x), phis.size, heights.size, 3))
        d[..., 0] = x[:, None, None, 0] - cphi[None, :, None]
        d[..., 1] = x[:, None, None, 1] - heights[None, None, :]
        d[..., 2] = x[:, None, None, 2] - sphi[None, :, None]
        nrm = np.sqrt(np.sum(d * d, axis=-1))
        ok = nrm > 0
        u = d / np.where(ok, nrm, 1.0)[..., None]
        if spheroid:
            xi = u[:, :, pi_, :] + u[:, :, pj_, :]
            same = (pi_ == pj_)[None, None, :, None]
            xi = np.where(same, u[:, :, pi_, :], xi)
            good = ok[:, :, pi_] & ok[:, :, pj_] & (np.sum(xi * xi, axis=-1) > 0)
        else:
            xi = u
            good = ok
        b = direction_bins(np.where(good[..., None], xi, 1.0), n_lat, n_lon)
        vox = np.broadcast_to(np.arange(len(x))[:, None, None], b.shape)
        hits[start + vox[good], b[good]] = True
    return hits
