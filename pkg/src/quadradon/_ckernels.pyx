# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
# distutils: language = c++
"""Compiled hot loops; see ``_pykernels`` for the reference definitions."""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, cos, sin, floor, ceil, atan2, asin, fabs, M_PI
from libcpp.vector cimport vector
from libcpp.algorithm cimport sort

cnp.import_array()


cdef inline bint _reaches_grid(double cx, double cy, double r, double x0, double y0,
                               double x1, double y1, double pad) nogil:
    cdef double dx = 0.0, dy = 0.0, fx, fy
    if x0 - pad - cx > dx:
        dx = x0 - pad - cx
    if cx - x1 - pad > dx:
        dx = cx - x1 - pad
    if y0 - pad - cy > dy:
        dy = y0 - pad - cy
    if cy - y1 - pad > dy:
        dy = cy - y1 - pad
    fx = fabs(cx - x0 + pad)
    if fabs(cx - x1 - pad) > fx:
        fx = fabs(cx - x1 - pad)
    fy = fabs(cy - y0 + pad)
    if fabs(cy - y1 - pad) > fy:
        fy = fabs(cy - y1 - pad)
    return r > 0 and r >= sqrt(dx * dx + dy * dy) and r <= sqrt(fx * fx + fy * fy)


def splat_circles(cx_in, cy_in, r_in, origin, spacing, dims, double arc_step):
    cdef double[::1] cx = np.ascontiguousarray(cx_in, dtype=np.float64)
    cdef double[::1] cy = np.ascontiguousarray(cy_in, dtype=np.float64)
    cdef double[::1] rr = np.ascontiguousarray(r_in, dtype=np.float64)
    cdef double ox = origin[0], oy = origin[1], hx = spacing[0], hy = spacing[1]
    cdef Py_ssize_t nx = dims[0], ny = dims[1]
    cdef Py_ssize_t nrows = rr.shape[0], npix = nx * ny
    cdef double pad = hx if hx > hy else hy
    cdef double gx1 = ox + nx * hx, gy1 = oy + ny * hy
    cdef double[::1] acc = np.zeros(npix)
    cdef vector[long long] touched
    cdef vector[long long] indices
    cdef vector[double] data
    cdef long long[::1] indptr = np.zeros(nrows + 1, dtype=np.int64)
    cdef Py_ssize_t k, m, t, M
    cdef long long i0, j0, ii, jj, idx
    cdef double r, dth, ds, th, fx, fy, ax, ay, w
    cdef int di, dj
    with nogil:
        for k in range(nrows):
            r = rr[k]
            if _reaches_grid(cx[k], cy[k], r, ox, oy, gx1, gy1, pad):
                M = <Py_ssize_t> ceil(2 * M_PI * r / arc_step)
                if M < 8:
                    M = 8
                dth = 2 * M_PI / M
                ds = r * dth
                touched.clear()
                for m in range(M):
                    th = (m + 0.5) * dth
                    fx = (cx[k] + r * cos(th) - ox) / hx - 0.5
                    fy = (cy[k] + r * sin(th) - oy) / hy - 0.5
                    i0 = <long long> floor(fx)
                    j0 = <long long> floor(fy)
                    ax = fx - i0
                    ay = fy - j0
                    for di in range(2):
                        ii = i0 + di
                        if ii < 0 or ii >= nx:
                            continue
                        for dj in range(2):
                            jj = j0 + dj
                            if jj < 0 or jj >= ny:
                                continue
                            w = (ax if di else 1 - ax) * (ay if dj else 1 - ay) * ds
                            idx = ii * ny + jj
                            if acc[idx] == 0.0:
                                touched.push_back(idx)
                            acc[idx] += w
                            if acc[idx] == 0.0:
                                acc[idx] = 1e-300
                sort(touched.begin(), touched.end())
                for t in range(<Py_ssize_t> touched.size()):
                    idx = touched[t]
                    if acc[idx] > 1e-300:
                        indices.push_back(idx)
                        data.push_back(acc[idx])
                    acc[idx] = 0.0
            indptr[k + 1] = indices.size()
    out_idx = np.empty(indices.size(), dtype=np.int64)
    out_dat = np.empty(data.size(), dtype=np.float64)
    cdef long long[::1] oi = out_idx
    cdef double[::1] od = out_dat
    for t in range(<Py_ssize_t> indices.size()):
        oi[t] = indices[t]
        od[t] = data[t]
    return np.asarray(indptr), out_idx, out_dat


cdef void _kernel_pair(double P, double U, double s2, double a, int nmax, int order,
                       double[::1] v, double wq, double[::1] tk, double[::1] dk,
                       double* outk, double* outd, Py_ssize_t stride) noexcept nogil:
    # K_n(eta; P, U) and dK_n/dP for n = 0..nmax, written with the given stride
    cdef Py_ssize_t q, n
    cdef double X, vv, Q2, B, G, W, sqW, C, arg, sinc, dC, dlogG, c, dc, pref
    cdef double base, dbase, gcd
    for n in range(nmax + 1):
        outk[n * stride] = 0.0
        outd[n * stride] = 0.0
    for q in range(order):
        vv = v[q]
        X = U + vv * (P - U)
        Q2 = (1 - s2) * X * X + s2 * P * P
        B = 1 + (U * U - X * X) / (4 * (1 - U))
        G = X * sqrt(Q2) / sqrt((P + X) * (X + U) * B)
        W = P * P - X * X
        if W < 0:
            W = 0
        sqW = sqrt(W)
        arg = a * sqW
        C = cos(arg)
        if arg == 0:
            sinc = 1.0
        else:
            sinc = sin(arg) / arg
        dC = -(a * a) * (P - vv * X) * sinc
        dlogG = (vv / X + ((1 - s2) * X * vv + s2 * P) / Q2 - (1 + vv) / (2 * (P + X))
                 - vv / (2 * (X + U)) + X * vv / (4 * (1 - U) * B))
        c = 1 + (U * U - X * X) / (2 * (1 - U))
        dc = -X * vv / (1 - U)
        base = G * C
        dbase = G * (dlogG * C + dC)
        gcd = G * C * dc
        tk[0] = 1.0
        dk[0] = 0.0
        if nmax >= 1:
            tk[1] = c
            dk[1] = 1.0
        for n in range(2, nmax + 1):
            tk[n] = 2 * c * tk[n - 1] - tk[n - 2]
            dk[n] = 2 * tk[n - 1] + 2 * c * dk[n - 1] - dk[n - 2]
        for n in range(nmax + 1):
            outk[n * stride] += base * tk[n]
            outd[n * stride] += dbase * tk[n] + gcd * dk[n]
    pref = wq * sqrt(1 - U)
    for n in range(nmax + 1):
        outk[n * stride] *= pref
        outd[n * stride] *= pref


cdef double[::1] _cheb_nodes(int order):
    return 0.5 * (1 + np.cos((2 * np.arange(1, order + 1) - 1) * np.pi / (2 * order)))


def volterra_kernel_stack(p_in, double aspect, double eta, int nmax, int order):
    cdef double[::1] p = np.ascontiguousarray(p_in, dtype=np.float64)
    cdef Py_ssize_t npts = p.shape[0]
    K_arr = np.zeros((nmax + 1, npts, npts))
    Kp_arr = np.zeros((nmax + 1, npts, npts))
    cdef double[:, :, ::1] K = K_arr
    cdef double[:, :, ::1] Kp = Kp_arr
    cdef double[::1] v = _cheb_nodes(order)
    cdef double[::1] tk = np.zeros(nmax + 1)
    cdef double[::1] dk = np.zeros(nmax + 1)
    cdef double wq = M_PI / order, s2 = aspect * aspect, a = eta / aspect
    cdef Py_ssize_t i, j, stride = npts * npts
    if npts == 0:
        return K_arr, Kp_arr
    with nogil:
        for i in range(npts):
            for j in range(i + 1):
                _kernel_pair(p[i], p[j], s2, a, nmax, order, v, wq, tk, dk,
                             &K[0, i, j], &Kp[0, i, j], stride)
    return K_arr, Kp_arr


def volterra_kernel_pairs(p_in, u_in, double aspect, double eta, int nmax, int order):
    cdef double[::1] p = np.ascontiguousarray(p_in, dtype=np.float64)
    cdef double[::1] u = np.ascontiguousarray(u_in, dtype=np.float64)
    cdef Py_ssize_t npairs = p.shape[0], k
    K_arr = np.zeros((nmax + 1, npairs))
    Kp_arr = np.zeros((nmax + 1, npairs))
    cdef double[:, ::1] K = K_arr
    cdef double[:, ::1] Kp = Kp_arr
    cdef double[::1] v = _cheb_nodes(order)
    cdef double[::1] tk = np.zeros(nmax + 1)
    cdef double[::1] dk = np.zeros(nmax + 1)
    cdef double wq = M_PI / order, s2 = aspect * aspect, a = eta / aspect
    if npairs == 0:
        return K_arr, Kp_arr
    with nogil:
        for k in range(npairs):
            _kernel_pair(p[k], u[k], s2, a, nmax, order, v, wq, tk, dk,
                         &K[0, k], &Kp[0, k], npairs)
    return K_arr, Kp_arr


cdef inline long long _bin(double x1, double x2, double x3, int half, int n_lon) nogil:
    cdef double lon = atan2(x3, x1), nrm, lat
    cdef long long lb, ob
    if x2 < 0 or (x2 == 0 and lon < 0):
        x1 = -x1
        x2 = -x2
        x3 = -x3
    nrm = sqrt(x1 * x1 + x2 * x2 + x3 * x3)
    x2 = x2 / nrm
    if x2 > 1.0:
        x2 = 1.0
    lat = asin(x2)
    lon = atan2(x3, x1)
    if lon < 0:
        lon += 2 * M_PI
    lb = <long long> (lat * (2 * half / M_PI))
    if lb > half - 1:
        lb = half - 1
    ob = <long long> (lon * (n_lon / (2 * M_PI)))
    if ob > n_lon - 1:
        ob = n_lon - 1
    return lb * n_lon + ob


def coverage_hits(points, phis_in, heights_in, bint spheroid, int n_lat, int n_lon):
    cdef double[:, ::1] pts = np.ascontiguousarray(points, dtype=np.float64)
    cdef double[::1] phis = np.ascontiguousarray(phis_in, dtype=np.float64)
    cdef double[::1] hs = np.ascontiguousarray(heights_in, dtype=np.float64)
    cdef int half = n_lat // 2
    cdef Py_ssize_t nb = half * n_lon
    cdef Py_ssize_t nv = pts.shape[0], npsi = phis.shape[0], nh = hs.shape[0]
    hits_arr = np.zeros((nv, nb), dtype=np.uint8)
    cdef unsigned char[:, ::1] hits = hits_arr
    cdef double[:, ::1] u = np.zeros((nh, 3))
    cdef unsigned char[::1] ok = np.zeros(nh, dtype=np.uint8)
    cdef Py_ssize_t vi, f, a, b
    cdef double cp, sp, d1, d2, d3, nrm, e1, e2, e3
    with nogil:
        for vi in range(nv):
            for f in range(npsi):
                cp = cos(phis[f])
                sp = sin(phis[f])
                for a in range(nh):
                    d1 = pts[vi, 0] - cp
                    d2 = pts[vi, 1] - hs[a]
                    d3 = pts[vi, 2] - sp
                    nrm = sqrt(d1 * d1 + d2 * d2 + d3 * d3)
                    if nrm > 0:
                        ok[a] = 1
                        u[a, 0] = d1 / nrm
                        u[a, 1] = d2 / nrm
                        u[a, 2] = d3 / nrm
                        hits[vi, _bin(u[a, 0], u[a, 1], u[a, 2], half, n_lon)] = 1
                    else:
                        ok[a] = 0
                if spheroid:
                    for a in range(nh):
                        if not ok[a]:
                            continue
                        for b in range(a + 1, nh):
                            if not ok[b]:
                                continue
                            e1 = u[a, 0] + u[b, 0]
                            e2 = u[a, 1] + u[b, 1]
                            e3 = u[a, 2] + u[b, 2]
                            if e1 * e1 + e2 * e2 + e3 * e3 > 0:
                                hits[vi, _bin(e1, e2, e3, half, n_lon)] = 1
    return hits_arr.astype(bool)
