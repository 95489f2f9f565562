"""Forward transforms over quadric surfaces and the discrete 2D circular operator.

The transform of ``f`` over ``{Psi = 0}`` with ``Psi = t - (x-s)^T A (x-s)``
is the plain surface-measure integral: the ``|grad Psi|`` weight cancels the
co-area factor of ``delta(Psi)``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp

from . import kernels
from .geometry import (ELLIPSOID, OTHER, TWO_SHEETED, Box, Quadric, builtin_surface,
                       classify_quadric)
from .phantoms import ImageGrid

__all__ = [
    "QuadConfig",
    "ScanGeometry2D",
    "SystemMatrix",
    "Sinogram2D",
    "integrate_over_quadric",
    "circle_integrals",
    "default_geometry",
    "forward_scan_2d",
    "build_system_matrix",
    "apply",
    "apply_adjoint",
    "simulate_sinogram",
]

_GL7 = np.polynomial.legendre.leggauss(7)
_GL8 = np.polynomial.legendre.leggauss(8)


@dataclass(frozen=True)
class QuadConfig:
    """Adaptive quadrature settings: stop when error <= tol_abs + tol_rel*|I|."""

    tol_abs: float = 1e-6
    tol_rel: float = 1e-4
    max_rounds: int = 60
    max_level: int = 6  # tensor-product refinement cap for 3D surfaces


# ---------------------------------------------------------------------------
# adaptive 1D quadrature, batched over independent integrals
# ---------------------------------------------------------------------------

def _gauss(fn, item, a, b):
    """Order-7 Gauss-Legendre estimate of each panel ``(item, a, b)``."""
    x, w = _GL7
    half = 0.5 * (b - a)
    mid = 0.5 * (a + b)
    t = mid[:, None] + half[:, None] * x[None, :]
    vals = fn(np.repeat(item, x.size), t.ravel()).reshape(t.shape)
    return half * (vals @ w)


def adaptive_panels(fn, item, a, b, n_items, cfg: QuadConfig = QuadConfig()):
    """Integrate ``fn(item, t)`` over the given panels, summing per item.

    Each item's panels are refined (bisection, Gauss order 7 vs the two
    halves) until the item's summed error estimate meets its tolerance.
    Returns ``(values, converged)``.
    """
    item = np.asarray(item, dtype=np.int64)
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    total = np.zeros(n_items)
    converged = np.ones(n_items, dtype=bool)
    if item.size == 0:
        return total, converged
    length = np.bincount(item, weights=b - a, minlength=n_items)
    whole = _gauss(fn, item, a, b)
    for rnd in range(cfg.max_rounds + 1):
        m = 0.5 * (a + b)
        left = _gauss(fn, item, a, m)
        right = _gauss(fn, item, m, b)
        fine = left + right
        err = np.abs(fine - whole)
        est = np.bincount(item, weights=fine, minlength=n_items)
        err_sum = np.bincount(item, weights=err, minlength=n_items)
        tol = cfg.tol_abs + cfg.tol_rel * np.abs(est)
        active = err_sum > tol
        share = tol[item] * (b - a) / np.maximum(length[item], 1e-300)
        split = active[item] & (err > 0.5 * share)
        # make progress on active items whose error is spread thin
        stuck = active & (np.bincount(item, weights=split, minlength=n_items) == 0)
        if np.any(stuck):
            order = np.lexsort((-err, item))
            first = np.ones(order.size, dtype=bool)
            first[1:] = item[order][1:] != item[order][:-1]
            lead = order[first]
            split[lead[stuck[item[lead]]]] = True
        keep = ~split
        total += np.bincount(item[keep], weights=fine[keep], minlength=n_items)
        if not np.any(split) or rnd == cfg.max_rounds:
            if np.any(split):
                total += np.bincount(item[split], weights=fine[split], minlength=n_items)
                converged[np.unique(item[split])] = False
            break
        item, a, m, b = item[split], a[split], m[split], b[split]
        lw, rw = left[split], right[split]
        item = np.concatenate([item, item])
        a, b = np.concatenate([a, m]), np.concatenate([m, b])
        whole = np.concatenate([lw, rw])
    return total, converged


def _initial_panels(intervals, max_len):
    """Split ``(item, a, b)`` intervals into panels no longer than ``max_len``."""
    item, a, b = (np.asarray(v) for v in intervals)
    if item.size == 0:
        return item.astype(np.int64), a.astype(float), b.astype(float)
    ml = np.broadcast_to(np.asarray(max_len, float), a.shape)
    counts = np.maximum(np.ceil((b - a) / ml).astype(np.int64), 1)
    rep = np.repeat(np.arange(a.size), counts)
    first = np.repeat(np.cumsum(counts) - counts, counts)
    k = np.arange(rep.size) - first
    step = (b - a)[rep] / counts[rep]
    lo = a[rep] + k * step
    return item[rep].astype(np.int64), lo, lo + step


# ---------------------------------------------------------------------------
# circles
# ---------------------------------------------------------------------------

def _circle_box_arcs(c, r, lower, upper):
    """Angular intervals of the circle ``(c, r)`` lying inside the box."""
    cuts = [0.0, 2 * math.pi]
    for axis in (0, 1):
        for edge in (lower[axis], upper[axis]):
            d = (edge - c[axis]) / r
            if abs(d) < 1:
                base = math.acos(d) if axis == 0 else math.asin(d)
                cand = (base, -base) if axis == 0 else (base, math.pi - base)
                cuts.extend(th % (2 * math.pi) for th in cand)
    cuts = np.unique(cuts)
    arcs = []
    for lo, hi in zip(cuts[:-1], cuts[1:]):
        if hi - lo <= 0:
            continue
        mid = 0.5 * (lo + hi)
        px, py = c[0] + r * math.cos(mid), c[1] + r * math.sin(mid)
        if lower[0] <= px <= upper[0] and lower[1] <= py <= upper[1]:
            if arcs and abs(arcs[-1][1] - lo) < 1e-15:
                arcs[-1][1] = hi
            else:
                arcs.append([lo, hi])
    if len(arcs) > 1 and arcs[0][0] == 0.0 and arcs[-1][1] == 2 * math.pi:
        first = arcs.pop(0)
        arcs[-1][1] = 2 * math.pi + first[1]
    return arcs


def circle_integrals(f, centers, radii, bounds=None, cfg: QuadConfig = QuadConfig()):
    """Surface-measure integrals of ``f`` over many circles at once.

    ``bounds`` (a :class:`Box` or ``(lower, upper)``) must contain supp(f);
    only the arcs inside it are integrated.  Returns ``(values, converged)``.
    """
    centers = np.atleast_2d(np.asarray(centers, dtype=float))
    radii = np.atleast_1d(np.asarray(radii, dtype=float))
    n = radii.size
    items, los, his = [], [], []
    if bounds is None:
        items = list(range(n))
        los = [0.0] * n
        his = [2 * math.pi] * n
        max_len = np.full(n, 2 * math.pi / 32)
    else:
        box = bounds if isinstance(bounds, Box) else Box(*bounds)
        diag = float(np.hypot(*(box.upper - box.lower)))
        for k in range(n):
            for lo, hi in _circle_box_arcs(centers[k], radii[k], box.lower, box.upper):
                items.append(k)
                los.append(lo)
                his.append(hi)
        max_len = np.maximum(diag, 1e-12) / 16 / radii[np.asarray(items, dtype=np.int64)] \
            if items else np.zeros(0)
    if not items:
        return np.zeros(n), np.ones(n, dtype=bool)
    item, a, b = _initial_panels((np.asarray(items), np.asarray(los), np.asarray(his)), max_len)

    def fn(k, th):
        pts = np.stack([centers[k, 0] + radii[k] * np.cos(th),
                        centers[k, 1] + radii[k] * np.sin(th)], axis=-1)
        return np.asarray(f(pts), dtype=float) * radii[k]

    return adaptive_panels(fn, item, a, b, n, cfg)


# ---------------------------------------------------------------------------
# general quadrics
# ---------------------------------------------------------------------------

def _tensor_gauss(fn, ranges, cfg: QuadConfig, base_panels=(4, 8)):
    """Composite Gauss on a 2D box, doubling panels until two levels agree."""
    x, w = _GL8
    prev = None
    for level in range(cfg.max_level + 1):
        grids, weights = [], []
        for (lo, hi), p0 in zip(ranges, base_panels):
            p = p0 << level
            h = (hi - lo) / p
            mids = lo + (np.arange(p) + 0.5) * h
            grids.append((mids[:, None] + 0.5 * h * x[None, :]).ravel())
            weights.append(np.tile(0.5 * h * w, p))
        est = 0.0
        step = max(1, (1 << 20) // grids[1].size)
        for lo in range(0, grids[0].size, step):
            u, v = np.meshgrid(grids[0][lo:lo + step], grids[1], indexing="ij")
            est += float(weights[0][lo:lo + step] @ fn(u, v) @ weights[1])
        if prev is not None and abs(est - prev) <= cfg.tol_abs + cfg.tol_rel * abs(est):
            return est, True
        prev = est
    return prev, False


def _box_of(bounds):
    if bounds is None:
        return None
    return bounds if isinstance(bounds, Box) else Box(*bounds)


def integrate_over_quadric(f: Callable, quadric: Quadric, bounds=None,
                           cfg: QuadConfig = QuadConfig(), return_info: bool = False):
    """``int_{Psi=0} f dsigma`` for a 2D or 3D quadric.

    Ellipsoids are integrated over the whole closed surface; hyperboloids
    over the part whose parameter range covers ``bounds`` (required), which
    must contain supp(f).  Dimensions 2 and 3 are supported.
    """
    s = np.asarray(quadric.center, dtype=float)
    A = np.asarray(quadric.matrix, dtype=float)
    t = float(quadric.level)
    n = s.size
    if n not in (2, 3):
        raise ValueError("only 2D and 3D quadrics are supported")
    kind = classify_quadric(A, t)
    if kind == OTHER:
        raise ValueError("quadric has no real points (classification 'other')")
    box = _box_of(bounds)
    # eigen-frame with positive level: sum lam_k z_k^2 = |t|
    lam, V = np.linalg.eigh(np.sign(t) * A)
    tt = abs(t)

    def world(z):
        return s + z @ V.T

    if kind == ELLIPSOID:
        M = V * np.sqrt(tt / lam)[None, :]  # x = s + M u, |u| = 1
        detM = abs(np.linalg.det(M))
        Minv_T = np.linalg.inv(M).T
        if n == 2:
            def fn(k, th):
                u = np.stack([np.cos(th), np.sin(th)], axis=-1)
                jac = detM * np.linalg.norm(u @ Minv_T.T, axis=-1)
                return np.asarray(f(s + u @ M.T), dtype=float) * jac

            item, a, b = _initial_panels(([0], [0.0], [2 * math.pi]), 2 * math.pi / 64)
            val, ok = adaptive_panels(fn, item, a, b, 1, cfg)
            val, ok = float(val[0]), bool(ok[0])
        else:
            def fn(th, ph):
                st = np.sin(th)
                u = np.stack([st * np.cos(ph), st * np.sin(ph), np.cos(th)], axis=-1)
                jac = detM * np.linalg.norm(u @ Minv_T.T, axis=-1) * st
                return np.asarray(f(s + u @ M.T), dtype=float) * jac

            val, ok = _tensor_gauss(fn, [(0.0, math.pi), (0.0, 2 * math.pi)], cfg)
    else:
        if box is None:
            raise ValueError("hyperboloids need a bounding box containing supp(f)")
        center = 0.5 * (box.lower + box.upper)
        R = 0.5 * float(np.linalg.norm(box.upper - box.lower)) + 1e-12
        cz = (center - s) @ V  # box center in the eigen-frame

        def inside(x):
            return np.all((x >= box.lower) & (x <= box.upper), axis=-1)

        if kind == TWO_SHEETED:
            ip = int(np.argmax(lam))
            others = [k for k in range(n) if k != ip]
            lp, lo_ = lam[ip], -lam[others]

            def sheet(zperp, sign):
                h = np.sqrt((tt + zperp**2 @ lo_) / lp)
                grad_h = zperp * lo_ / (lp * h[..., None])
                z = np.empty(zperp.shape[:-1] + (n,))
                z[..., ip] = sign * h
                z[..., others] = zperp
                x = world(z)
                jac = np.sqrt(1.0 + np.sum(grad_h**2, axis=-1))
                return np.where(inside(x), np.asarray(f(x), dtype=float), 0.0) * jac

            if n == 2:
                def fn(k, zz):
                    return sheet(zz[:, None], np.where(k == 0, 1.0, -1.0))

                o = others[0]
                item, a, b = _initial_panels(([0, 1], [cz[o] - R] * 2, [cz[o] + R] * 2),
                                             2 * R / 64)
                vals, oks = adaptive_panels(fn, item, a, b, 2, cfg)
                val, ok = float(vals.sum()), bool(np.all(oks))
            else:
                rng = [(cz[k] - R, cz[k] + R) for k in others]
                val, ok = 0.0, True
                for sign in (1.0, -1.0):
                    v, o = _tensor_gauss(lambda u, v_, sg=sign: sheet(np.stack([u, v_], -1), sg),
                                         rng, cfg, (8, 8))
                    val += v
                    ok &= o
        else:  # ELLIPTIC_HYPERBOLOID, n == 3: one negative eigenvalue
            ineg = int(np.argmin(lam))
            i1, i2 = [k for k in range(3) if k != ineg]
            l1, l2, l3 = lam[i1], lam[i2], -lam[ineg]

            def fn(ph, z3):
                base = tt + l3 * z3**2
                r1, r2 = np.sqrt(base / l1), np.sqrt(base / l2)
                d1, d2 = l3 * z3 / (l1 * r1), l3 * z3 / (l2 * r2)
                c, sn = np.cos(ph), np.sin(ph)
                z = np.empty(ph.shape + (3,))
                z[..., i1], z[..., i2], z[..., ineg] = r1 * c, r2 * sn, z3
                x = world(z)
                jac = np.sqrt((r2 * c) ** 2 + (r1 * sn) ** 2
                              + (r1 * d2 * sn**2 + r2 * d1 * c**2) ** 2)
                return np.where(inside(x), np.asarray(f(x), dtype=float), 0.0) * jac

            val, ok = _tensor_gauss(fn, [(0.0, 2 * math.pi), (cz[ineg] - R, cz[ineg] + R)],
                                    cfg, (16, 8))
    if not ok:
        warnings.warn("quadric integral did not reach the requested tolerance", RuntimeWarning)
    if return_info:
        return val, {"kind": kind, "converged": ok}
    return val


# ---------------------------------------------------------------------------
# 2D circular scan
# ---------------------------------------------------------------------------

@dataclass
class ScanGeometry2D:
    """Circle centers on a curve and radii; measurement ``(i, j)`` is row ``i*J + j``."""

    centers: np.ndarray
    radii: np.ndarray
    curve: str = "custom"
    source_y: Optional[np.ndarray] = None

    def __post_init__(self):
        self.centers = np.atleast_2d(np.asarray(self.centers, dtype=float))
        self.radii = np.atleast_1d(np.asarray(self.radii, dtype=float))
        if self.centers.shape[1] != 2:
            raise ValueError("centers must be (K, 2)")
        if np.any(self.radii <= 0):
            raise ValueError("radii must be positive")

    @property
    def shape(self):
        return (len(self.centers), self.radii.size)

    @property
    def n_rows(self):
        return len(self.centers) * self.radii.size

    def row_circles(self):
        """Per-row ``(cx, cy, r)`` in row order."""
        K, J = self.shape
        c = np.repeat(self.centers, J, axis=0)
        return c[:, 0], c[:, 1], np.tile(self.radii, K)


def default_geometry(curve="convex", n_centers: Optional[int] = None,
                   n_radii: Optional[int] = None) -> ScanGeometry2D:
    """Centers ``y_i = -100 + (i-1)/2`` (``i = 0..401``) on the curve, radii ``1+j``, ``j=1..199``.

    ``n_centers`` / ``n_radii`` resample the same spans uniformly
    (``y in [-100.5, 100]``, ``r in [2, 200]``) for smaller runs.
    """
    surface = builtin_surface(curve) if isinstance(curve, str) else curve
    if n_centers is None:
        y = -100.0 + (np.arange(402) - 1) / 2.0
    else:
        y = np.linspace(-100.5, 100.0, int(n_centers))
    radii = 1.0 + np.arange(1, 200) if n_radii is None else np.linspace(2.0, 200.0, int(n_radii))
    centers = np.stack([y, surface.height(y)], axis=-1)
    name = curve if isinstance(curve, str) else surface.family
    return ScanGeometry2D(centers, radii, name, y)


@dataclass
class Sinogram2D:
    values: np.ndarray
    geometry: ScanGeometry2D
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float).reshape(self.geometry.shape)


def forward_scan_2d(f: Callable, geometry: ScanGeometry2D, bounds=None,
                    cfg: QuadConfig = QuadConfig()) -> Sinogram2D:
    """Continuous circular transform: entry ``(i, j)`` integrates ``f`` over circle ``(c_i, r_j)``.

    ``bounds`` defaults to ``f.bounds()`` when ``f`` is a phantom.
    """
    if bounds is None and hasattr(f, "bounds"):
        bnd = f.bounds()
        if bnd is None:  # empty phantom
            return Sinogram2D(np.zeros(geometry.shape), geometry, {"method": "quadrature"})
        bounds = bnd
    cx, cy, r = geometry.row_circles()
    vals, ok = circle_integrals(f, np.stack([cx, cy], -1), r, bounds, cfg)
    prov = {"method": "quadrature", "tol_abs": cfg.tol_abs, "tol_rel": cfg.tol_rel,
            "unconverged": int(np.count_nonzero(~ok))}
    return Sinogram2D(vals, geometry, prov)


@dataclass
class SystemMatrix:
    """Sparse arc-length quadrature of the circular transform on a pixel grid."""

    matrix: sp.csr_matrix
    geometry: ScanGeometry2D
    grid: ImageGrid

    @property
    def shape(self):
        return self.matrix.shape

    def norm_estimate(self, iters: int = 50, seed: int = 0) -> float:
        """Largest singular value by power iteration on ``A^T A``."""
        rng = np.random.Generator(np.random.Philox(seed))
        x = rng.standard_normal(self.shape[1])
        x /= np.linalg.norm(x)
        sigma = 0.0
        for _ in range(iters):
            y = self.matrix.T @ (self.matrix @ x)
            nrm = np.linalg.norm(y)
            if nrm == 0:
                return 0.0
            sigma = math.sqrt(nrm)
            x = y / nrm
        return sigma


def build_system_matrix(geometry: ScanGeometry2D, grid: ImageGrid,
                        arc_step: Optional[float] = None) -> SystemMatrix:
    """Row ``(i, j)``: samples along circle ``(c_i, r_j)`` at arc spacing ``<= min(spacing)/2``,
    each depositing arc length times bilinear weights on its 4 surrounding pixels."""
    if grid.ndim != 2:
        raise ValueError("system matrix needs a 2D grid")
    if arc_step is None:
        arc_step = float(np.min(grid.spacing)) / 2
    cx, cy, r = geometry.row_circles()
    indptr, indices, data = kernels.splat_circles(cx, cy, r, grid.origin, grid.spacing,
                                                  grid.dims, float(arc_step))
    mat = sp.csr_matrix((data, indices, indptr), shape=(geometry.n_rows, grid.size))
    return SystemMatrix(mat, geometry, ImageGrid(grid.dims, grid.origin, grid.spacing))


def _as_matrix(matrix):
    return matrix.matrix if isinstance(matrix, SystemMatrix) else matrix


def apply(matrix, x) -> np.ndarray:
    """``A x`` for an image (grid, array) flattened row-major."""
    A = _as_matrix(matrix)
    x = x.flat if isinstance(x, ImageGrid) else np.asarray(x, dtype=float).ravel()
    if x.size != A.shape[1]:
        raise ValueError(f"image has {x.size} entries, matrix expects {A.shape[1]}")
    return A @ x


def apply_adjoint(matrix, y) -> np.ndarray:
    """``A^T y`` (unfiltered backprojection)."""
    A = _as_matrix(matrix)
    y = y.values if isinstance(y, Sinogram2D) else y
    y = np.asarray(y, dtype=float).ravel()
    if y.size != A.shape[0]:
        raise ValueError(f"data has {y.size} entries, matrix expects {A.shape[0]}")
    return A.T @ y


def simulate_sinogram(system: SystemMatrix, image, perturb: float = 0.5,
                      noise_sigma: float = 0.0, seed: int = 0) -> Sinogram2D:
    """``b = A_eps x + eta``: weights scaled by ``1+u``, ``u ~ U(-perturb, perturb)``;
    ``eta ~ N(0, noise_sigma)``.  Streams come from Philox keyed by ``seed``."""
    if not 0 <= perturb < 1:
        raise ValueError("perturb must lie in [0, 1) so weights stay positive")
    if noise_sigma < 0:
        raise ValueError("noise_sigma must be >= 0")
    A = system.matrix
    x = image.flat if isinstance(image, ImageGrid) else np.asarray(image, dtype=float).ravel()
    if x.size != A.shape[1]:
        raise ValueError(f"image has {x.size} entries, matrix expects {A.shape[1]}")
    weight_ss, noise_ss = np.random.SeedSequence(int(seed)).spawn(2)
    if perturb > 0:
        u = np.random.Generator(np.random.Philox(weight_ss)).uniform(-perturb, perturb,
                                                                       A.nnz)
        A = sp.csr_matrix((A.data * (1.0 + u), A.indices, A.indptr), shape=A.shape)
    b = A @ x
    if noise_sigma > 0:
        b = b + np.random.Generator(np.random.Philox(noise_ss)).normal(0.0, noise_sigma,
                                                                         b.size)
    prov = {"seed": int(seed), "perturb": float(perturb), "noise_sigma": float(noise_sigma),
            "rng": "philox"}
    return Sinogram2D(b, system.geometry, prov)
