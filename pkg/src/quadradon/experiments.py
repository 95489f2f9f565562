"""Desk-scale experiment recipes: artifact overlap, TV vs Landweber, coverage ordering.

Each function returns plain data (dataclasses / dicts) so that the acceptance
suite, the benchmarks and interactive sessions share one definition of every
statistic.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.spatial import cKDTree

from . import forward as fwd
from . import microlocal as ml
from . import recon
from .geometry import builtin_surface
from .phantoms import ImageGrid, catalog_phantom, delta_grid, rasterize

__all__ = [
    "ARTIFACT_VIEWS",
    "ARTIFACT_POINTS",
    "OverlapResult",
    "artifact_overlap",
    "TVComparison",
    "tv_vs_landweber",
    "coverage_ordering",
]

# Image windows (n, lower, upper) for the artifact statistic.  For a convex
# center curve the mirror locus lies on the far side of the curve, so the
# window must extend well below it to contain the predicted artifacts.
ARTIFACT_VIEWS: Dict[str, Tuple[int, Tuple[float, float], Tuple[float, float]]] = {
    "convex": (160, (-240.0, -300.0), (240.0, 180.0)),
    "nonconvex": (128, (-100.0, -100.0), (100.0, 100.0)),
}

# Interior test points (strictly on the convex side for the parabola).
ARTIFACT_POINTS: Dict[str, List[Tuple[float, float]]] = {
    "convex": [(-40.0, 20.0), (0.0, 0.0), (30.0, 40.0), (50.0, -10.0), (-20.0, 60.0)],
    "nonconvex": [(-60.0, 40.0), (60.0, 50.0), (-75.0, 0.0), (75.0, 60.0), (-50.0, 70.0)],
}


@dataclass
class OverlapResult:
    """Artifact statistic for one point source."""

    point: np.ndarray          # requested source location
    source: np.ndarray         # pixel center actually used
    fraction: float            # share of the top pixels near the mirror locus
    outside_convex_side: bool  # every predicted point strictly below the curve
    n_locus: int
    selected: np.ndarray = field(repr=False)  # flat indices of the top pixels
    backprojection: np.ndarray = field(repr=False)


def artifact_overlap(curve: str = "convex", points: Optional[Sequence] = None,
                     n: Optional[int] = None, lower=None, upper=None, top: int = 200,
                     disk: float = 5.0, band: float = 2.0, tol: float = 2.0,
                     samples: int = 20001) -> List[OverlapResult]:
    """Fraction of bright backprojection pixels explained by mirror points.

    For each source the normal operator ``A^T A`` is applied to a pixel
    delta.  Pixels within ``disk`` pixels of the source or within ``band``
    pixels of either boundary-streak circle are discarded; of the remaining
    pixels the ``top`` brightest are kept, and the statistic is the fraction
    of them lying within ``tol`` pixels of the predicted mirror locus
    (``samples`` points along the center curve, ``A = I``).
    """
    view = ARTIFACT_VIEWS.get(curve, ARTIFACT_VIEWS["nonconvex"])
    n = view[0] if n is None else int(n)
    lower = view[1] if lower is None else lower
    upper = view[2] if upper is None else upper
    points = ARTIFACT_POINTS.get(curve, []) if points is None else points

    surface = builtin_surface(curve)
    geom = fwd.default_geometry(surface)
    grid = ImageGrid.from_extent((n, n), lower, upper)
    A = fwd.build_system_matrix(geom, grid).matrix
    h = float(np.max(grid.spacing))
    X = grid.centers()

    out = []
    for p in points:
        img = delta_grid(p, grid)
        k = int(np.argmax(img.flat))
        xs = X[k]
        bp = A.T @ (A @ img.flat)
        keep = np.hypot(*(X - xs).T) > disk * h
        for circ in ml.boundary_streak_circles(geom, xs):
            keep &= np.abs(np.hypot(*(X - circ.center).T) - circ.radius) > band * h
        cand = np.flatnonzero(keep)
        sel = cand[np.argsort(bp[cand], kind="stable")[::-1][:top]]
        locus = ml.predict_artifact_set(surface, np.eye(2), xs, samples).points
        dist, _ = cKDTree(locus).query(X[sel])
        below = bool(np.all(locus[:, 1] < surface.height(locus[:, 0])))
        out.append(OverlapResult(np.asarray(p, dtype=float), xs, float(np.mean(dist <= tol * h)),
                                 below, len(locus), sel, bp))
    return out


@dataclass
class TVComparison:
    tv_rmse: float
    landweber_rmse: float
    alpha: float
    beta: float
    budget: int
    tv_applies: int
    landweber_applies: int
    cv: recon.CVResult = field(repr=False)


def tv_vs_landweber(curve: str = "nonconvex", phantom: str = "simple", n: int = 64,
                    budget: int = 200, noise: float = 0.05, perturb: float = 0.5,
                    seed: int = 0, alphas=(0.0, 1e2, 1e3, 1e4), betas=(1e-2, 1e-1),
                    folds: int = 5, cv_iters: int = 100) -> TVComparison:
    """RMSE of cross-validated TV against Landweber at an equal apply budget.

    Data: perturbed system matrix (``1+U(-perturb, perturb)`` weights) plus
    Gaussian noise with ``sigma = noise * max(clean data)``.  Both solvers
    get ``budget`` applications of ``A`` or ``A^T`` for the final
    reconstruction; the cost of the cross-validation search and of
    Landweber's norm estimate is not charged to either.
    """
    surface = builtin_surface(curve)
    geom = fwd.default_geometry(surface)
    grid = ImageGrid.from_extent((n, n), [-100.0, -100.0], [100.0, 100.0])
    system = fwd.build_system_matrix(geom, grid)
    truth = rasterize(catalog_phantom(phantom), grid, supersample=2)
    clean = fwd.apply(system, truth)
    sino = fwd.simulate_sinogram(system, truth, perturb, noise * float(np.max(np.abs(clean))),
                                 seed)

    def rmse(img):
        return float(np.sqrt(np.mean((img.flat - truth.flat) ** 2)))

    lw = recon.landweber(system, sino.values, iters=budget // 2, seed=seed)
    cv = recon.cross_validate_tv(system, sino.values, alphas, betas, folds, seed,
                                 iters=cv_iters)
    tv = recon.tv_reconstruct(system, sino.values, cv.alpha, cv.beta, iters=budget,
                              max_applies=budget)
    return TVComparison(rmse(tv), rmse(lw), cv.alpha, cv.beta, budget,
                        int(tv.meta["applies"]), int(lw.meta["applies"]), cv)


def coverage_ordering(Ns: Sequence[int] = (8, 16, 32), phi_step: float = 6.0, n: int = 32,
                      planes: Sequence[str] = ("x1x2", "x1x3")) -> dict:
    """Mean sphere and spheroid coverage per ``N`` and plane, plus a per-voxel
    check that the sphere bin set is contained in the spheroid bin set.

    Returns ``{"sphere": {plane: [(N, pct)]}, "spheroid": {...},
    "inclusion": {N: bool}}``.
    """
    from . import kernels

    grid = ml.cylinder_grid(n)
    bins = ml.BinConfig()
    x = grid.centers()
    inside = (x[:, 0] ** 2 + x[:, 2] ** 2) < 1.0
    phis = ml._phis(phi_step)
    res = {"sphere": {p: [] for p in planes}, "spheroid": {p: [] for p in planes},
           "inclusion": {}}
    for N in Ns:
        hs = ml._heights(N)
        hits_s = kernels.coverage_hits(x[inside], phis, hs, False, bins.n_lat, bins.n_lon)
        hits_e = kernels.coverage_hits(x[inside], phis, hs, True, bins.n_lat, bins.n_lon)
        res["inclusion"][int(N)] = bool(np.all(hits_e[hits_s.astype(bool)]))
        for mode, hits in (("sphere", hits_s), ("spheroid", hits_e)):
            vals = np.zeros(grid.size)
            vals[inside] = hits.sum(axis=1) / bins.count
            cmap = ml.CoverageMap(grid.with_values(vals), inside.reshape(grid.dims), bins,
                                  {"N": N, "mode": mode})
            for p in planes:
                res[mode][p].append((int(N), ml.plane_mean(cmap, p)))
    return res
