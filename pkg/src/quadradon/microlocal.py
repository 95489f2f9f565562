"""Mirror-point artifact prediction and wavefront coverage maps.

A quadric ``t - x_T^T A x_T = 0`` centred at a surface point ``c = (y, q(y))``
meets the line through ``x`` in direction ``d = A^{-1} w``, ``w = (-grad q, 1)``,
at exactly one other point, the *mirror point*

    x_m = x + s* d,    s* = -2 (x_T . w) / (w^T A^{-1} w).

It lies on the same quadric and on the other side of the tangent plane at
``c``; sweeping ``c`` along the surface traces the locus where the normal
operator of the transform can create artifacts from a singularity at ``x``.

Coverage maps count which wavefront directions at each voxel of the unit
cylinder are conormal to some measured sphere (or spheroid) through it.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, List, Tuple, Union

import numpy as np

from . import kernels
from .forward import ScanGeometry2D
from .geometry import GraphSurface
from .phantoms import ImageGrid

__all__ = [
    "MirrorResult",
    "ArtifactSet",
    "StreakCircle",
    "BinConfig",
    "CoverageMap",
    "mirror_point",
    "predict_artifact_set",
    "boundary_streak_circles",
    "cylinder_grid",
    "sphere_coverage_map",
    "spheroid_coverage_map",
    "mean_coverage_profile",
    "plane_mean",
]


# ---------------------------------------------------------------------------
# mirror points
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MirrorResult:
    """Source ``x``, mirror ``x_m = x + shift * direction`` and the quadric data."""

    source: np.ndarray
    mirror: np.ndarray
    direction: np.ndarray
    shift: float
    center: np.ndarray
    conormal: np.ndarray  # w = (-grad q, 1) in world coordinates
    matrix: np.ndarray

    @property
    def level(self) -> float:
        xt = self.source - self.center
        return float(xt @ self.matrix @ xt)

    def residuals(self) -> dict:
        """Deviations from the three defining identities (all ~0 for a valid result)."""
        A = self.matrix
        xt = self.source - self.center
        mt = self.mirror - self.center
        psi_x = self.level - xt @ A @ xt
        psi_m = self.level - mt @ A @ mt
        diff = self.mirror - self.source
        d = self.direction
        # component of (x_m - x) orthogonal to d, relative to |x_m - x|
        nd = np.linalg.norm(d)
        perp = diff - (diff @ d) / (nd * nd) * d
        scale = max(np.linalg.norm(diff), 1e-300)
        return {
            "same_quadric": float(abs(psi_x - psi_m)),
            "parallel": float(np.linalg.norm(perp) / scale) if np.linalg.norm(diff) > 0 else 0.0,
            "opposite_sides": float(abs(xt @ self.conormal + mt @ self.conormal)),
        }


def _frame(surface: GraphSurface, y):
    y = surface._as_y(y)
    if y.ndim != 1:
        raise ValueError("mirror_point takes a single surface parameter y")
    return surface.points(y), surface.normals(y)


def mirror_point(surface: GraphSurface, y, A, x) -> MirrorResult:
    """Other intersection of the quadric through ``x`` centred at ``(y, q(y))``
    with the line ``x + sigma A^{-1} w``.

    ``A`` is taken in world coordinates.  Raises ``ValueError`` when ``A``
    is singular or ``w^T A^{-1} w = 0`` (indefinite ``A``, null direction).
    """
    c, w = _frame(surface, y)
    A = np.asarray(A, dtype=float)
    x = np.asarray(x, dtype=float)
    if A.shape != (c.size, c.size):
        raise ValueError(f"A must be {c.size}x{c.size}")
    if np.allclose(x, c, rtol=0, atol=0):
        raise ValueError("x coincides with the surface point")
    try:
        d = np.linalg.solve(A, w)
    except np.linalg.LinAlgError as exc:
        raise ValueError("singular matrix") from exc
    den = float(w @ d)
    if abs(den) <= 1e-14 * max(np.linalg.norm(w) * np.linalg.norm(d), 1e-300):
        raise ValueError("degenerate direction")
    xt = x - c
    shift = -2.0 * float(xt @ w) / den
    return MirrorResult(x.copy(), x + shift * d, d, shift, c, w, A)


@dataclass
class ArtifactSet:
    """Predicted mirror locus for one source point."""

    source: np.ndarray
    points: np.ndarray  # (k, n)
    params: np.ndarray  # surface parameters y that produced each point
    skipped: int = 0


def _matrix_for(family, y) -> np.ndarray:
    if callable(family):
        return np.asarray(family(y), dtype=float)
    return np.asarray(family, dtype=float)


def predict_artifact_set(surface: GraphSurface, family: Union[np.ndarray, Callable],
                         x0, count: int = 401) -> ArtifactSet:
    """Mirror points of ``x0`` for ``count`` surface samples per axis.

    ``family`` is a fixed matrix ``A`` or a callable ``y -> A(y)``.  Samples
    where ``x0`` sits at the surface point or the direction is degenerate
    are skipped and counted.
    """
    x0 = np.asarray(x0, dtype=float)
    ys = surface.sample(count)
    pts, used, skipped = [], [], 0
    for y in ys:
        try:
            res = mirror_point(surface, y, _matrix_for(family, y), x0)
        except ValueError:
            skipped += 1
            continue
        pts.append(res.mirror)
        used.append(y)
    dim = x0.size
    return ArtifactSet(x0, np.array(pts).reshape(-1, dim),
                       np.array(used).reshape(-1, dim - 1), skipped)


@dataclass(frozen=True)
class StreakCircle:
    center: np.ndarray
    radius: float


def boundary_streak_circles(geometry: ScanGeometry2D, x0) -> Tuple[StreakCircle, StreakCircle]:
    """Circles about the first and last scan centers passing through ``x0``.

    The hard cut-off of the data at the ends of the center curve produces
    streaks along these two circles.
    """
    if len(geometry.centers) < 2:
        raise ValueError("geometry needs at least two centers")
    x0 = np.asarray(x0, dtype=float)
    out = []
    for c in (geometry.centers[0], geometry.centers[-1]):
        out.append(StreakCircle(c.copy(), float(np.linalg.norm(x0 - c))))
    return tuple(out)


# ---------------------------------------------------------------------------
# coverage maps
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BinConfig:
    """Longitude-latitude direction bins about the ``x2`` axis.

    With antipodal identification only the upper ``n_lat // 2`` latitude
    bands are distinct, giving ``n_lat // 2 * n_lon`` bins.
    """

    n_lat: int = 18
    n_lon: int = 36
    antipodal: bool = True

    def __post_init__(self):
        if not self.antipodal:
            raise ValueError("only antipodally identified bins are supported")
        if self.n_lat < 2 or self.n_lat % 2 or self.n_lon < 1:
            raise ValueError("n_lat must be even and >= 2, n_lon >= 1")

    @property
    def count(self) -> int:
        return (self.n_lat // 2) * self.n_lon


@dataclass
class CoverageMap:
    """Per-voxel fraction of direction bins detected; ``mask`` marks voxels in the cylinder."""

    grid: ImageGrid
    mask: np.ndarray
    bins: BinConfig
    meta: dict = field(default_factory=dict)

    @property
    def values(self) -> np.ndarray:
        return self.grid.values


def cylinder_grid(n: int = 32, height: float = 1.0) -> ImageGrid:
    """``n^3`` grid over ``[-1, 1] x [-height, height] x [-1, 1]`` (axis ``x2``)."""
    return ImageGrid.from_extent((n, n, n), [-1.0, -height, -1.0], [1.0, height, 1.0])


def _heights(N: int) -> np.ndarray:
    if N < 1:
        raise ValueError("N must be >= 1")
    if N == 1:
        return np.zeros(1)
    return -1.0 + 2.0 * np.arange(N) / (N - 1)


def _phis(step_deg: float) -> np.ndarray:
    if step_deg <= 0:
        raise ValueError("phi step must be positive")
    n = int(round(360.0 / step_deg))
    if n < 1 or abs(n * step_deg - 360.0) > 1e-9:
        n = int(np.floor(360.0 / step_deg))
    return np.deg2rad(step_deg * np.arange(max(n, 1)))


def _coverage(N, phi_step_deg, grid, bins, spheroid, phis=None):
    grid = cylinder_grid() if grid is None else grid
    bins = BinConfig() if bins is None else bins
    x = grid.centers()
    mask = (x[:, 0] ** 2 + x[:, 2] ** 2) < 1.0
    phis = _phis(phi_step_deg) if phis is None else np.asarray(phis, dtype=float)
    hits = kernels.coverage_hits(x[mask], phis, _heights(N), spheroid, bins.n_lat, bins.n_lon)
    vals = np.zeros(grid.size)
    vals[mask] = hits.sum(axis=1) / bins.count
    mode = "spheroid" if spheroid else "sphere"
    out = grid.with_values(vals, kind="coverage", mode=mode, N=N, phi_step=phi_step_deg)
    return CoverageMap(out, mask.reshape(grid.dims), bins,
                       {"mode": mode, "N": N, "phi_step": phi_step_deg, "n_phi": phis.size})


def sphere_coverage_map(N: int, phi_step_deg: float = 6.0, grid: ImageGrid = None,
                        bins: BinConfig = None, phis=None) -> CoverageMap:
    """Fraction of direction bins hit by ``(x - c)/|x - c|`` over centers
    ``c = (cos phi, x2, sin phi)``, ``x2`` on ``N`` equispaced heights in ``[-1, 1]``."""
    return _coverage(N, phi_step_deg, grid, bins, False, phis)


def spheroid_coverage_map(N: int, phi_step_deg: float = 6.0, grid: ImageGrid = None,
                          bins: BinConfig = None, phis=None) -> CoverageMap:
    """Like :func:`sphere_coverage_map` for spheroids with foci at two heights on
    the same cylinder generator; the detected direction is the bisector
    ``u1 + u2`` of the focal rays.  Coincident foci give the sphere directions."""
    return _coverage(N, phi_step_deg, grid, bins, True, phis)


_PLANES = {"x1x2": 2, "x2x1": 2, "x1x3": 1, "x3x1": 1, "x2x3": 0, "x3x2": 0}


def plane_mean(cmap: CoverageMap, plane: str) -> float:
    """Mean coverage in percent over the cylinder voxels of a coordinate mid-plane.

    For an even number of layers the two layers straddling the plane are
    averaged.
    """
    try:
        axis = _PLANES[plane]
    except KeyError:
        raise ValueError(f"unknown plane {plane!r}; use one of x1x2, x1x3, x2x3") from None
    n = cmap.grid.dims[axis]
    layers = [n // 2] if n % 2 else [n // 2 - 1, n // 2]
    vals = np.take(cmap.values, layers, axis=axis)
    mask = np.take(cmap.mask, layers, axis=axis)
    if not np.any(mask):
        return 0.0
    return float(100.0 * vals[mask].mean())


def mean_coverage_profile(maps: Union[Dict[int, CoverageMap], Iterable[CoverageMap]],
                          plane: str = "x1x3") -> List[Tuple[int, float]]:
    """``[(N, mean percent)]`` over a mid-plane, sorted by ``N``."""
    if isinstance(maps, dict):
        items = list(maps.items())
    else:
        items = [(m.meta["N"], m) for m in maps]
    grids = {(m.grid.dims, tuple(m.grid.origin), tuple(m.grid.spacing)) for _, m in items}
    if len(grids) > 1:
        raise ValueError("coverage maps must share a grid")
    return sorted((int(N), plane_mean(m, plane)) for N, m in items)
