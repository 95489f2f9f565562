"""Quadric integration surfaces, graph-type center surfaces and tangent planes.

A quadric is the zero set of ``t - (x - s)^T A (x - s)``.  Center surfaces
are graphs ``x_n = q(x')`` over an axis-aligned box, optionally with the
graph axis moved by a coordinate permutation (used for the charts of the
unit cylinder).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

__all__ = [
    "Quadric",
    "GraphSurface",
    "TangentPlane",
    "BolkerReport",
    "Box",
    "eval_defining_function",
    "classify_quadric",
    "tangent_plane",
    "bolker_check",
    "quartic_nonconvex",
    "parabola_convex",
    "flat_plane",
    "unit_cylinder_charts",
    "surface_from_csv",
    "builtin_surface",
]

ELLIPSOID = "ellipsoid"
TWO_SHEETED = "two-sheeted-hyperboloid"
ELLIPTIC_HYPERBOLOID = "elliptic-hyperboloid"
OTHER = "other"

_SYM_TOL = 1e-12
_SINGULAR_RTOL = 1e-12


@dataclass(frozen=True)
class Quadric:
    """Level set ``level - (x - center)^T matrix (x - center) = 0``."""

    center: np.ndarray
    matrix: np.ndarray
    level: float

    def __post_init__(self):
        center = np.asarray(self.center, dtype=float).reshape(-1)
        matrix = np.asarray(self.matrix, dtype=float)
        n = center.size
        if matrix.shape != (n, n):
            raise ValueError(f"matrix must be {n}x{n}, got {matrix.shape}")
        if np.max(np.abs(matrix - matrix.T)) > _SYM_TOL:
            raise ValueError("matrix is not symmetric")
        scale = max(np.max(np.abs(matrix)), 1e-300)
        if abs(np.linalg.det(matrix)) <= 1e-12 * scale**n:
            raise ValueError("singular matrix")
        level = float(self.level)
        if level == 0.0 or not np.isfinite(level):
            raise ValueError("level must be finite and nonzero")
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "matrix", matrix)
        object.__setattr__(self, "level", level)

    @property
    def dim(self) -> int:
        return self.center.size

    def classification(self) -> str:
        return classify_quadric(self.matrix, self.level)


def eval_defining_function(quadric: Quadric, x) -> np.ndarray:
    """Return ``t - x_T^T A x_T`` for a point or an ``(m, n)`` stack of points."""
    x = np.asarray(x, dtype=float)
    xt = x - quadric.center
    return quadric.level - np.einsum("...i,ij,...j->...", xt, quadric.matrix, xt)


def classify_quadric(matrix, level: float) -> str:
    """Quadric type from the eigenvalue signature of ``sign(level) * matrix``."""
    matrix = np.asarray(matrix, dtype=float)
    if level == 0:
        raise ValueError("level must be nonzero")
    eig = np.linalg.eigvalsh(np.sign(level) * 0.5 * (matrix + matrix.T))
    if np.min(np.abs(eig)) <= _SINGULAR_RTOL * np.max(np.abs(eig)):
        raise ValueError("singular matrix")
    npos = int(np.sum(eig > 0))
    if npos == eig.size:
        return ELLIPSOID
    if npos == 0:
        return OTHER
    if npos == 1:
        return TWO_SHEETED
    return ELLIPTIC_HYPERBOLOID


@dataclass
class GraphSurface:
    """Hypersurface ``{(y, q(y))}`` over a box in ``R^(n-1)``.

    ``perm`` maps graph coordinates to world coordinates:
    ``world[perm[k]] = graph[k]``.  The identity puts the graph value last.
    """

    dim: int
    q: Callable[[np.ndarray], np.ndarray]
    grad: Callable[[np.ndarray], np.ndarray]
    lower: np.ndarray
    upper: np.ndarray
    family: str = "custom"
    perm: Optional[Sequence[int]] = None
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        self.lower = np.atleast_1d(np.asarray(self.lower, dtype=float))
        self.upper = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if self.lower.size != self.dim - 1 or self.upper.size != self.dim - 1:
            raise ValueError("domain box must have dim-1 axes")
        if np.any(self.upper <= self.lower):
            raise ValueError("empty domain box")
        self.perm = np.arange(self.dim) if self.perm is None else np.asarray(self.perm)

    def _as_y(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        if self.dim == 2 and (y.ndim == 0 or y.shape[-1] != 1):
            y = y[..., None]
        return y

    def contains(self, y, tol: float = 0.0) -> np.ndarray:
        y = self._as_y(y)
        return np.all((y >= self.lower - tol) & (y <= self.upper + tol), axis=-1)

    def height(self, y) -> np.ndarray:
        return np.asarray(self.q(self._as_y(y)), dtype=float)

    def gradient(self, y) -> np.ndarray:
        g = np.asarray(self.grad(self._as_y(y)), dtype=float)
        return g.reshape(self._as_y(y).shape)

    def to_world(self, pts) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        out = np.empty_like(pts)
        out[..., self.perm] = pts
        return out

    def to_graph(self, pts) -> np.ndarray:
        return np.asarray(pts, dtype=float)[..., self.perm]

    def points(self, y) -> np.ndarray:
        """World coordinates of ``(y, q(y))``."""
        y = self._as_y(y)
        return self.to_world(np.concatenate([y, self.height(y)[..., None]], axis=-1))

    def normals(self, y) -> np.ndarray:
        """World-frame ``w = (-grad q, 1)``, the side convention of the Bolker test."""
        y = self._as_y(y)
        g = self.gradient(y)
        w = np.concatenate([-g, np.ones(g.shape[:-1] + (1,))], axis=-1)
        return self.to_world(w)

    def sample(self, count: int) -> np.ndarray:
        """Regular grid of ``count`` points per axis over the domain box."""
        axes = [np.linspace(lo, hi, count) for lo, hi in zip(self.lower, self.upper)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)


@dataclass(frozen=True)
class TangentPlane:
    basepoint: np.ndarray
    conormal: np.ndarray

    def side(self, x) -> np.ndarray:
        return (np.asarray(x, dtype=float) - self.basepoint) @ self.conormal


def tangent_plane(surface: GraphSurface, y) -> TangentPlane:
    """Tangent plane at ``(y, q(y))`` with conormal ``(grad q, -1)``."""
    y = surface._as_y(y)
    if y.ndim != 1:
        raise ValueError("tangent_plane takes a single point y")
    if not surface.contains(y):
        raise ValueError(f"y={y} is outside the surface domain")
    base = surface.points(y)
    conormal = surface.to_world(
        np.concatenate([surface.gradient(y), [-1.0]]))
    return TangentPlane(base, conormal)


@dataclass
class BolkerReport:
    satisfied: bool
    witnesses: list
    sample_count: int
    side: int  # +1 / -1 when satisfied, 0 otherwise

    def __bool__(self):
        return self.satisfied


@dataclass(frozen=True)
class Box:
    """Axis-aligned box region."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lower, dtype=float))
        hi = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if lo.size == 0 or lo.shape != hi.shape or np.any(hi < lo):
            raise ValueError("empty region")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    def corners(self) -> np.ndarray:
        grids = np.meshgrid(*zip(self.lower, self.upper), indexing="ij")
        return np.stack([g.ravel() for g in grids], axis=-1)


def _region_points(region) -> np.ndarray:
    if isinstance(region, Box):
        return region.corners()
    pts = np.atleast_2d(np.asarray(region, dtype=float))
    if pts.size == 0:
        raise ValueError("empty region")
    return pts


def bolker_check(surface: GraphSurface, region, sample_count: int,
                 max_witnesses: int = 50) -> BolkerReport:
    """Sampled test that no tangent plane of ``surface`` meets ``region``.

    ``region`` is a :class:`Box` (its corners decide the side, since the
    side function is affine) or an ``(m, n)`` point cloud.
    The answer certifies only the ``sample_count`` sampled tangent planes.
    """
    if sample_count < 2:
        raise ValueError("sample_count must be >= 2")
    pts = _region_points(region)
    ys = surface.sample(sample_count)
    base = surface.points(ys)
    w = surface.normals(ys)
    # side[k, m] = w_k . (x_m - base_k)
    side = np.einsum("kn,kn->k", -w, base)[:, None] + w @ pts.T
    pos = np.all(side > 0, axis=1)
    neg = np.all(side < 0, axis=1)
    witnesses = []
    for k in np.flatnonzero(~(pos | neg)):
        sk = side[k]
        a = int(np.argmax(sk))
        b = int(np.argmin(sk))
        if sk[a] == sk[b]:
            x = pts[a]
        else:
            lam = sk[a] / (sk[a] - sk[b])
            x = pts[a] + lam * (pts[b] - pts[a])
        witnesses.append((ys[k].copy(), x))
        if len(witnesses) >= max_witnesses:
            break
    if witnesses:
        return BolkerReport(False, witnesses, sample_count, 0)
    if np.all(pos):
        return BolkerReport(True, [], sample_count, 1)
    if np.all(neg):
        return BolkerReport(True, [], sample_count, -1)
    # planes on both sides of the region: by continuity one in between meets it
    k_pos = int(np.flatnonzero(pos)[0])
    k_neg = int(np.flatnonzero(neg)[0])
    return BolkerReport(False, [(ys[k_pos].copy(), pts[0]), (ys[k_neg].copy(), pts[0])],
                        sample_count, 0)


def quartic_nonconvex(a: float = 5e-6, half_width: float = 100.0,
                      top: float = 100.0) -> GraphSurface:
    """``q(y) = a (y + w)(y - w) y^2 + top``; W-shaped for the default values."""
    w2 = half_width**2

    def q(y):
        y1 = y[..., 0]
        return a * (y1**2 - w2) * y1**2 + top

    def grad(y):
        y1 = y[..., 0]
        return (a * (4 * y1**3 - 2 * w2 * y1))[..., None]

    return GraphSurface(2, q, grad, [-half_width], [half_width], "quartic-nonconvex",
                        params={"a": a, "half_width": half_width, "top": top})


def parabola_convex(scale: float = 50.0, offset: float = -100.0,
                    half_width: float = 100.0) -> GraphSurface:
    """``q(y) = y^2 / scale + offset``."""

    def q(y):
        return y[..., 0] ** 2 / scale + offset

    def grad(y):
        return (2 * y[..., 0] / scale)[..., None]

    return GraphSurface(2, q, grad, [-half_width], [half_width], "parabola-convex",
                        params={"scale": scale, "offset": offset})


def flat_plane(dim: int = 2, half_width: float = 100.0) -> GraphSurface:
    def q(y):
        return np.zeros(y.shape[:-1])

    def grad(y):
        return np.zeros(y.shape)

    return GraphSurface(dim, q, grad, [-half_width] * (dim - 1), [half_width] * (dim - 1),
                        "flat-plane")


def unit_cylinder_charts(margin: float = 1e-3, height: float = 1.0):
    """Two graph charts ``x1 = +-sqrt(1 - x3^2)`` of the cylinder ``x1^2 + x3^2 = 1``.

    Graph coordinates are ``(x2, x3, x1)``; the permutation puts them back.
    """
    charts = []
    for sign in (1.0, -1.0):
        def q(y, sign=sign):
            return sign * np.sqrt(1.0 - y[..., 1] ** 2)

        def grad(y, sign=sign):
            x3 = y[..., 1]
            return np.stack([np.zeros_like(x3), -sign * x3 / np.sqrt(1.0 - x3**2)], axis=-1)

        charts.append(GraphSurface(3, q, grad, [-height, -1 + margin], [height, 1 - margin],
                                   "unit-cylinder-3d", perm=[1, 2, 0],
                                   params={"sign": sign}))
    return charts


def surface_from_csv(path) -> GraphSurface:
    """2D curve from a two-column CSV ``(y1, q)``; gradient from centered differences."""
    data = np.loadtxt(path, delimiter=",", comments="#", ndmin=2)
    if data.shape[1] != 2 or data.shape[0] < 3:
        raise ValueError(f"{path}: expected >= 3 rows of two columns (y1, q)")
    order = np.argsort(data[:, 0])
    y, qv = data[order, 0], data[order, 1]
    if np.any(np.diff(y) <= 0):
        raise ValueError(f"{path}: y1 values must be distinct")
    dq = np.gradient(qv, y)

    def q(yy):
        return np.interp(yy[..., 0], y, qv)

    def grad(yy):
        return np.interp(yy[..., 0], y, dq)[..., None]

    return GraphSurface(2, q, grad, [y[0]], [y[-1]], "custom", params={"path": str(path)})


def builtin_surface(name: str) -> GraphSurface:
    """Resolve ``nonconvex``/``convex``/``flat`` or ``csv:<path>``."""
    if name in ("nonconvex", "quartic-nonconvex"):
        return quartic_nonconvex()
    if name in ("convex", "parabola-convex"):
        return parabola_convex()
    if name in ("flat", "flat-plane"):
        return flat_plane(2)
    if name.startswith("csv:"):
        return surface_from_csv(name[4:])
    raise ValueError(f"unknown curve {name!r}")
