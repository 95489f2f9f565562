"""Raster grids and piecewise-constant test objects.

Phantoms are lists of primitives whose densities add where they overlap.
The named instances live in ``data/phantoms.txt``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from importlib import resources
from typing import List, Sequence

import numpy as np

__all__ = [
    "ImageGrid",
    "Primitive",
    "PhantomSpec",
    "eval_phantom",
    "rasterize",
    "delta_grid",
    "load_catalog",
    "catalog_phantom",
    "parse_catalog",
]

SHAPES = ("rectangle", "disk", "ellipse-annulus", "cross", "ball", "bump")


@dataclass
class ImageGrid:
    """Regular raster.  ``origin`` is the lower corner of voxel ``(0, ..., 0)``.

    Axis ``k`` of ``values`` runs along coordinate ``x_{k+1}``; the flat
    layout is row-major.
    """

    dims: tuple
    origin: np.ndarray
    spacing: np.ndarray
    values: np.ndarray = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.dims = tuple(int(d) for d in self.dims)
        n = len(self.dims)
        self.origin = np.broadcast_to(np.asarray(self.origin, float), (n,)).copy()
        self.spacing = np.broadcast_to(np.asarray(self.spacing, float), (n,)).copy()
        if np.any(self.spacing <= 0):
            raise ValueError("spacing must be positive on every axis")
        if min(self.dims) < 1:
            raise ValueError("dims must be positive")
        if self.values is None:
            self.values = np.zeros(self.dims)
        else:
            v = np.asarray(self.values, dtype=float)
            if v.size != int(np.prod(self.dims)):
                raise ValueError(f"values has {v.size} entries, dims need {np.prod(self.dims)}")
            self.values = v.reshape(self.dims)

    @classmethod
    def from_extent(cls, dims, lower, upper, values=None):
        dims = tuple(np.broadcast_to(np.asarray(dims, int), np.shape(lower)))
        lower = np.asarray(lower, float)
        upper = np.asarray(upper, float)
        return cls(dims, lower, (upper - lower) / np.asarray(dims), values)

    @property
    def ndim(self) -> int:
        return len(self.dims)

    @property
    def size(self) -> int:
        return int(np.prod(self.dims))

    @property
    def voxel_volume(self) -> float:
        return float(np.prod(self.spacing))

    @property
    def upper(self) -> np.ndarray:
        return self.origin + self.spacing * np.asarray(self.dims)

    @property
    def flat(self) -> np.ndarray:
        return self.values.reshape(-1)

    def axes(self) -> List[np.ndarray]:
        """Voxel-center coordinates along each axis."""
        return [o + (np.arange(d) + 0.5) * h
                for o, h, d in zip(self.origin, self.spacing, self.dims)]

    def centers(self) -> np.ndarray:
        """``(size, ndim)`` array of voxel centers in flat order."""
        mesh = np.meshgrid(*self.axes(), indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def with_values(self, values, **meta) -> "ImageGrid":
        out = ImageGrid(self.dims, self.origin, self.spacing, values, dict(self.meta))
        out.meta.update(meta)
        return out

    def voxel_index(self, point) -> tuple:
        """Index of the voxel containing ``point``; faces go to the lower index."""
        point = np.asarray(point, dtype=float)
        rel = (point - self.origin) / self.spacing
        idx = np.ceil(rel).astype(int) - 1
        idx = np.maximum(idx, 0)
        if np.any(rel < 0) or np.any(rel > np.asarray(self.dims)):
            raise ValueError(f"point {point} is outside the grid")
        return tuple(int(i) for i in idx)


@dataclass
class Primitive:
    shape: str
    params: dict
    density: float = 1.0

    def __post_init__(self):
        if self.shape not in SHAPES:
            raise ValueError(f"unknown shape {self.shape!r}")
        if not np.isfinite(self.density):
            raise ValueError("density must be finite")
        self.params = {k: np.asarray(v, dtype=float) for k, v in self.params.items()}

    def _local(self, x):
        c = self.params["center"]
        d = x - c
        angle = float(self.params.get("angle", 0.0))
        if angle and x.shape[-1] == 2:
            ca, sa = np.cos(angle), np.sin(angle)
            d = np.stack([ca * d[..., 0] + sa * d[..., 1],
                          -sa * d[..., 0] + ca * d[..., 1]], axis=-1)
        return d

    def profile(self, x) -> np.ndarray:
        """Unit-density indicator (or smooth profile for ``bump``) at points ``x``."""
        p = self.params
        d = self._local(x)
        if self.shape == "rectangle":
            return np.all(np.abs(d) <= p["half"], axis=-1).astype(float)
        if self.shape in ("disk", "ball"):
            return (np.sum(d**2, axis=-1) <= p["radius"] ** 2).astype(float)
        if self.shape == "ellipse-annulus":
            rho = np.sum((d / p["semi"]) ** 2, axis=-1)
            return ((rho <= 1.0) & (rho >= p["inner"] ** 2)).astype(float)
        if self.shape == "cross":
            arm, half = p["arm"], p["thickness"] / 2
            ax, ay = np.abs(d[..., 0]), np.abs(d[..., 1])
            return (((ax <= arm) & (ay <= half)) | ((ay <= arm) & (ax <= half))).astype(float)
        # bump: (1 - rho^2)^4, C^3 at the rim
        rho2 = np.sum(d**2, axis=-1) / p["radius"] ** 2
        return np.where(rho2 < 1.0, (1.0 - np.minimum(rho2, 1.0)) ** 4, 0.0)

    def bounds(self):
        p = self.params
        c = p["center"]
        if self.shape == "rectangle":
            ext = np.abs(p["half"]) * (np.sqrt(2) if p.get("angle", 0.0) else 1.0)
        elif self.shape in ("disk", "ball", "bump"):
            ext = np.full(c.shape, float(p["radius"]))
        elif self.shape == "ellipse-annulus":
            ext = np.full(c.shape, float(np.max(p["semi"])))
        else:
            ext = np.full(c.shape, float(p["arm"]) * np.sqrt(2))
        return c - ext, c + ext


@dataclass
class PhantomSpec:
    primitives: List[Primitive] = field(default_factory=list)
    name: str = ""

    @property
    def dim(self):
        return self.primitives[0].params["center"].size if self.primitives else None

    def bounds(self):
        if not self.primitives:
            return None
        lo, hi = zip(*(p.bounds() for p in self.primitives))
        return np.min(lo, axis=0), np.max(hi, axis=0)

    def __call__(self, x):
        return eval_phantom(self, x)


def eval_phantom(spec: PhantomSpec, x) -> np.ndarray:
    """Sum of primitive densities at ``x`` (a point or ``(..., n)`` stack)."""
    x = np.asarray(x, dtype=float)
    out = np.zeros(x.shape[:-1])
    for prim in spec.primitives:
        out = out + prim.density * prim.profile(x)
    return out


def rasterize(spec: PhantomSpec, grid: ImageGrid, supersample: int = 1) -> ImageGrid:
    """Sample ``spec`` at voxel centers (or average ``supersample^n`` subsamples)."""
    if spec.primitives and spec.dim != grid.ndim:
        raise ValueError(f"phantom is {spec.dim}-D, grid is {grid.ndim}-D")
    if not spec.primitives:
        return grid.with_values(np.zeros(grid.dims))
    lo, hi = spec.bounds()
    tol = 1e-9 * np.max(np.abs(grid.spacing))
    if np.any(lo < grid.origin - tol) or np.any(hi > grid.upper + tol):
        raise ValueError("grid does not cover the phantom bounding box")
    centers = grid.centers()
    if supersample <= 1:
        vals = eval_phantom(spec, centers)
    else:
        k = int(supersample)
        offs = (np.arange(k) + 0.5) / k - 0.5
        sub = np.stack([m.ravel() for m in np.meshgrid(*([offs] * grid.ndim), indexing="ij")],
                       axis=-1) * grid.spacing
        vals = np.zeros(len(centers))
        for o in sub:
            vals += eval_phantom(spec, centers + o)
        vals /= len(sub)
    return grid.with_values(vals.reshape(grid.dims))


def delta_grid(point, grid: ImageGrid) -> ImageGrid:
    """Discrete delta: ``1 / voxel_volume`` at the voxel containing ``point``."""
    idx = grid.voxel_index(point)
    vals = np.zeros(grid.dims)
    vals[idx] = 1.0 / grid.voxel_volume
    return grid.with_values(vals)


def _parse_value(text: str):
    parts = [t for t in text.replace(" ", "").split(",") if t]
    vals = [float(t) for t in parts]
    return vals[0] if len(vals) == 1 else vals


def parse_catalog(text: str) -> dict:
    """Parse ``key=value`` blocks (blank-line separated) into named phantoms.

    Each block needs ``phantom`` and ``shape``; ``density`` defaults to 1;
    every other key is a geometric parameter (comma-separated vectors).
    """
    catalog = {}
    block = {}
    version = None

    def flush():
        if not block:
            return
        b = dict(block)
        block.clear()
        try:
            name = b.pop("phantom")
            shape = b.pop("shape")
        except KeyError as exc:
            raise ValueError(f"catalog block missing {exc}") from None
        density = float(b.pop("density", 1.0))
        params = {k: _parse_value(v) for k, v in b.items()}
        catalog.setdefault(name, PhantomSpec(name=name)).primitives.append(
            Primitive(shape, params, density))

    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if raw.strip().startswith("#") and "version=" in raw:
            version = raw.split("version=", 1)[1].strip()
        if not line:
            flush()
            continue
        if "=" not in line:
            raise ValueError(f"bad catalog line: {raw!r}")
        key, val = (t.strip() for t in line.split("=", 1))
        block[key] = val
    flush()
    for spec in catalog.values():
        spec.version = version
    catalog.setdefault("empty", PhantomSpec(name="empty"))
    return catalog


def load_catalog(path=None) -> dict:
    if path is None:
        text = resources.files("quadradon").joinpath("data/phantoms.txt").read_text()
    else:
        with open(path) as fh:
            text = fh.read()
    return parse_catalog(text)


def catalog_phantom(name: str) -> PhantomSpec:
    catalog = load_catalog()
    if name not in catalog:
        raise KeyError(f"unknown phantom {name!r}; known: {sorted(catalog)}")
    return catalog[name]


def superpose(specs: Sequence[PhantomSpec], weights: Sequence[float]) -> PhantomSpec:
    """Linear combination of phantoms (densities scaled, primitives concatenated)."""
    prims = []
    for spec, w in zip(specs, weights):
        for p in spec.primitives:
            prims.append(Primitive(p.shape, {k: v for k, v in p.params.items()},
                                   p.density * w))
    return PhantomSpec(prims, name="+".join(s.name for s in specs))
