"""Spheroid transform on the unit cylinder and its Fourier/Volterra inversion.

Spheroids have foci on the cylinder wall at ``c' = (cos phi0, sin phi0)`` in
the ``(x1, x3)`` plane, axis of revolution parallel to ``x2``, aspect ratio
``s`` and equatorial radius ``p``.  Functions are given in cylindrical
coordinates ``f(r, phi, x2)`` with ``x1 = r cos phi``, ``x3 = r sin phi``.

Data ``g(p, phi0, y0)`` are inverted by a DFT in ``y0`` and a Fourier series
in ``phi0``; each harmonic satisfies a Volterra equation of the first kind in
``u = 1 - r``,

    g_n(p, eta) = (4/s) int_eps^p K_n(eta; p, u) f_n(1 - u, eta) du,

which is differentiated in ``p`` to a second-kind equation and solved by
forward substitution.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.interpolate import RegularGridInterpolator, make_interp_spline
from scipy.linalg import solve_triangular

from . import kernels
from .phantoms import ImageGrid, PhantomSpec

__all__ = [
    "SpheroidScanConfig",
    "CylScanData",
    "FourierStack",
    "CylFunction",
    "VolterraKernelEval",
    "cyl_function",
    "forward_spheroid",
    "forward_scan_cyl",
    "fourier_decompose",
    "fourier_synthesize",
    "kernel_Kn",
    "kernel_stack",
    "kernel_diagonal",
    "product_matrices",
    "solve_volterra",
    "invert_scan",
]

DEFAULT_EPS = 0.05
# relative Tikhonov level for invert_scan: harmonics whose Volterra
# resolvent exceeds ~1/DEFAULT_DAMPING are filtered instead of amplified
DEFAULT_DAMPING = 1e-6


# ---------------------------------------------------------------------------
# configuration and containers
# ---------------------------------------------------------------------------

def _uniform(x, name, periodic=None):
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or x.size < 2:
        raise ValueError(f"{name} grid needs at least two points")
    d = np.diff(x)
    if np.any(d <= 0) or np.max(np.abs(d - d.mean())) > 1e-9 * max(abs(d.mean()), 1e-300):
        raise ValueError(f"{name} grid must be uniform and increasing")
    if periodic is not None and abs(x[0] + x.size * d.mean() - x[0] - periodic) > 1e-9:
        raise ValueError(f"{name} grid must cover [0, {periodic:g}) uniformly")
    return float(d.mean())


@dataclass
class SpheroidScanConfig:
    """Scan geometry ``(p, phi0, y0)`` with quadrature settings.

    ``n_alpha`` Gauss nodes in the meridian angle, ``n_theta`` nodes in the
    revolution angle (Gauss on the support slice when known, otherwise a
    periodic trapezoid rule).
    """

    aspect: float
    p: np.ndarray
    phi0: np.ndarray
    y0: np.ndarray
    eps: float = DEFAULT_EPS
    eps1: float = DEFAULT_EPS
    n_alpha: int = 32
    n_theta: int = 32

    def __post_init__(self):
        if not 0 < self.aspect <= 1:
            raise ValueError("aspect s must lie in (0, 1]")
        self.p = np.atleast_1d(np.asarray(self.p, dtype=float))
        self.phi0 = np.atleast_1d(np.asarray(self.phi0, dtype=float))
        self.y0 = np.atleast_1d(np.asarray(self.y0, dtype=float))
        if np.any(self.p <= 0) or np.any(np.diff(self.p) <= 0):
            raise ValueError("p values must be positive and increasing")

    @classmethod
    def regular(cls, aspect, n_p=200, n_phi=64, n_y=64, y_window=(-2.0, 2.0),
                eps=DEFAULT_EPS, eps1=DEFAULT_EPS, **kw):
        """``p`` uniform on ``[eps, 1-eps1]``, ``phi0`` on ``[0, 2pi)``, ``y0`` on ``[lo, hi)``."""
        p = np.linspace(eps, 1 - eps1, n_p)
        phi = 2 * np.pi * np.arange(n_phi) / n_phi
        lo, hi = y_window
        y = lo + (hi - lo) * np.arange(n_y) / n_y
        return cls(aspect, p, phi, y, eps, eps1, **kw)

    @property
    def shape(self):
        return (self.p.size, self.phi0.size, self.y0.size)


@dataclass
class CylScanData:
    values: np.ndarray
    config: SpheroidScanConfig
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.config.shape:
            raise ValueError(f"data shape {self.values.shape} != config {self.config.shape}")


@dataclass
class FourierStack:
    """Complex coefficients indexed ``(n, eta, radial)``; ``n`` runs over ``orders``."""

    values: np.ndarray
    orders: np.ndarray
    eta: np.ndarray
    radial: np.ndarray
    axis: str = "p"  # "p", "u" or "r"

    def order(self, n: int) -> np.ndarray:
        return self.values[int(np.flatnonzero(self.orders == n)[0])]


# ---------------------------------------------------------------------------
# forward transform
# ---------------------------------------------------------------------------

@dataclass
class CylFunction:
    """Evaluator ``f(r, phi, x2)``; optional support ball ``(center_xyz, radius)``
    and a Cartesian shortcut ``cartesian(x)`` on ``(..., 3)`` points."""

    fn: Callable
    support: Optional[tuple] = None
    cartesian: Optional[Callable] = None

    def __call__(self, r, phi, x2):
        return self.fn(r, phi, x2)

    def at_xyz(self, x):
        if self.cartesian is not None:
            return self.cartesian(x)
        r = np.hypot(x[..., 0], x[..., 2])
        return self.fn(r, np.arctan2(x[..., 2], x[..., 0]), x[..., 1])


def cyl_function(f) -> CylFunction:
    """Wrap a 3D phantom or a cylindrical callable as a :class:`CylFunction`."""
    if isinstance(f, CylFunction):
        return f
    if isinstance(f, PhantomSpec):
        if f.primitives and f.dim != 3:
            raise ValueError("cylindrical transforms need a 3D phantom")
        support = None
        round_ = [q for q in f.primitives if q.shape in ("ball", "bump")]
        if len(f.primitives) == 1 and round_:
            support = (round_[0].params["center"].copy(), float(round_[0].params["radius"]))
        elif f.primitives:
            lo, hi = f.bounds()
            support = (0.5 * (lo + hi), 0.5 * float(np.linalg.norm(hi - lo)))

        def polar(r, phi, x2, spec=f):
            x = np.stack(np.broadcast_arrays(r * np.cos(phi), x2, r * np.sin(phi)), axis=-1)
            return spec(x)

        return CylFunction(polar, support, f)
    return CylFunction(f)


def _sheet_points(p, s, c1, c3, y0, alpha, theta):
    """Cartesian points of the spheroid parameterized by meridian/revolution angles."""
    xh1 = p * np.cos(alpha)
    x2 = y0 + (p / s) * np.sin(alpha)
    ct, st = np.cos(theta), np.sin(theta)
    # c' - xh1 * R(theta) c'
    x1 = c1 - xh1 * (ct * c1 - st * c3)
    x3 = c3 - xh1 * (st * c1 + ct * c3)
    return x1, x2, x3


def _meridian_weight(p, s, alpha):
    # dx2 * sqrt(p^2 - s^2 x2^2 + s^4 x2^2) with x2 = (p/s) sin(alpha)
    return (p / s) * np.cos(alpha) * p * np.sqrt(np.cos(alpha) ** 2 + (s * np.sin(alpha)) ** 2)


def forward_spheroid(f, s: float, p: float, phi0: float, y0, n_alpha: int = 32,
                     n_theta: int = 32) -> np.ndarray:
    """Surface integral of ``f`` over one spheroid (vectorized over ``y0``).

    Substituting ``x2 = (p/s) sin(alpha)`` removes the endpoint square-root
    behaviour; ``alpha`` uses Gauss-Legendre, ``theta`` a periodic rule (or
    Gauss on the slice of the support ball when ``f`` declares one).
    """
    if p <= 0:
        raise ValueError("p must be positive")
    if not 0 < s <= 1:
        raise ValueError("aspect s must lie in (0, 1]")
    fc = cyl_function(f)
    y0 = np.atleast_1d(np.asarray(y0, dtype=float))
    c1, c3 = math.cos(phi0), math.sin(phi0)
    xa, wa = np.polynomial.legendre.leggauss(n_alpha)
    if fc.support is None:
        alpha = 0.5 * np.pi * xa
        w_alpha = 0.5 * np.pi * wa * _meridian_weight(p, s, alpha)
        theta = -np.pi + 2 * np.pi * (np.arange(n_theta) + 0.5) / n_theta
        x1, x2, x3 = _sheet_points(p, s, c1, c3, y0[:, None, None], alpha[None, :, None],
                                   theta[None, None, :])
        vals = fc.at_xyz(np.stack(np.broadcast_arrays(x1, x2, x3), axis=-1))
        return (vals.sum(axis=2) * (2 * np.pi / n_theta)) @ w_alpha
    return _forward_supported(fc, s, p, c1, c3, y0, xa, wa,
                              *np.polynomial.legendre.leggauss(n_theta))


def _forward_supported(fc, s, p, c1, c3, y0, xa, wa, xt, wt):
    center, R = fc.support
    bh1, bz, bh3 = float(center[0]), float(center[1]), float(center[2])
    out = np.zeros(y0.size)
    # meridian range whose x2 meets the support ball
    lo = np.clip((bz - R - y0) * s / p, -1.0, 1.0)
    hi = np.clip((bz + R - y0) * s / p, -1.0, 1.0)
    live = hi > lo
    if not np.any(live):
        return out
    a_lo, a_hi = np.arcsin(lo[live]), np.arcsin(hi[live])
    half = 0.5 * (a_hi - a_lo)
    alpha = 0.5 * (a_lo + a_hi)[:, None] + half[:, None] * xa[None, :]  # (Y, A)
    w_alpha = half[:, None] * wa[None, :] * _meridian_weight(p, s, alpha)
    x2 = y0[live][:, None] + (p / s) * np.sin(alpha)
    xh1 = p * np.cos(alpha)
    # horizontal slice of the ball at height x2, and the revolution angles inside it
    rh = np.sqrt(np.maximum(R * R - (x2 - bz) ** 2, 0.0))
    d1, d3 = bh1 - c1, bh3 - c3
    d = math.hypot(d1, d3)
    beta = math.atan2(d3, d1)
    base = math.atan2(-c3, -c1)  # direction of -c' (theta = 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        cosg = (xh1**2 + d * d - rh**2) / (2 * xh1 * d)
    gamma = np.where(cosg <= -1, np.pi, np.arccos(np.clip(cosg, -1.0, 1.0)))
    gamma = np.where((cosg >= 1) | (rh <= 0) | (xh1 <= 0), 0.0, gamma)
    theta_c = beta - base
    theta = theta_c + gamma[..., None] * xt  # (Y, A, T)
    x1, x2b, x3 = _sheet_points(p, s, c1, c3, y0[live][:, None, None], alpha[..., None], theta)
    vals = fc.at_xyz(np.stack(np.broadcast_arrays(x1, x2b, x3), axis=-1))
    inner = (vals @ wt) * gamma
    out[live] = np.sum(inner * w_alpha, axis=1)
    return out


def forward_scan_cyl(f, config: SpheroidScanConfig) -> CylScanData:
    """Tensor of :func:`forward_spheroid` values over ``(p, phi0, y0)``."""
    fc = cyl_function(f)
    s = config.aspect
    prov = {"aspect": s, "eps": config.eps, "eps1": config.eps1,
            "n_alpha": config.n_alpha, "n_theta": config.n_theta}
    out = np.zeros(config.shape)
    if isinstance(f, PhantomSpec) and not f.primitives:
        return CylScanData(out, config, prov)
    if fc.support is not None:
        center, R = fc.support
        rmax = math.hypot(center[0], center[2]) + R
        if rmax >= 1 - config.eps:
            prov["support_warning"] = (f"support reaches r={rmax:.4g}, outside C_eps "
                                       f"(eps={config.eps:g})")
    for i, p in enumerate(config.p):
        for k, phi in enumerate(config.phi0):
            if fc.support is not None:
                # quick reject: the spheroid's metric distance to the ball center
                center, R = fc.support
                dh = math.hypot(center[0] - math.cos(phi), center[2] - math.sin(phi))
                dz = np.abs(center[1] - config.y0)
                dist = np.sqrt(dh * dh + (s * dz) ** 2)
                if np.all(np.abs(dist - p) > R):
                    continue
            out[i, k] = forward_spheroid(fc, s, p, phi, config.y0, config.n_alpha,
                                         config.n_theta)
    return CylScanData(out, config, prov)


# ---------------------------------------------------------------------------
# Fourier decomposition
# ---------------------------------------------------------------------------

def _eta_grid(y0):
    dy = _uniform(y0, "y0")
    return 2 * np.pi * np.fft.fftfreq(y0.size, d=dy)


def fourier_decompose(data: CylScanData, n_max: Optional[int] = None) -> FourierStack:
    """DFT along ``y0`` (no prefactor) and Fourier series along ``phi0``
    (``(1/N) sum``), returned for ``n = -n_max..n_max`` with radial axis ``p``."""
    cfg = data.config
    _uniform(cfg.phi0, "phi0", periodic=2 * np.pi)
    eta = _eta_grid(cfg.y0)
    nphi = cfg.phi0.size
    if n_max is None:
        n_max = (nphi - 1) // 2
    if 2 * n_max + 1 > nphi:
        raise ValueError(f"n_max={n_max} needs at least {2 * n_max + 1} phi0 samples")
    spec = np.fft.fft(data.values, axis=2)  # (p, phi, eta)
    # phase for phi0 grids that do not start at 0
    coef = np.fft.fft(spec, axis=1) / nphi
    orders = np.arange(-n_max, n_max + 1)
    phase = np.exp(-1j * orders * cfg.phi0[0])
    vals = coef[:, orders % nphi, :] * phase[None, :, None]
    return FourierStack(np.transpose(vals, (1, 2, 0)), orders, eta, cfg.p.copy(), "p")


def fourier_synthesize(stack: FourierStack, phi: np.ndarray) -> np.ndarray:
    """Inverse of :func:`fourier_decompose`: real array ``(radial, phi, y)``."""
    phi = np.asarray(phi, dtype=float)
    series = np.einsum("ner,nk->rke", stack.values,
                       np.exp(1j * np.outer(stack.orders, phi)))
    return np.real(np.fft.ifft(series, axis=2))


# ---------------------------------------------------------------------------
# Volterra kernel
# ---------------------------------------------------------------------------

def kernel_diagonal(p) -> np.ndarray:
    """``K_n(eta; p, p) = pi p sqrt(1-p) / 2`` (independent of ``n``, ``eta``, ``s``)."""
    p = np.asarray(p, dtype=float)
    return np.pi * p * np.sqrt(1 - p) / 2


def _kernel_points(n, eta, p, u, aspect, order):
    z = np.cos((2 * np.arange(1, order + 1) - 1) * np.pi / (2 * order))
    v = 0.5 * (1 + z)
    x = u + v * (p - u)
    s2 = aspect * aspect
    G = x * np.sqrt((1 - s2) * x * x + s2 * p * p) / np.sqrt(
        (p + x) * (x + u) * (1 + (u * u - x * x) / (4 * (1 - u))))
    C = np.cos(eta / aspect * np.sqrt(np.maximum(p * p - x * x, 0.0)))
    c = 1 + (u * u - x * x) / (2 * (1 - u))
    T = np.cos(abs(n) * np.arccos(np.clip(c, -1.0, 1.0)))
    return math.sqrt(1 - u) * np.pi / order * np.sum(G * C * T)


def kernel_Kn(n: int, eta: float, p: float, u: float, aspect: float = 1.0,
              order: Optional[int] = None, tol: float = 1e-9) -> float:
    """``K_n(eta; p, u)`` by Gauss-Chebyshev quadrature of the regularized ``v`` integral.

    With ``order=None`` the rule starts at 64 nodes and doubles until two
    successive values agree to ``tol`` (relative).
    """
    if not 0 < u <= p < 1:
        raise ValueError("kernel needs 0 < u <= p < 1")
    if not 0 < aspect <= 1:
        raise ValueError("aspect s must lie in (0, 1]")
    if order is not None:
        return _kernel_points(n, eta, p, u, aspect, order)
    order = 64
    prev = _kernel_points(n, eta, p, u, aspect, order)
    while order < 1 << 16:
        order *= 2
        cur = _kernel_points(n, eta, p, u, aspect, order)
        if abs(cur - prev) <= tol * max(abs(cur), 1e-300):
            return cur
        prev = cur
    return prev


def kernel_stack(p, aspect, eta, n_max, order=None, tol=1e-9):
    """Lower-triangular ``K_n(eta; p_i, p_j)`` and ``dK_n/dp`` for ``n = 0..n_max``.

    Returns ``(K, Kp, order)``; with ``order=None`` the Gauss-Chebyshev rule
    doubles from 64 until the stack changes by less than ``tol`` (relative
    to its maximum).
    """
    p = np.asarray(p, dtype=float)
    if order is not None:
        K, Kp = kernels.volterra_kernel_stack(p, float(aspect), float(abs(eta)), int(n_max),
                                              int(order))
        return K, Kp, order
    order = 64
    K, Kp = kernels.volterra_kernel_stack(p, float(aspect), float(abs(eta)), int(n_max), order)
    while order < 4096:
        K2, Kp2 = kernels.volterra_kernel_stack(p, float(aspect), float(abs(eta)),
                                                int(n_max), 2 * order)
        order *= 2
        done = (np.max(np.abs(K2 - K)) <= tol * np.max(np.abs(K2))
                and np.max(np.abs(Kp2 - Kp)) <= tol * max(np.max(np.abs(Kp2)), 1.0))
        K, Kp = K2, Kp2
        if done:
            break
    return K, Kp, order


@dataclass(frozen=True)
class VolterraKernelEval:
    """Immutable kernel evaluator for fixed ``(n, eta, s)``."""

    n: int
    eta: float
    aspect: float = 1.0
    order: Optional[int] = None

    def __call__(self, p, u):
        return kernel_Kn(self.n, self.eta, p, u, self.aspect, self.order)

    def matrices(self, p_grid):
        """``(K, dK/dp)`` on the lower triangle of ``p_grid``."""
        K, Kp, _ = kernel_stack(p_grid, self.aspect, self.eta, abs(self.n), self.order)
        return K[abs(self.n)], Kp[abs(self.n)]


# ---------------------------------------------------------------------------
# Volterra solve
# ---------------------------------------------------------------------------

def _second_kind_matrix(K, Kp, h):
    """Trapezoid product-integration of ``K(p,p) phi(p) + int Kp(p,u) phi(u) du``."""
    w = np.full(K.shape[0], h)
    w[0] = 0.5 * h
    M = np.tril(Kp * w[None, :], -1)
    M[np.diag_indices_from(M)] = np.diag(K) + 0.5 * h * np.diag(Kp)
    M[0, 0] = K[0, 0]  # the integral over [eps, eps] is empty
    return M


def _lagrange_table(nodes, t):
    """Values of the Lagrange basis on ``nodes`` at points ``t``: shape ``(t, nodes)``."""
    L = np.ones((t.size, nodes.size))
    for a in range(nodes.size):
        for b in range(nodes.size):
            if a != b:
                L[:, a] *= (t - nodes[b]) / (nodes[a] - nodes[b])
    return L


def _pair_order(aspect, eta, p_max):
    # the cosine factor oscillates ~ (|eta|/s) p / pi times over the v range
    need = 64 + 4 * abs(eta) / aspect * p_max
    return int(2 ** math.ceil(math.log2(max(need, 128))))


def product_matrices(p_grid, aspect, eta, n_max, order=None, degree=3, n_gauss=6):
    """Second-kind matrices for ``n = 0..n_max`` by high-order product integration.

    Row ``i`` discretizes ``K(p_i,p_i) phi_i + int_{p_0}^{p_i} Kp(p_i,u) phi(u) du``
    with ``phi`` replaced, cell by cell, by the degree-``degree`` Lagrange
    interpolant through grid nodes ``<= i`` and ``Kp`` sampled at
    ``n_gauss`` Gauss points per cell.  This resolves the near-diagonal
    boundary layer of ``Kp`` (width ~ ``s^2 / (eta^2 p)``) that the trapezoid
    rule cannot, and is what keeps high-``eta`` harmonics usable.
    ``order`` (Gauss-Chebyshev nodes for the kernel) defaults to 128, raised
    with ``|eta|/s``.  Returns an array ``(n_max + 1, P, P)``, lower triangular.
    """
    p = np.asarray(p_grid, dtype=float)
    if order is None:
        order = _pair_order(aspect, eta, float(p[-1]))
    h = _uniform(p, "p")
    npts = p.size
    M = np.zeros((n_max + 1, npts, npts))
    M[:, np.arange(npts), np.arange(npts)] = kernel_diagonal(p)[None, :]
    if npts < 2:
        return M
    xg, wg = np.polynomial.legendre.leggauss(n_gauss)
    t, w = 0.5 * (xg + 1), 0.5 * wg
    ii, jj = np.tril_indices(npts, -1)  # cell [p_j, p_j + h] in row i
    P = np.repeat(p[ii], n_gauss)
    U = (p[jj][:, None] + h * t[None, :]).ravel()
    _, kp = kernels.volterra_kernel_pairs(P, U, float(aspect), float(abs(eta)), int(n_max),
                                          int(order))
    kp = kp.reshape(n_max + 1, ii.size, n_gauss) * (h * w)
    d = np.minimum(degree, ii)
    start = np.clip(jj - (d - 1) // 2, 0, ii - d)
    off = jj - start
    for dd in np.unique(d):
        for oo in np.unique(off[d == dd]):
            sel = np.flatnonzero((d == dd) & (off == oo))
            L = _lagrange_table(np.arange(dd + 1, dtype=float) - oo, t)
            contrib = kp[:, sel, :] @ L  # (n, cells, dd + 1)
            for k in range(dd + 1):
                M[:, ii[sel], start[sel] + k] += contrib[:, :, k]
    return M


def _spline_derivative(g, p):
    k = min(5, p.size - 1)
    if np.iscomplexobj(g):
        return (make_interp_spline(p, g.real, k=k, axis=0).derivative()(p)
                + 1j * make_interp_spline(p, g.imag, k=k, axis=0).derivative()(p))
    return make_interp_spline(p, g, k=k, axis=0).derivative()(p)


def solve_volterra(g, p_grid, aspect, K=None, Kp=None, n=0, eta=0.0, order=None,
                   method="substitution", tol=1e-14, max_iter=None, damping=0.0,
                   scheme="trapezoid", matrix=None):
    """Solve ``g(p) = (4/s) int_eps^p K(p,u) phi(u) du`` on a uniform ``p`` grid.

    The equation is differentiated in ``p``: ``(s/4) g'(p) = K(p,p) phi(p) +
    int Kp(p,u) phi(u) du``.  Two discretizations:

    ``scheme="trapezoid"``
        ``g'`` by centered differences (one-sided at the ends) and the
        trapezoid rule on the lower triangle of ``(K, Kp)``.  Second order;
        adequate for low ``|eta|/s`` and ``|n|``.
    ``scheme="product"``
        ``g'`` from a quintic interpolating spline and the cubic product
        integration of :func:`product_matrices` (``matrix`` may pass that
        matrix in).  Fourth order, and stable much further out in ``eta``.

    ``method`` is ``"substitution"`` (triangular solve) or ``"neumann"``
    (fixed-point sweep on the strictly lower part).  ``g`` may be
    ``(P,)`` or ``(P, m)`` for several right-hand sides.

    ``damping > 0`` replaces the exact solve by a Tikhonov-filtered one,
    ``sum sigma/(sigma^2 + (damping*sigma_max)^2)`` over the singular
    triplets of the triangular system; use it for high ``|n|``/``|eta|``
    harmonics where inward marching amplifies discretization error.
    Returns ``phi`` on the same grid, read as ``u = p``.
    """
    p_grid = np.asarray(p_grid, dtype=float)
    h = _uniform(p_grid, "p")
    if np.min(np.abs(kernel_diagonal(p_grid))) < 1e-8:
        raise ValueError("kernel degenerate (p near 0 or 1)")
    g = np.asarray(g)
    if scheme == "trapezoid":
        if K is None or Kp is None:
            K, Kp = VolterraKernelEval(n, eta, aspect, order).matrices(p_grid)
        if np.min(np.abs(np.diag(K))) < 1e-8:
            raise ValueError("kernel degenerate (p near 0 or 1)")
        rhs = (aspect / 4.0) * np.gradient(g, h, axis=0, edge_order=2)
        M = _second_kind_matrix(K, Kp, h)
    elif scheme == "product":
        if matrix is None:
            matrix = product_matrices(p_grid, aspect, eta, abs(n), order)[abs(n)]
        M = matrix
        rhs = (aspect / 4.0) * _spline_derivative(g, p_grid)
    else:
        raise ValueError(f"unknown scheme {scheme!r}")
    if damping > 0:
        U, S, Vt = np.linalg.svd(M)
        filt = S / (S**2 + (damping * S[0]) ** 2)
        coef = U.T @ rhs
        coef = coef * (filt if coef.ndim == 1 else filt[:, None])
        return Vt.T @ coef
    if method == "substitution":
        if np.iscomplexobj(rhs):
            return (solve_triangular(M, rhs.real, lower=True)
                    + 1j * solve_triangular(M, rhs.imag, lower=True))
        return solve_triangular(M, rhs, lower=True)
    if method != "neumann":
        raise ValueError(f"unknown method {method!r}")
    D = np.diag(M)
    L = np.tril(M, -1)
    scale = D if rhs.ndim == 1 else D[:, None]
    phi = rhs / scale
    for _ in range(max_iter or p_grid.size + 1):
        nxt = (rhs - L @ phi) / scale
        delta = np.max(np.abs(nxt - phi))
        phi = nxt
        if delta <= tol * max(np.max(np.abs(phi)), 1e-300):
            break
    return phi


# ---------------------------------------------------------------------------
# full inversion
# ---------------------------------------------------------------------------

def invert_scan(data: CylScanData, n_max: int = 16, grid: Optional[ImageGrid] = None,
                order: Optional[int] = None, damping: float = DEFAULT_DAMPING,
                scheme: str = "product", return_stack: bool = False):
    """Reconstruct ``f`` from spheroid data.

    Steps: Fourier decomposition, one Volterra solve per ``(n, eta)``
    (``scheme`` as in :func:`solve_volterra`; the product scheme is the
    default because the trapezoid one loses high ``|eta|`` harmonics;
    ``damping`` as there, on by default because the resolvent grows roughly
    like ``exp(c (eta/s)^2)`` and ``exp(c n^2)``),
    ``r = 1 - u``, inverse series/DFT, trilinear resampling to ``grid``
    (default 32^3 over ``[-1,1] x y0-window x [-1,1]``).  Radii below the
    innermost ring take its value; radii outside the data ring are zero.
    """
    cfg = data.config
    s = cfg.aspect
    p = cfg.p
    _uniform(p, "p")
    stack = fourier_decompose(data, n_max)
    orders, eta = stack.orders, stack.eta
    out = np.zeros_like(stack.values)
    abs_eta = np.abs(eta)
    for e in np.unique(np.round(abs_eta, 12)):
        cols = np.flatnonzero(np.isclose(abs_eta, e, rtol=0, atol=1e-9))
        if scheme == "product":
            mats = product_matrices(p, s, e, n_max, order)
        else:
            K, Kp, _ = kernel_stack(p, s, e, n_max, order)
        for m in range(n_max + 1):
            rows = np.flatnonzero(np.abs(orders) == m)
            # right-hand sides: every (n, eta) sharing |n| = m and |eta| = e
            g = stack.values[np.ix_(rows, cols)].reshape(-1, p.size).T
            if scheme == "product":
                phi = solve_volterra(g, p, s, damping=damping, scheme="product", matrix=mats[m])
            else:
                phi = solve_volterra(g, p, s, K[m], Kp[m], damping=damping)
            out[np.ix_(rows, cols)] = phi.T.reshape(rows.size, cols.size, p.size)
    # u = p grid -> r = 1 - u, ascending
    r = (1.0 - p)[::-1]
    fstack = FourierStack(out[:, :, ::-1], orders, eta, r, "r")
    cyl = fourier_synthesize(fstack, cfg.phi0)  # (r, phi, x2)
    if grid is None:
        dy = cfg.y0[1] - cfg.y0[0]
        grid = ImageGrid.from_extent((32, 32, 32), [-1.0, cfg.y0[0] - dy / 2, -1.0],
                                     [1.0, cfg.y0[-1] + dy / 2, 1.0])
    vals = resample_cylindrical(cyl, r, cfg.phi0, cfg.y0, grid)
    img = grid.with_values(vals, method="volterra", n_max=n_max, aspect=s, damping=damping,
                           scheme=scheme,
                           eps=cfg.eps, eps1=cfg.eps1)
    if return_stack:
        return img, fstack
    return img


def resample_cylindrical(values, r, phi, x2, grid: ImageGrid) -> np.ndarray:
    """Trilinear interpolation of ``values[r, phi, x2]`` at the voxel centers of ``grid``."""
    phi = np.asarray(phi, dtype=float)
    dphi = _uniform(phi, "phi")
    # periodic closure in phi
    phi_ext = np.concatenate([phi, [phi[-1] + dphi]])
    vals = np.concatenate([values, values[:, :1, :]], axis=1)
    interp = RegularGridInterpolator((r, phi_ext, x2), vals, method="linear",
                                     bounds_error=False, fill_value=0.0)
    x = grid.centers()
    rr = np.hypot(x[:, 0], x[:, 2])
    pp = np.mod(np.arctan2(x[:, 2], x[:, 0]) - phi[0], 2 * np.pi) + phi[0]
    inside = rr <= r[-1]
    rr = np.clip(rr, r[0], r[-1])
    res = np.where(inside, interp(np.stack([rr, pp, x[:, 1]], axis=-1)), 0.0)
    return res.reshape(grid.dims)
