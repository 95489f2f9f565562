import math

import numpy as np
import pytest
from scipy import integrate

from quadradon import forward as fwd
from quadradon.geometry import Box, Quadric
from quadradon.phantoms import ImageGrid, PhantomSpec, Primitive, rasterize


def ones(x):
    return np.ones(np.shape(x)[:-1])


def _ellipsoid_area_oracle(A, t):
    """Surface area by dblquad over the angular parameterization with a
    numerically formed cross product (independent of the library's Jacobian)."""
    lam, V = np.linalg.eigh(A)
    a = np.sqrt(t / lam)

    def x(th, ph):
        return V @ (a * np.array([np.sin(th) * np.cos(ph), np.sin(th) * np.sin(ph), np.cos(th)]))

    def dA(ph, th):
        e = 1e-6
        xt = (x(th + e, ph) - x(th - e, ph)) / (2 * e)
        xp = (x(th, ph + e) - x(th, ph - e)) / (2 * e)
        return np.linalg.norm(np.cross(xt, xp))

    val, _ = integrate.dblquad(dA, 0, math.pi, 0, 2 * math.pi, epsabs=1e-8, epsrel=1e-7)
    return val


def test_sphere_and_circle_measure():
    for p in (0.5, 1.0, 3.0):
        val = fwd.integrate_over_quadric(ones, Quadric([0.1, 0.2, -0.3], np.eye(3), p * p))
        assert val == pytest.approx(4 * math.pi * p * p, rel=1e-3)
        val = fwd.integrate_over_quadric(ones, Quadric([1.0, -2.0], np.eye(2), p * p))
        assert val == pytest.approx(2 * math.pi * p, rel=1e-4)


def test_hemisphere_against_monte_carlo():
    s = np.array([0.3, -0.1, 0.2])
    p = 1.3

    def half(x):
        return (x[..., 0] > s[0]).astype(float)

    val = fwd.integrate_over_quadric(half, Quadric(s, np.eye(3), p * p))
    assert val == pytest.approx(2 * math.pi * p * p, rel=1e-3)
    # Monte Carlo on uniform surface samples
    g = np.random.default_rng(7).standard_normal((10**6, 3))
    u = g / np.linalg.norm(g, axis=1, keepdims=True)
    mc = 4 * math.pi * p * p * np.mean(half(s + p * u))
    assert val == pytest.approx(mc, rel=5e-3)


def test_random_ellipsoid_areas():
    rng = np.random.default_rng(3)
    for _ in range(20):
        Q, _ = np.linalg.qr(rng.standard_normal((3, 3)))
        A = Q @ np.diag(rng.uniform(0.3, 3.0, 3)) @ Q.T
        A = 0.5 * (A + A.T)
        t = rng.uniform(0.5, 2.0)
        q = Quadric(rng.uniform(-1, 1, 3), A, t)
        val = fwd.integrate_over_quadric(ones, q)
        ref = _ellipsoid_area_oracle(A, t)
        assert val == pytest.approx(ref, rel=1e-3)


def test_prolate_closed_form():
    a, c = 1.0, 2.0  # semi-axes: a (twice), c along the axis
    e = math.sqrt(1 - a * a / (c * c))
    area = 2 * math.pi * a * a * (1 + c / (a * e) * math.asin(e))
    val = fwd.integrate_over_quadric(ones, Quadric([0, 0, 0], np.diag([1 / a**2, 1 / c**2, 1 / a**2]),
                                                   1.0))
    assert val == pytest.approx(area, rel=1e-3)


def test_translation_equivariance():
    def f(x):
        return np.exp(-np.sum((x - 0.2) ** 2, axis=-1))

    shift = np.array([3.0, -1.0, 2.0])
    A = np.diag([1.0, 2.0, 0.5])
    v1 = fwd.integrate_over_quadric(f, Quadric([0.1, 0.0, 0.0], A, 1.2))
    v2 = fwd.integrate_over_quadric(lambda x: f(x - shift),
                                    Quadric(np.array([0.1, 0.0, 0.0]) + shift, A, 1.2))
    assert v2 == pytest.approx(v1, rel=1e-10)


def test_hyperboloid_clipped():
    # two-sheeted x^2 - y^2 = 1 clipped to |y| <= 1: arc length of both branches
    box = Box([-5, -1], [5, 1])
    val = fwd.integrate_over_quadric(lambda x: np.ones(x.shape[:-1]),
                                     Quadric([0, 0], np.diag([1.0, -1.0]), 1.0), box)
    ref, _ = integrate.quad(lambda y: math.sqrt(1 + y * y / (1 + y * y)), -1, 1)
    assert val == pytest.approx(2 * ref, rel=1e-4)
    with pytest.raises(ValueError):
        fwd.integrate_over_quadric(ones, Quadric([0, 0], np.diag([1.0, -1.0]), 1.0))
    with pytest.raises(ValueError):
        fwd.integrate_over_quadric(ones, Quadric([0, 0], -np.eye(2), 1.0))


def test_points_on_surface_satisfy_defining_function():
    """Every sample point used by the quadrature lies on the quadric."""
    q = Quadric([0.5, -0.2, 0.1], np.array([[2.0, 0.3, 0], [0.3, 1.0, 0.1], [0, 0.1, 0.7]]), 1.7)
    seen = []

    def f(x):
        seen.append(np.array(x).reshape(-1, 3))
        return np.ones(np.shape(x)[:-1])

    fwd.integrate_over_quadric(f, q)
    pts = np.concatenate(seen)
    xt = pts - q.center
    psi = q.level - np.einsum("ni,ij,nj->n", xt, q.matrix, xt)
    assert np.max(np.abs(psi)) <= 1e-9 * abs(q.level)


def test_default_geometry_layout():
    geom = fwd.default_geometry("convex")
    assert geom.shape == (402, 199)
    assert geom.source_y[0] == -100.5 and geom.source_y[1] == -100.0
    assert geom.source_y[-1] == 100.0
    assert geom.radii[0] == 2.0 and geom.radii[-1] == 200.0
    np.testing.assert_allclose(geom.centers[:, 1], geom.source_y**2 / 50 - 100)


def _disk_phantom(center, r):
    return PhantomSpec([Primitive("disk", {"center": center, "radius": r})])


def test_forward_scan_zero_and_far():
    geom = fwd.default_geometry("convex", 20, 10)
    assert not fwd.forward_scan_2d(PhantomSpec([]), geom).values.any()
    # a small disk far outside every circle (all radii < 200 from the centers? no: pick far)
    far = fwd.forward_scan_2d(_disk_phantom([1000.0, 1000.0], 1.0), geom)
    assert not far.values.any()


def test_chord_arc_length_oracle():
    c0, rd = np.array([10.0, 20.0]), 5.0
    center = np.array([[0.0, 20.0]])
    R = 10.0  # circle passes through the disk center
    geom = fwd.ScanGeometry2D(center, [R])
    val = fwd.forward_scan_2d(_disk_phantom(c0, rd), geom, cfg=fwd.QuadConfig(1e-10, 1e-10))
    th = np.linspace(-math.pi, math.pi, 2_000_001)
    pts = center[0] + R * np.stack([np.cos(th), np.sin(th)], -1)
    inside = np.sum((pts - c0) ** 2, -1) <= rd * rd
    walk = R * (th[1] - th[0]) * np.count_nonzero(inside)
    exact = 2 * R * 2 * math.asin(rd / (2 * R))
    assert val.values[0, 0] == pytest.approx(walk, rel=1e-3)
    assert val.values[0, 0] == pytest.approx(exact, rel=1e-5)


def test_system_matrix_rows():
    grid = ImageGrid.from_extent((100, 100), [-100, -100], [100, 100])
    geom = fwd.ScanGeometry2D([[0.0, 0.0], [500.0, 500.0], [90.0, 0.0]], [5.0, 50.0, 30.0])
    sm = fwd.build_system_matrix(geom, grid)
    A = sm.matrix
    assert A.data.min() >= 0
    sums = np.asarray(A.sum(axis=1)).ravel().reshape(3, 3)
    np.testing.assert_allclose(sums[0], 2 * math.pi * geom.radii, rtol=1e-2)
    assert not sums[1].any()  # far outside the grid
    # clipped arcs: circle at (90, 0) radius 30 against x <= 100
    r = 30.0
    clipped = 2 * math.pi * r - 2 * r * math.acos(10.0 / r)
    assert sums[2, 2] == pytest.approx(clipped, rel=1e-2)


def test_row_support_near_locus():
    grid = ImageGrid.from_extent((64, 64), [-100, -100], [100, 100])
    geom = fwd.default_geometry("nonconvex", 12, 8)
    sm = fwd.build_system_matrix(geom, grid)
    X = grid.centers()
    cx, cy, r = geom.row_circles()
    h = grid.spacing[0]
    A = sm.matrix.tocoo()
    d = np.abs(np.hypot(X[A.col, 0] - cx[A.row], X[A.col, 1] - cy[A.row]) - r[A.row])
    assert d.max() <= math.sqrt(2) * h + 1e-9


def test_adjoint_identity(rng):
    grid = ImageGrid.from_extent((48, 48), [-100, -100], [100, 100])
    sm = fwd.build_system_matrix(fwd.default_geometry("convex", 40, 30), grid)
    x = rng.standard_normal(grid.size)
    y = rng.standard_normal(sm.shape[0])
    lhs = fwd.apply(sm, x) @ y
    rhs = x @ fwd.apply_adjoint(sm, y)
    nrm = sm.norm_estimate()
    assert abs(lhs - rhs) <= 1e-9 * nrm * np.linalg.norm(x) * np.linalg.norm(y)
    assert not fwd.apply(sm, np.zeros(grid.size)).any()
    with pytest.raises(ValueError):
        fwd.apply(sm, np.zeros(5))
    with pytest.raises(ValueError):
        fwd.apply_adjoint(sm, np.zeros(5))


def test_matrix_vs_quadrature_disk():
    grid = ImageGrid.from_extent((200, 200), [-100, -100], [100, 100])
    geom = fwd.default_geometry("convex", 41, 40)
    spec = _disk_phantom([10.0, 30.0], 25.0)
    sm = fwd.build_system_matrix(geom, grid)
    disc = fwd.apply(sm, rasterize(spec, grid, supersample=2))
    cont = fwd.forward_scan_2d(spec, geom).values.ravel()
    assert np.linalg.norm(disc - cont) <= 0.03 * np.linalg.norm(cont)


def test_simulate_sinogram():
    grid = ImageGrid.from_extent((64, 64), [-100, -100], [100, 100])
    sm = fwd.build_system_matrix(fwd.default_geometry("convex", 60, 40), grid)
    x = np.ones(grid.size)
    exact = fwd.simulate_sinogram(sm, x, perturb=0.0, noise_sigma=0.0)
    np.testing.assert_array_equal(exact.values.ravel(), sm.matrix @ x)
    a = fwd.simulate_sinogram(sm, x, 0.5, 0.1, seed=3)
    b = fwd.simulate_sinogram(sm, x, 0.5, 0.1, seed=3)
    assert a.values.tobytes() == b.values.tobytes()
    assert a.provenance["seed"] == 3 and a.provenance["perturb"] == 0.5
    pert = fwd.simulate_sinogram(sm, x, 0.5, 0.0, seed=0).values.ravel()
    clean = sm.matrix @ x
    assert sm.matrix.nnz >= 10**4
    live = clean > 0
    assert np.all(pert[live] >= 0.5 * clean[live] - 1e-12)
    assert np.all(pert[live] <= 1.5 * clean[live] + 1e-12)
    assert pert[live].mean() == pytest.approx(clean[live].mean(), rel=0.02)
    with pytest.raises(ValueError):
        fwd.simulate_sinogram(sm, x, perturb=1.0)
