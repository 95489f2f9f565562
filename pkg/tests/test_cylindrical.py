import math

import numpy as np
import pytest
from scipy import integrate

from quadradon import cylindrical as cyl
from quadradon import forward as fwd
from quadradon.geometry import Quadric
from quadradon.phantoms import PhantomSpec, catalog_phantom

EPS = 0.05


def one(r, phi, x2):
    return np.ones(np.broadcast(r, phi, x2).shape)


def prolate_area(a, c):
    e = math.sqrt(1 - a * a / (c * c))
    return 2 * math.pi * a * a * (1 + c / (a * e) * math.asin(e))


# --- forward transform -------------------------------------------------------

def test_forward_spheroid_measure():
    assert cyl.forward_spheroid(lambda r, f, z: np.zeros(np.shape(r)), 1.0, 0.5, 0.3, 0.0)[0] == 0
    for p in (0.3, 0.8):
        val = cyl.forward_spheroid(one, 1.0, p, 0.7, [0.0, 0.4])
        np.testing.assert_allclose(val, 4 * math.pi * p * p, rtol=1e-3)
        val = cyl.forward_spheroid(one, 0.5, p, 1.1, 0.0)
        assert val[0] == pytest.approx(prolate_area(p, p / 0.5), rel=1e-3)
    with pytest.raises(ValueError):
        cyl.forward_spheroid(one, 1.0, 0.0, 0.0, 0.0)
    with pytest.raises(ValueError):
        cyl.forward_spheroid(one, 1.5, 0.5, 0.0, 0.0)


@pytest.mark.parametrize("phi0,y0,p", [(0.0, 0.0, 0.9), (2.0, 0.3, 1.1), (4.5, -0.2, 0.7)])
def test_sphere_matches_quadric_integral(phi0, y0, p):
    spec = catalog_phantom("bump3d")
    val = cyl.forward_spheroid(spec, 1.0, p, phi0, y0, n_alpha=64, n_theta=64)[0]
    center = np.array([math.cos(phi0), y0, math.sin(phi0)])
    ref = fwd.integrate_over_quadric(spec, Quadric(center, np.eye(3), p * p),
                                     cfg=fwd.QuadConfig(1e-12, 1e-9, max_level=8))
    assert val == pytest.approx(ref, rel=1e-4)


def test_scan_symmetries():
    spec = catalog_phantom("radial3d")  # centered on the axis at x2 = 0
    y0 = np.linspace(-1.5, 1.5, 13)
    cfg = cyl.SpheroidScanConfig(1.0, np.linspace(0.2, 0.9, 6),
                                 2 * np.pi * np.arange(8) / 8, y0)
    data = cyl.forward_scan_cyl(spec, cfg).values
    scale = np.max(np.abs(data))
    assert scale > 0
    assert np.max(np.abs(data - data[:, :1, :])) <= 1e-8 * scale
    assert np.max(np.abs(data - data[:, :, ::-1])) <= 1e-8 * scale


def test_scan_zero_and_support_warning():
    cfg = cyl.SpheroidScanConfig.regular(1.0, 5, 4, 4)
    assert not cyl.forward_scan_cyl(PhantomSpec([]), cfg).values.any()
    assert not cyl.forward_scan_cyl(lambda r, f, z: np.zeros(np.shape(r)), cfg).values.any()
    edge = PhantomSpec(catalog_phantom("ball3d").primitives[:])
    edge.primitives[0].params["center"] = np.array([0.8, 0.0, 0.0])
    out = cyl.forward_scan_cyl(edge, cfg)
    assert "support_warning" in out.provenance


def test_forward_linearity():
    def f1(r, phi, x2):
        return np.exp(-((r * np.cos(phi) - 0.2) ** 2 + x2**2 + (r * np.sin(phi)) ** 2) / 0.05)

    def f2(r, phi, x2):
        return np.exp(-(r**2 + (x2 - 0.3) ** 2) / 0.08)

    cfg = cyl.SpheroidScanConfig.regular(0.7, 6, 8, 8)
    d1 = cyl.forward_scan_cyl(f1, cfg).values
    d2 = cyl.forward_scan_cyl(f2, cfg).values
    d = cyl.forward_scan_cyl(lambda r, p, z: 2.0 * f1(r, p, z) - 0.5 * f2(r, p, z), cfg).values
    assert np.max(np.abs(d - (2 * d1 - 0.5 * d2))) <= 1e-10 * np.max(np.abs(d))


def test_config_validation():
    with pytest.raises(ValueError):
        cyl.SpheroidScanConfig(0.0, [0.1, 0.2], [0.0, 1.0], [0.0, 1.0])
    with pytest.raises(ValueError):
        cyl.SpheroidScanConfig(1.0, [0.2, 0.1], [0.0, 1.0], [0.0, 1.0])


# --- Fourier decomposition ----------------------------------------------------

def _data(values, aspect=1.0):
    P, F, Y = values.shape
    cfg = cyl.SpheroidScanConfig(aspect, np.linspace(EPS, 1 - EPS, P),
                                 2 * np.pi * np.arange(F) / F, np.linspace(-2, 2, Y, endpoint=False))
    return cyl.CylScanData(values, cfg)


def test_fourier_orthogonality(rng):
    g = rng.standard_normal((5, 1, 8))
    data = _data(np.repeat(g, 12, axis=1))
    st = cyl.fourier_decompose(data, 5)
    for n in st.orders:
        if n != 0:
            assert np.max(np.abs(st.order(n))) < 1e-12
    np.testing.assert_allclose(st.order(0), np.fft.fft(g[:, 0, :], axis=1).T, atol=1e-12)

    phi = 2 * np.pi * np.arange(12) / 12
    data = _data(np.cos(2 * phi)[None, :, None] * g)
    st = cyl.fourier_decompose(data, 5)
    for n in st.orders:
        if abs(n) != 2:
            assert np.max(np.abs(st.order(n))) < 1e-12
        else:
            np.testing.assert_allclose(st.order(n), np.fft.fft(g[:, 0, :], axis=1).T / 2,
                                       atol=1e-12)


def test_fourier_round_trip_and_hermitian(rng):
    vals = rng.standard_normal((6, 9, 10))
    data = _data(vals)
    st = cyl.fourier_decompose(data)  # all 9 orders
    back = cyl.fourier_synthesize(st, data.config.phi0)
    assert np.max(np.abs(back - vals)) <= 1e-9 * np.max(np.abs(vals))
    for n in st.orders:
        a = st.order(n)
        b = st.order(-n)
        # eta -> -eta is index k -> -k mod Y
        np.testing.assert_allclose(b[(-np.arange(st.eta.size)) % st.eta.size], np.conj(a),
                                   atol=1e-8 * np.max(np.abs(a)) + 1e-14)


def test_fourier_rejects_bad_grids():
    cfg = cyl.SpheroidScanConfig(1.0, [0.1, 0.2], [0.0, 1.0, 3.0], [0.0, 1.0, 2.0])
    with pytest.raises(ValueError):
        cyl.fourier_decompose(cyl.CylScanData(np.zeros((2, 3, 3)), cfg))
    cfg = cyl.SpheroidScanConfig(1.0, [0.1, 0.2], 2 * np.pi * np.arange(3) / 3, [0.0, 1.0, 3.0])
    with pytest.raises(ValueError):
        cyl.fourier_decompose(cyl.CylScanData(np.zeros((2, 3, 3)), cfg))


# --- Volterra kernel ----------------------------------------------------------

def raw_kernel(n, eta, p, u, s):
    """Unregularized x1-integral; endpoint singularities handled by splitting
    at the midpoint and letting QAGS extrapolate toward each endpoint."""
    def f(x):
        c = ((1 - u) ** 2 + 1 - x * x) / (2 * (1 - u))
        T = math.cos(abs(n) * math.acos(min(1.0, max(-1.0, c))))
        return (x * math.sqrt(x * x + s * s * (p * p - x * x))
                * math.cos(eta / s * math.sqrt(max(p * p - x * x, 0.0))) * T
                / (math.sqrt(p * p - x * x) * math.sqrt(1 - c * c)))

    m = 0.5 * (u + p)
    opts = dict(epsabs=0, epsrel=1e-12, limit=500)
    with np.errstate(all="ignore"):
        import warnings
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            return integrate.quad(f, u, m, **opts)[0] + integrate.quad(f, m, p, **opts)[0]


def test_kernel_diagonal_value():
    assert cyl.kernel_Kn(0, 0.0, 0.5, 0.5) == pytest.approx(0.55536, abs=1e-5)
    for n in (0, 3, 8):
        for eta in (0.0, 5.0, 20.0):
            for s in (0.5, 1.0):
                for p in np.linspace(0.1, 0.9, 9):
                    val = cyl.kernel_Kn(n, eta, p, p, s)
                    assert val == pytest.approx(math.pi * p * math.sqrt(1 - p) / 2, rel=1e-6)


def test_kernel_against_raw_quadrature():
    assert cyl.kernel_Kn(0, 0.0, 0.6, 0.3, 1.0) == pytest.approx(raw_kernel(0, 0.0, 0.6, 0.3, 1.0),
                                                                  rel=1e-8)
    for args in [(3, 5.0, 0.7, 0.2, 0.5), (1, 20.0, 0.9, 0.5, 1.0), (6, 2.0, 0.4, 0.05, 0.7)]:
        assert cyl.kernel_Kn(*args) == pytest.approx(raw_kernel(*args), rel=1e-8)


def test_kernel_symmetric_in_n_and_domain():
    assert cyl.kernel_Kn(3, 4.0, 0.6, 0.3) == cyl.kernel_Kn(-3, 4.0, 0.6, 0.3)
    with pytest.raises(ValueError):
        cyl.kernel_Kn(0, 0.0, 0.3, 0.6)
    with pytest.raises(ValueError):
        cyl.kernel_Kn(0, 0.0, 1.0, 0.5)


def test_kernel_stack_derivative_and_bounds():
    p = np.linspace(EPS, 1 - EPS, 60)
    maxima = []
    for eta in (0.0, 5.0, 20.0):
        K, Kp, _ = cyl.kernel_stack(p, 1.0, eta, 4, order=512)
        assert np.all(np.isfinite(K)) and np.all(np.isfinite(Kp))
        # analytic dK/dp against centered differences of K in p (fixed u)
        for n in (0, 4):
            for i, j in [(10, 3), (30, 3), (45, 20), (59, 40), (25, 23)]:
                d = 1e-6
                fd = (cyl.kernel_Kn(n, eta, p[i] + d, p[j], 1.0, order=512)
                      - cyl.kernel_Kn(n, eta, p[i] - d, p[j], 1.0, order=512)) / (2 * d)
                assert Kp[n, i, j] == pytest.approx(fd, rel=1e-5, abs=1e-7)
        maxima.append(np.max(np.abs(Kp)))
    ratio = np.array(maxima) / (1 + np.array([0.0, 5.0, 20.0]) ** 2)
    C = ratio.max()
    assert np.all(np.array(maxima) <= C * (1 + np.array([0.0, 5.0, 20.0]) ** 2))
    assert maxima[2] <= 10 * maxima[0] * (1 + 20.0**2)


def test_kernel_eval_object():
    ev = cyl.VolterraKernelEval(2, 3.0, 0.5, order=256)
    assert ev(0.6, 0.3) == pytest.approx(cyl.kernel_Kn(2, 3.0, 0.6, 0.3, 0.5, order=256))
    K, Kp = ev.matrices(np.linspace(0.1, 0.9, 5))
    assert K.shape == (5, 5) and np.allclose(np.triu(K, 1), 0)


# --- Volterra solve -----------------------------------------------------------

def _manufactured(n, eta, s, P):
    p = np.linspace(EPS, 1 - EPS, P)

    def phi(u):
        return u * u * (1 - u)

    g = np.zeros(P)
    for i, pi in enumerate(p[1:], 1):
        g[i] = (4 / s) * integrate.quad(
            lambda u: cyl.kernel_Kn(n, eta, pi, u, s, order=512) * phi(u), EPS, pi,
            epsabs=0, epsrel=1e-11, limit=200)[0]
    return p, g, phi(p)


@pytest.fixture(scope="module")
def manufactured():
    return {(key, P): _manufactured(*key, P) for key in [(0, 0.0, 1.0), (2, 5.0, 0.5)]
            for P in (100, 200)}


def _rel(a, b):
    return np.linalg.norm(a - b) / np.linalg.norm(b)


def test_volterra_trapezoid_manufactured(manufactured):
    errs = []
    for P in (100, 200):
        p, g, exact = manufactured[((0, 0.0, 1.0), P)]
        sol = cyl.solve_volterra(g, p, 1.0, n=0, eta=0.0)
        neu = cyl.solve_volterra(g, p, 1.0, n=0, eta=0.0, method="neumann")
        assert np.max(np.abs(sol - neu)) <= 1e-8 * np.max(np.abs(sol))
        errs.append(_rel(sol, exact))
    assert errs[1] <= 1e-3
    assert errs[0] / errs[1] >= 3


def test_volterra_product_manufactured(manufactured):
    errs = []
    for P in (100, 200):
        p, g, exact = manufactured[((2, 5.0, 0.5), P)]
        errs.append(_rel(cyl.solve_volterra(g, p, 0.5, n=2, eta=5.0, scheme="product"), exact))
    assert errs[1] <= 1e-3
    assert errs[0] / errs[1] >= 3


def test_volterra_zero_multi_rhs_and_errors():
    p = np.linspace(EPS, 1 - EPS, 30)
    assert not cyl.solve_volterra(np.zeros(30), p, 1.0).any()
    G = np.stack([np.sin(p), p**2], axis=1)
    both = cyl.solve_volterra(G, p, 1.0, n=1, eta=2.0)
    np.testing.assert_allclose(both[:, 1], cyl.solve_volterra(p**2, p, 1.0, n=1, eta=2.0))
    with pytest.raises(ValueError, match="degenerate"):
        cyl.solve_volterra(np.zeros(10), np.linspace(1e-10, 0.5, 10), 1.0)
    with pytest.raises(ValueError):
        cyl.solve_volterra(np.zeros(30), p, 1.0, scheme="midpoint")


def test_product_matrix_structure():
    p = np.linspace(EPS, 1 - EPS, 20)
    M = cyl.product_matrices(p, 1.0, 3.0, 2)
    assert M.shape == (3, 20, 20)
    assert np.allclose(np.triu(M, 1), 0)
    # first row has no integral part
    np.testing.assert_allclose(M[:, 0, 0], cyl.kernel_diagonal(p[0]))
    assert np.all(np.diagonal(M, axis1=1, axis2=2) > 0)


# --- inversion ----------------------------------------------------------------

def _small_cfg(aspect=1.0):
    return cyl.SpheroidScanConfig.regular(aspect, 40, 9, 16)


def test_invert_zero_and_determinism(rng):
    cfg = _small_cfg()
    zero = cyl.invert_scan(cyl.CylScanData(np.zeros(cfg.shape), cfg), n_max=4)
    assert not zero.values.any()
    vals = rng.standard_normal(cfg.shape)
    a = cyl.invert_scan(cyl.CylScanData(vals, cfg), n_max=4)
    b = cyl.invert_scan(cyl.CylScanData(vals.copy(), cfg), n_max=4)
    assert a.values.tobytes() == b.values.tobytes()


def test_invert_linearity(rng):
    cfg = _small_cfg(0.8)
    d1, d2 = rng.standard_normal(cfg.shape), rng.standard_normal(cfg.shape)
    for scheme in ("product", "trapezoid"):
        inv = [cyl.invert_scan(cyl.CylScanData(d, cfg), n_max=3, scheme=scheme).values
               for d in (d1, d2, 3 * d1 - 2 * d2)]
        assert np.max(np.abs(inv[2] - (3 * inv[0] - 2 * inv[1]))) <= 1e-10 * np.max(np.abs(inv[2]))


def test_radial_round_trip_small():
    """Coarse forward -> invert check on the axis bump (the full-size run is
    an acceptance criterion)."""
    spec = catalog_phantom("radial3d")
    cfg = cyl.SpheroidScanConfig.regular(1.0, 80, 8, 32, y_window=(-2.0, 2.0))
    data = cyl.forward_scan_cyl(spec, cfg)
    img = cyl.invert_scan(data, n_max=2)
    from quadradon.phantoms import rasterize
    truth = rasterize(spec, img)
    err = np.linalg.norm(img.values - truth.values) / np.linalg.norm(truth.values)
    assert err < 0.15
