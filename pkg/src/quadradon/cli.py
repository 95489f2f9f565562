"""``quadradon`` command line.

Subcommands::

    forward2d         circular-mean sinogram of a 2D phantom
    recon2d           backprojection / Landweber / TV reconstruction
    artifacts2d       predicted mirror-point artifacts and boundary streaks
    coverage3d        wavefront coverage map on the unit cylinder
    coverage-profile  mean coverage per N over a mid-plane (CSV)
    cyl               spheroid scan of a 3D phantom, or its inversion
    kernel-check      Volterra kernel diagonal against its closed form (CSV)
    export            ERTG grid to PGM or CSV

Phantoms are catalog names (``simple``, ``complex``, ``bump3d``, ...),
``empty``, or ``delta:x1,x2`` (2D point source, matrix model only).
Custom center curves are read with ``--curve csv:<path>``: two columns
``y1, q`` (``#`` comments allowed), gradient by centered differences.

Exit codes: 0 ok, 1 usage error, 2 data error (missing or malformed
input), 3 numerical failure.  All randomness is keyed by ``--seed``
(default 0) and outputs are written atomically.
"""

from __future__ import annotations

import argparse
import io
import sys
import warnings

import numpy as np

from . import cylindrical as cyl
from . import forward as fwd
from . import microlocal as ml
from . import recon
from .ertg import ErtgContainer, ErtgError, atomic_write, read_ertg, write_ertg
from .geometry import builtin_surface
from .phantoms import ImageGrid, PhantomSpec, catalog_phantom, delta_grid, rasterize

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class NumericError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# ---------------------------------------------------------------------------
# argument helpers
# ---------------------------------------------------------------------------

def _floats(text, count=None, name="value"):
    try:
        vals = [float(t) for t in str(text).split(",") if t.strip()]
    except ValueError:
        raise UsageError(f"{name}: expected comma-separated numbers, got {text!r}") from None
    if count is not None and len(vals) != count:
        raise UsageError(f"{name}: expected {count} numbers, got {len(vals)}")
    return vals


def _surface(name):
    try:
        return builtin_surface(name)
    except (OSError, ValueError) as exc:
        if name.startswith("csv:"):
            raise DataError(str(exc)) from None
        raise UsageError(str(exc)) from None


def _phantom(name, dim):
    if name == "empty":
        return PhantomSpec([], "empty")
    try:
        spec = catalog_phantom(name)
    except KeyError:
        raise UsageError(f"unknown phantom {name!r}") from None
    if spec.dim != dim:
        raise UsageError(f"phantom {name!r} is {spec.dim}D, this command needs {dim}D")
    return spec


def _read(path, kind=None):
    try:
        cont = read_ertg(path)
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror or exc}") from None
    except ErtgError as exc:
        raise DataError(f"{path}: {exc}") from None
    if kind is not None and cont.kind not in ((kind,) if isinstance(kind, str) else kind):
        raise DataError(f"{path}: expected kind={kind}, found kind={cont.kind}")
    return cont


def _image_grid(n, extent=100.0):
    return ImageGrid.from_extent((n, n), [-extent, -extent], [extent, extent])


def _geometry_meta(geom: fwd.ScanGeometry2D, curve: str):
    return {"curve": curve, "center_y": geom.source_y, "radii": geom.radii}


def _geometry_from(cont: ErtgContainer, curve_arg=None):
    curve = cont.meta.get("curve")
    if curve is None:
        raise DataError("sinogram lacks meta.curve")
    if curve_arg is not None and curve_arg != curve:
        raise UsageError(f"--curve {curve_arg} does not match the data (curve={curve})")
    surface = _surface(curve)
    y = np.atleast_1d(cont.get("center_y"))
    radii = np.atleast_1d(cont.get("radii"))
    centers = np.stack([y, surface.height(y)], axis=-1)
    geom = fwd.ScanGeometry2D(centers, radii, curve, y)
    if cont.values.shape != geom.shape:
        raise DataError(f"sinogram dims {cont.values.shape} do not match its geometry")
    return geom


def _grid_container(img: ImageGrid, kind="grid", **meta):
    m = {k: v for k, v in img.meta.items() if np.ndim(v) <= 1}
    m.update(meta)
    return ErtgContainer(kind, img.values, img.origin, img.spacing, m)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_forward2d(args):
    geom = fwd.default_geometry(_surface(args.curve), args.centers, args.radii)
    geom.curve = args.curve
    name = args.phantom
    meta = {"phantom": name, "model": args.model}
    if args.model == "quadrature":
        if name.startswith("delta:"):
            raise UsageError("delta phantoms need --model matrix")
        spec = _phantom(name, 2)
        tol = args.quad_tol
        cfg = fwd.QuadConfig(tol_abs=tol, tol_rel=tol)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            sino = fwd.forward_scan_2d(spec, geom, cfg=cfg)
    else:
        grid = _image_grid(args.grid)
        if name.startswith("delta:"):
            image = delta_grid(_floats(name[6:], 2, "delta"), grid)
        else:
            image = rasterize(_phantom(name, 2), grid, supersample=args.supersample)
        system = fwd.build_system_matrix(geom, grid)
        clean = fwd.apply(system, image)
        sigma = args.noise * float(np.max(np.abs(clean))) if args.noise > 0 else 0.0
        sino = fwd.simulate_sinogram(system, image, args.perturb, sigma, args.seed)
        meta.update(grid=args.grid, noise_fraction=args.noise)
    meta.update(sino.provenance)
    meta.update(_geometry_meta(geom, args.curve))
    write_ertg(args.out, ErtgContainer("sinogram", sino.values, meta=meta))
    return EXIT_OK


def cmd_recon2d(args):
    cont = _read(args.data, "sinogram")
    geom = _geometry_from(cont, args.curve)
    grid = _image_grid(args.grid)
    system = fwd.build_system_matrix(geom, grid)
    b = cont.values.ravel()
    meta = {"seed": args.seed, "data": cont.meta.get("phantom", "")}
    method = {"bp": "backprojection"}.get(args.method, args.method)
    if method != "tv" and (args.alpha is not None or args.cv):
        raise UsageError("--alpha/--cv only apply to --method tv")
    if method == "backprojection":
        img = recon.backprojection(system, b)
    elif method == "landweber":
        try:
            img = recon.landweber(system, b, args.iters, seed=args.seed)
        except recon.LandweberDivergence as exc:
            raise NumericError(str(exc)) from None
        img.meta.pop("residuals", None)
    else:
        alpha, beta = args.alpha if args.alpha is not None else 0.0, args.beta
        if args.cv:
            cvres = recon.cross_validate_tv(system, b, _floats(args.cv_alphas),
                                            _floats(args.cv_betas), args.cv, args.seed,
                                            iters=args.cv_iters)
            alpha, beta = cvres.alpha, cvres.beta
            meta.update(cv_folds=args.cv, cv_alpha=alpha, cv_beta=beta,
                        cv_scores=cvres.scores.ravel())
        img = recon.tv_reconstruct(system, b, alpha, beta, args.iters)
        if img.meta["stop"] == "line_search_failed":
            meta["warning"] = "line search failed; returning current iterate"
        img.meta.pop("objective", None)
    meta["method"] = method
    write_ertg(args.out, _grid_container(img, **meta))
    return EXIT_OK


def cmd_artifacts2d(args):
    x0 = np.array(_floats(args.point, 2, "--point"), dtype=float)
    surface = _surface(args.curve)
    geom = fwd.default_geometry(surface, args.centers, None)
    aset = ml.predict_artifact_set(surface, np.eye(2), x0, args.samples)
    circles = ml.boundary_streak_circles(geom, x0)
    out = io.StringIO()
    out.write(f"# source,{float(x0[0])!r},{float(x0[1])!r}\n")
    for c in circles:
        out.write(f"# streak_circle,{float(c.center[0])!r},{float(c.center[1])!r},"
                  f"{float(c.radius)!r}\n")
    out.write(f"# skipped,{aset.skipped}\n")
    out.write("x1,x2,source_y\n")
    for p, y in zip(aset.points, aset.params):
        out.write(f"{float(p[0])!r},{float(p[1])!r},{float(y[0])!r}\n")
    atomic_write(args.out, out.getvalue().encode("ascii"))
    return EXIT_OK


def _bins(text):
    try:
        lat, lon = (int(t) for t in text.lower().split("x"))
        return ml.BinConfig(lat, lon)
    except ValueError as exc:
        raise UsageError(f"--bins: {exc}") from None


def cmd_coverage3d(args):
    grid = ml.cylinder_grid(args.grid)
    fn = ml.sphere_coverage_map if args.mode == "sphere" else ml.spheroid_coverage_map
    cmap = fn(args.N, args.phi_step, grid, _bins(args.bins))
    meta = dict(cmap.meta)
    meta.update(n_lat=cmap.bins.n_lat, n_lon=cmap.bins.n_lon, antipodal=True,
                axes="x1,x2,x3")
    write_ertg(args.out, ErtgContainer("coverage", cmap.values, cmap.grid.origin,
                                       cmap.grid.spacing, meta))
    return EXIT_OK


def _coverage_from(cont: ErtgContainer):
    grid = ImageGrid(cont.values.shape, cont.origin, cont.spacing, cont.values)
    x = grid.centers()
    mask = ((x[:, 0] ** 2 + x[:, 2] ** 2) < 1.0).reshape(grid.dims)
    bins = ml.BinConfig(int(cont.get("n_lat", 18)), int(cont.get("n_lon", 36)))
    return ml.CoverageMap(grid, mask, bins, {"N": int(cont.get("N")),
                                             "mode": cont.get("mode")})


def cmd_coverage_profile(args):
    maps = [_coverage_from(_read(p, "coverage")) for p in args.inputs]
    modes = {m.meta["mode"] for m in maps}
    try:
        table = ml.mean_coverage_profile(maps, args.plane)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    out = io.StringIO()
    out.write(f"# mode={','.join(sorted(modes))} plane={args.plane}\n")
    out.write("N,mean_percent\n")
    for N, pct in table:
        out.write(f"{N},{float(pct)!r}\n")
    atomic_write(args.out, out.getvalue().encode("ascii"))
    return EXIT_OK


def cmd_cyl(args):
    if args.forward:
        spec = _phantom(args.phantom, 3)
        lo, hi = _floats(args.y_window, 2, "--y-window")
        cfg = cyl.SpheroidScanConfig.regular(args.aspect, args.np, args.nphi, args.ny, (lo, hi),
                                             eps=args.eps, eps1=args.eps1)
        data = cyl.forward_scan_cyl(spec, cfg)
        meta = {"phantom": args.phantom, "aspect": args.aspect, "eps": args.eps,
                "eps1": args.eps1, "p": cfg.p, "phi0": cfg.phi0, "y0": cfg.y0,
                "axes": "p,phi0,y0", "seed": args.seed}
        meta.update(data.provenance)
        write_ertg(args.out, ErtgContainer("scan", data.values, meta=meta))
        return EXIT_OK
    cont = _read(args.inp, "scan")
    try:
        cfg = cyl.SpheroidScanConfig(float(cont.get("aspect")), np.atleast_1d(cont.get("p")),
                                     np.atleast_1d(cont.get("phi0")),
                                     np.atleast_1d(cont.get("y0")),
                                     float(cont.get("eps", args.eps)),
                                     float(cont.get("eps1", args.eps1)))
        data = cyl.CylScanData(cont.values, cfg)
    except (TypeError, ValueError) as exc:
        raise DataError(f"{args.inp}: {exc}") from None
    if args.aspect is not None and abs(args.aspect - cfg.aspect) > 0:
        raise UsageError(f"--aspect {args.aspect} does not match the data (s={cfg.aspect})")
    y = cfg.y0
    dy = y[1] - y[0]
    grid = ImageGrid.from_extent((args.grid,) * 3, [-1.0, y[0] - dy / 2, -1.0],
                                 [1.0, y[-1] + dy / 2, 1.0])
    try:
        img = cyl.invert_scan(data, args.nmax, grid, damping=args.damping)
    except ValueError as exc:
        raise NumericError(str(exc)) from None
    if not np.all(np.isfinite(img.values)):
        raise NumericError("inversion produced non-finite values")
    write_ertg(args.out, _grid_container(img, axes="x1,x2,x3", seed=args.seed))
    return EXIT_OK


def cmd_kernel_check(args):
    aspects = _floats(args.aspect, name="--aspect")
    etas = _floats(args.etas, name="--etas")
    if not 0 < args.pmin <= args.pmax < 1:
        raise UsageError("need 0 < pmin <= pmax < 1")
    ps = np.linspace(args.pmin, args.pmax, args.pcount)
    out = io.StringIO()
    out.write("s,n,eta,p,K_diag_numeric,K_diag_analytic,rel_err\n")
    worst = 0.0
    for s in aspects:
        if not 0 < s <= 1:
            raise UsageError("--aspect values must lie in (0, 1]")
        s = float(s)
        for n in range(args.nmax + 1):
            for eta in etas:
                eta = float(eta)
                for p in ps:
                    num = float(cyl.kernel_Kn(n, eta, float(p), float(p), s))
                    ana = float(cyl.kernel_diagonal(p))
                    rel = abs(num - ana) / abs(ana)
                    worst = max(worst, rel)
                    out.write(f"{s!r},{n},{eta!r},{float(p)!r},{num!r},{ana!r},{rel!r}\n")
    atomic_write(args.out, out.getvalue().encode("ascii"))
    if worst > 1e-6:
        raise NumericError(f"kernel diagonal deviates by {worst:.3e} > 1e-6")
    return EXIT_OK


def _pgm(values, lo, hi):
    v = np.asarray(values, dtype=float)
    if hi <= lo:
        scaled = np.zeros_like(v)
    else:
        scaled = np.clip((v - lo) / (hi - lo), 0.0, 1.0)
    pix = np.round(scaled * 255).astype(np.uint8)
    # image rows run top to bottom along decreasing x2; columns along x1
    pix = pix.T[::-1] if pix.ndim == 2 else pix
    h, w = pix.shape
    return f"P5\n{w} {h}\n255\n".encode("ascii") + pix.tobytes()


def cmd_export(args):
    cont = _read(args.inp)
    vals = cont.values
    if np.iscomplexobj(vals):
        raise UsageError("complex containers cannot be exported; take real/imag parts first")
    if args.format == "pgm":
        if vals.ndim == 3:
            axis = args.slice_axis
            vals = np.take(vals, vals.shape[axis] // 2, axis=axis)
        if vals.ndim == 1:
            vals = vals[:, None]
        if vals.ndim != 2:
            raise UsageError("PGM export needs a 2D or 3D container")
        if args.window:
            lo, hi = _floats(args.window, 2, "--window")
        else:
            lo, hi = float(np.min(vals)), float(np.max(vals))
        atomic_write(args.out, _pgm(vals, lo, hi))
        return EXIT_OK
    out = io.StringIO()
    cols = [f"i{k}" for k in range(vals.ndim)] + ["value"]
    out.write(",".join(cols) + "\n")
    for idx in np.ndindex(*vals.shape):
        out.write(",".join(str(i) for i in idx) + f",{float(vals[idx])!r}\n")
    atomic_write(args.out, out.getvalue().encode("ascii"))
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="quadradon", description=__doc__.split("\n\n")[0])
    sub = p.add_subparsers(dest="command", parser_class=_Parser, required=True)

    f = sub.add_parser("forward2d", help="circular-mean sinogram of a 2D phantom")
    f.add_argument("--curve", default="convex", help="nonconvex | convex | csv:<path>")
    f.add_argument("--phantom", required=True)
    f.add_argument("--out", required=True)
    f.add_argument("--centers", type=int, default=None, help="number of centers (default 402)")
    f.add_argument("--radii", type=int, default=None, help="number of radii (default 199)")
    f.add_argument("--quad-tol", type=float, default=1e-6)
    f.add_argument("--model", choices=("quadrature", "matrix"), default="quadrature",
                   help="continuous quadrature, or system matrix on a pixel grid")
    f.add_argument("--grid", type=int, default=128, help="matrix model: pixels per side")
    f.add_argument("--supersample", type=int, default=2)
    f.add_argument("--perturb", type=float, default=0.0)
    f.add_argument("--noise", type=float, default=0.0,
                   help="matrix model: noise sigma as a fraction of the clean data max")
    f.add_argument("--seed", type=int, default=0)
    f.set_defaults(func=cmd_forward2d)

    r = sub.add_parser("recon2d", help="2D reconstruction")
    r.add_argument("--method", choices=("bp", "backprojection", "landweber", "tv"),
                   required=True)
    r.add_argument("--data", required=True)
    r.add_argument("--curve", default=None)
    r.add_argument("--grid", type=int, default=128)
    r.add_argument("--out", required=True)
    r.add_argument("--alpha", type=float, default=None)
    r.add_argument("--beta", type=float, default=1e-2)
    r.add_argument("--iters", type=int, default=100)
    r.add_argument("--cv", type=int, default=0, metavar="FOLDS")
    r.add_argument("--cv-alphas", default="0,0.1,1,10")
    r.add_argument("--cv-betas", default="0.01")
    r.add_argument("--cv-iters", type=int, default=50)
    r.add_argument("--seed", type=int, default=0)
    r.set_defaults(func=cmd_recon2d)

    a = sub.add_parser("artifacts2d", help="predicted artifact locus of a point source")
    a.add_argument("--point", required=True, help="x1,x2")
    a.add_argument("--curve", default="convex")
    a.add_argument("--out", required=True)
    a.add_argument("--samples", type=int, default=402)
    a.add_argument("--centers", type=int, default=None)
    a.set_defaults(func=cmd_artifacts2d)

    c = sub.add_parser("coverage3d", help="wavefront coverage map")
    c.add_argument("--mode", choices=("sphere", "spheroid"), required=True)
    c.add_argument("--N", type=int, required=True)
    c.add_argument("--phi-step", type=float, default=6.0)
    c.add_argument("--grid", type=int, default=32)
    c.add_argument("--bins", default="18x36", help="LATxLON, antipodally identified")
    c.add_argument("--out", required=True)
    c.set_defaults(func=cmd_coverage3d)

    cp = sub.add_parser("coverage-profile", help="mean coverage per N (CSV)")
    cp.add_argument("--inputs", nargs="+", required=True)
    cp.add_argument("--plane", default="x1x3", choices=("x1x2", "x1x3", "x2x3"))
    cp.add_argument("--out", required=True)
    cp.set_defaults(func=cmd_coverage_profile)

    y = sub.add_parser("cyl", help="spheroid scan on the unit cylinder")
    mode = y.add_mutually_exclusive_group(required=True)
    mode.add_argument("--forward", action="store_true")
    mode.add_argument("--invert", action="store_true")
    y.add_argument("--aspect", type=float, default=None)
    y.add_argument("--eps", type=float, default=cyl.DEFAULT_EPS)
    y.add_argument("--eps1", type=float, default=cyl.DEFAULT_EPS)
    y.add_argument("--nmax", type=int, default=16)
    y.add_argument("--in", dest="inp", default=None)
    y.add_argument("--out", required=True)
    y.add_argument("--phantom", default="radial3d")
    y.add_argument("--np", type=int, default=200)
    y.add_argument("--nphi", type=int, default=64)
    y.add_argument("--ny", type=int, default=64)
    y.add_argument("--y-window", default="-2,2")
    y.add_argument("--grid", type=int, default=32)
    y.add_argument("--damping", type=float, default=cyl.DEFAULT_DAMPING)
    y.add_argument("--seed", type=int, default=0)
    y.set_defaults(func=cmd_cyl)

    k = sub.add_parser("kernel-check", help="Volterra kernel diagonal check (CSV)")
    k.add_argument("--aspect", default="0.5,1")
    k.add_argument("--pmin", type=float, default=0.1)
    k.add_argument("--pmax", type=float, default=0.9)
    k.add_argument("--pcount", type=int, default=9)
    k.add_argument("--nmax", type=int, default=8)
    k.add_argument("--etas", default="0,5,20")
    k.add_argument("--out", required=True)
    k.set_defaults(func=cmd_kernel_check)

    e = sub.add_parser("export", help="ERTG container to PGM/CSV")
    e.add_argument("--in", dest="inp", required=True)
    e.add_argument("--out", required=True)
    e.add_argument("--format", choices=("pgm", "csv"), default="pgm")
    e.add_argument("--window", default=None, help="lo,hi gray-level window")
    e.add_argument("--slice-axis", type=int, default=2, help="3D grids: axis of the mid-slice")
    e.set_defaults(func=cmd_export)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "invert", False) and not args.inp:
        parser.error("cyl --invert needs --in")
    if getattr(args, "forward", False) and args.aspect is None and args.func is cmd_cyl:
        args.aspect = 1.0
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"quadradon: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"quadradon: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"quadradon: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"quadradon: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
