"""Generalized Radon transforms over quadrics centred on hypersurfaces.

Modules
-------
geometry     quadrics, graph surfaces, tangent planes, the tangent-plane test
phantoms     image grids and analytic phantoms (with a packaged catalog)
forward      surface integrals, 2D circular sinograms and system matrices
cylindrical  spheroid transform on the unit cylinder and its Volterra inversion
microlocal   mirror-point artifact prediction and wavefront coverage maps
recon        backprojection, Landweber and smoothed-TV reconstruction
ertg         the ERTG1 file container
experiments  artifact-overlap, TV-vs-Landweber and coverage-ordering recipes
cli          the ``quadradon`` command
"""

from . import experiments, kernels
from .cylindrical import (CylScanData, FourierStack, SpheroidScanConfig, VolterraKernelEval,
                          forward_scan_cyl, forward_spheroid, fourier_decompose,
                          fourier_synthesize, invert_scan, kernel_Kn, solve_volterra)
from .forward import (QuadConfig, ScanGeometry2D, Sinogram2D, SystemMatrix, apply,
                      apply_adjoint, build_system_matrix, forward_scan_2d,
                      integrate_over_quadric, default_geometry, simulate_sinogram)
from .geometry import (GraphSurface, Quadric, TangentPlane, bolker_check, builtin_surface,
                       classify_quadric, eval_defining_function, tangent_plane)
from .microlocal import (CoverageMap, MirrorResult, boundary_streak_circles,
                         mean_coverage_profile, mirror_point, plane_mean, predict_artifact_set,
                         sphere_coverage_map, spheroid_coverage_map)
from .phantoms import (ImageGrid, PhantomSpec, catalog_phantom, delta_grid, eval_phantom,
                       rasterize)
from .recon import (ReconConfig, backprojection, cross_validate_tv, landweber,
                    tv_objective_and_gradient, tv_reconstruct)

__all__ = [
    "experiments", "kernels", "CoverageMap", "CylScanData", "FourierStack", "GraphSurface",
    "ImageGrid", "MirrorResult", "PhantomSpec", "QuadConfig", "Quadric", "ReconConfig",
    "ScanGeometry2D", "Sinogram2D", "SpheroidScanConfig", "SystemMatrix", "TangentPlane",
    "VolterraKernelEval", "apply", "apply_adjoint", "backprojection", "bolker_check",
    "boundary_streak_circles", "build_system_matrix", "builtin_surface", "catalog_phantom",
    "classify_quadric", "cross_validate_tv", "delta_grid", "eval_defining_function",
    "eval_phantom", "forward_scan_2d", "forward_scan_cyl", "forward_spheroid",
    "fourier_decompose", "fourier_synthesize", "integrate_over_quadric", "invert_scan",
    "kernel_Kn", "landweber", "mean_coverage_profile", "mirror_point", "default_geometry",
    "plane_mean", "predict_artifact_set", "rasterize", "simulate_sinogram", "solve_volterra",
    "sphere_coverage_map", "spheroid_coverage_map", "tangent_plane",
    "tv_objective_and_gradient", "tv_reconstruct",
]

__version__ = "0.1.0"
