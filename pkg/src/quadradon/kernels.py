"""Backend selection for the hot loops.

The compiled extension is used when it imports; set ``QUADRADON_PURE=1``
to force the NumPy implementation.  ``BACKEND`` names the active one.
"""

import os

from . import _pykernels

if os.environ.get("QUADRADON_PURE") == "1":
    _impl = _pykernels
else:
    try:
        from . import _ckernels as _impl
    except ImportError:  # extension not built
        _impl = _pykernels

BACKEND = "cython" if _impl is not _pykernels else "python"

splat_circles = _impl.splat_circles
volterra_kernel_stack = _impl.volterra_kernel_stack
volterra_kernel_pairs = _impl.volterra_kernel_pairs
coverage_hits = _impl.coverage_hits
direction_bins = _pykernels.direction_bins


def backend_module(name: str):
    """Return the kernel module for ``"python"`` or ``"cython"`` (for comparisons)."""
    if name == "python":
        return _pykernels
    if name == "cython":
        from . import _ckernels
        return _ckernels
    raise ValueError(f"unknown backend {name!r}")
