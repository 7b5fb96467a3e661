"""Hot kernels with a compiled backend and a numpy fallback.

The compiled extension is used when it imports; set ``AUCTIONBOOK_PURE_PYTHON=1``
to force the fallback.  ``BACKEND`` names the active one.
"""
import os

from . import _pykernels as python_backend

compiled_backend = None
if os.environ.get("AUCTIONBOOK_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as compiled_backend
    except ImportError:
        compiled_backend = None

_active = compiled_backend if compiled_backend is not None else python_backend
BACKEND = "cython" if compiled_backend is not None else "python"

solve_tridiagonal = _active.solve_tridiagonal
clearing_scan = _active.clearing_scan
rescaled_range = _active.rescaled_range

__all__ = ["BACKEND", "solve_tridiagonal", "clearing_scan", "rescaled_range",
           "python_backend", "compiled_backend"]
