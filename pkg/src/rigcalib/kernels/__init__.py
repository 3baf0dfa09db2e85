"""Hot numeric kernels: compiled core with a pure-numpy fallback.

The backend is picked once at import time: the compiled Cython module when it
was built, else the numpy implementation. Set ``RIGCALIB_KERNELS`` to
``native`` or ``numpy`` to force a backend (``native`` raises if the compiled
module is unavailable).
"""

from __future__ import annotations

import os

from rigcalib.kernels import _numpy

_requested = os.environ.get("RIGCALIB_KERNELS", "auto").lower()
if _requested not in ("auto", "native", "numpy"):
    raise ValueError(f"RIGCALIB_KERNELS must be auto, native or numpy, got {_requested!r}")

_impl = None
if _requested in ("auto", "native"):
    try:
        from rigcalib.kernels import _native as _impl
    except ImportError:
        if _requested == "native":
            raise
if _impl is None:
    _impl = _numpy

backend: str = "numpy" if _impl is _numpy else "native"
ray_triangle_hits = _impl.ray_triangle_hits
gmm_responsibilities = _impl.gmm_responsibilities

__all__ = ["backend", "gmm_responsibilities", "ray_triangle_hits"]
