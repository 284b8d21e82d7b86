"""Backend selection for the hot kernels.

The compiled extension is preferred; setting ``FRACPREDICT_PURE_PYTHON=1``
forces the numpy fallback.
"""
import os

import numpy as np

from . import _pykernels

BACKEND = "python"
_impl = _pykernels

if os.environ.get("FRACPREDICT_PURE_PYTHON", "") in ("", "0"):
    try:
        from . import _ckernels as _impl  # noqa: F811
        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _pykernels


def ar_scan(phi, c, g, dB, x0, backend=None):
    impl = _select(backend)
    phi = np.ascontiguousarray(phi, dtype=np.float64)
    c = np.ascontiguousarray(c, dtype=np.float64)
    g = np.ascontiguousarray(g, dtype=np.float64)
    dB = np.ascontiguousarray(np.atleast_2d(dB), dtype=np.float64)
    return impl.ar_scan(phi, c, g, dB, x0)


def pole_sums(v, z, w, backend=None):
    impl = _select(backend)
    return impl.pole_sums(
        np.ascontiguousarray(v, dtype=np.float64),
        np.ascontiguousarray(z, dtype=np.float64),
        np.ascontiguousarray(w, dtype=np.float64),
    )


def _select(backend):
    if backend is None:
        return _impl
    if backend == "python":
        return _pykernels
    if backend == "cython":
        from . import _ckernels
        return _ckernels
    raise ValueError(f"unknown kernel backend {backend!r}")
