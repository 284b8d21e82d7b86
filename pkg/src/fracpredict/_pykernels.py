"""Pure numpy implementations of the hot kernels.

These mirror ``_ckernels.pyx`` one for one and are used when the compiled
extension is unavailable or ``FRACPREDICT_PURE_PYTHON`` is set.
"""
import numpy as np


def ar_scan(phi, c, g, dB, x0):
    """Run ``x[k+1] = phi[k] * x[k] + c[k] + g[k] * dB[:, k]`` for every path.

    Returns an array of shape ``(n_paths, M + 1)`` whose first column is ``x0``.
    """
    dB = np.asarray(dB, dtype=np.float64)
    n, m = dB.shape
    out = np.empty((n, m + 1))
    out[:, 0] = x0
    x = out[:, 0].copy()
    for k in range(m):
        x = phi[k] * x + c[k] + g[k] * dB[:, k]
        out[:, k + 1] = x
    return out


def pole_sums(v, z, w, chunk=2048):
    """``out[i] = sum_k w[k] / (z[k] - v[i])``."""
    v = np.asarray(v, dtype=np.float64)
    out = np.empty(v.shape[0])
    for start in range(0, v.shape[0], chunk):
        vv = v[start:start + chunk]
        out[start:start + chunk] = (w[None, :] / (z[None, :] - vv[:, None])).sum(axis=1)
    return out
