"""Predictors from a continuously observed past.

For fBm the conditional mean is ``B_s + int_0^s Psi(s, T, v) dB_v`` with the
weight

    Psi(s, T, v) = sin((H - 1/2) pi) / pi * v^(1/2-H) (s-v)^(1/2-H)
                   * int_s^T z^(H-1/2) (z-s)^(H-1/2) / (z - v) dz.

The fOU analogue carries an exponential damping factor.  The inner integral
is evaluated by Gauss-Jacobi quadrature, which absorbs the ``(z-s)^(H-1/2)``
endpoint factor exactly.  The pole at ``z = v`` sits just left of the
interval when ``v`` approaches ``s``; it is split off and integrated in
closed form so that the remaining integrand is smooth for every ``v``.
"""
from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import hyp2f1, roots_jacobi

from . import kernels
from .core import CovarianceModel, TimeGrid, hurst_value
from .errors import ConfigError, DomainError
from .paths import recover_increments


class KernelVariant(enum.Enum):
    """Placement of the exponential factor in the fOU weight.

    ``AS_WRITTEN`` uses ``exp(-a (T - v))``, which is constant in the
    integration variable.  ``Z_ARGUMENT`` uses ``exp(-a (T - z))`` inside the
    integral; this is the form obtained by integrating the fBm weight against
    the fOU propagator.
    """

    AS_WRITTEN = "as_written"
    Z_ARGUMENT = "z_argument"


@dataclass(frozen=True)
class ContinuousPredictorConfig:
    s: float
    T: float
    H: float
    inner_nodes: int = 64
    outer_rule: str = "midpoint"
    fou_kernel_variant: KernelVariant = KernelVariant.Z_ARGUMENT
    decay: float = 0.5

    def __post_init__(self):
        object.__setattr__(self, "H", hurst_value(self.H))
        if not 0 < self.s < self.T:
            raise ConfigError("need 0 < s < T")
        if int(self.inner_nodes) < 8:
            raise ConfigError("inner_nodes must be at least 8")
        if self.outer_rule != "midpoint":
            raise ConfigError(f"unsupported outer rule {self.outer_rule!r}")
        if not isinstance(self.fou_kernel_variant, KernelVariant):
            try:
                variant = KernelVariant(str(self.fou_kernel_variant).lower())
            except ValueError:
                raise ConfigError(f"unknown kernel variant {self.fou_kernel_variant!r}") from None
            object.__setattr__(self, "fou_kernel_variant", variant)


@lru_cache(maxsize=32)
def _jacobi(n, beta):
    # weight (1 + x)^beta on [-1, 1]; x = -1 maps to z = s
    x, w = roots_jacobi(int(n), 0.0, beta)
    return x, w


def _pole_integral(d, L, beta):
    """``int_0^L y^beta / (y + d) dy`` for ``d > 0``."""
    X = L / d
    return d ** beta * X ** (beta + 1.0) / (beta + 1.0) * hyp2f1(1.0, beta + 1.0, beta + 2.0, -X)


def _inner_integral(v, s, T, beta, n, damping=None, backend=None):
    """``int_s^T (z-s)^beta g(z) / (z - v) dz`` with ``g(z) = z^beta [e^{-damping (T-z)}]``."""
    x, w = _jacobi(n, beta)
    half = 0.5 * (T - s)
    z = s + half * (x + 1.0)
    w = w * half ** (beta + 1.0)

    def g(u):
        out = u ** beta
        if damping is not None:
            out = out * np.exp(-damping * (T - u))
        return out

    # g(z)/(z-v) = (g(z) - g(v))/(z-v) + g(v)/(z-v)
    gv = g(v)
    smooth = kernels.pole_sums(v, z, w * g(z), backend) - gv * kernels.pole_sums(v, z, w, backend)
    return smooth + gv * _pole_integral(s - v, T - s, beta)


def _psi(s, T, v, H, inner_nodes, damping=None, outer_factor=None, backend=None):
    H = hurst_value(H)
    if not 0 < s < T:
        raise DomainError("need 0 < s < T")
    v_arr = np.atleast_1d(np.asarray(v, dtype=np.float64))
    if np.any(v_arr < 0) or np.any(v_arr > s):
        raise DomainError("v must lie in [0, s]")
    out = np.zeros(v_arr.shape)
    inside = (v_arr > 0) & (v_arr < s)
    if H != 0.5 and np.any(inside):
        vi = v_arr[inside]
        beta = H - 0.5
        pref = math.sin(beta * math.pi) / math.pi * vi ** (-beta) * (s - vi) ** (-beta)
        vals = pref * _inner_integral(vi, s, T, beta, inner_nodes, damping, backend)
        if outer_factor is not None:
            vals = vals * outer_factor(vi)
        out[inside] = vals
    return out if np.ndim(v) else float(out[0])


def psi_fbm(s, T, v, H, inner_nodes=64, backend=None):
    """fBm continuous-observation weight; zero at ``v`` in ``{0, s}`` and for H = 1/2."""
    return _psi(s, T, v, H, inner_nodes, backend=backend)


def psi_fou(s, T, v, H, variant=KernelVariant.Z_ARGUMENT, inner_nodes=64, decay=0.5, backend=None):
    """fOU continuous-observation weight for the decay rate ``decay``."""
    variant = KernelVariant(variant) if not isinstance(variant, KernelVariant) else variant
    if variant is KernelVariant.AS_WRITTEN:
        return _psi(s, T, v, H, inner_nodes, outer_factor=lambda u: np.exp(-decay * (T - u)),
                    backend=backend)
    return _psi(s, T, v, H, inner_nodes, damping=decay, backend=backend)


def _fine_path(times, values, s):
    grid = times if isinstance(times, TimeGrid) else TimeGrid(times)
    t = grid.points
    if len(t) < 16:
        raise DomainError("the observed path needs at least 16 points")
    if abs(t[0]) > 1e-12 or abs(t[-1] - s) > 1e-9 * max(1.0, s):
        raise DomainError("the observed path must cover [0, s] exactly")
    values = np.asarray(values, dtype=np.float64)
    if values.shape[-1] != len(t):
        raise DomainError("values do not match the time grid")
    return grid, values


def predict_fbm_continuous(times, values, config: ContinuousPredictorConfig):
    """``B_s + sum_k Psi(s, T, m_k) (B_{v_{k+1}} - B_{v_k})`` with midpoints ``m_k``.

    ``values`` is one path or an ``(n_paths, len(times))`` array.
    """
    grid, values = _fine_path(times, values, config.s)
    t = grid.points
    w = psi_fbm(config.s, config.T, 0.5 * (t[1:] + t[:-1]), config.H, config.inner_nodes)
    return values[..., -1] + np.diff(values, axis=-1) @ w


def predict_fou_continuous(times, values, config: ContinuousPredictorConfig, k=0.0, sigma=1.0):
    """fOU conditional mean from a finely observed path of ``A`` on ``[0, s]``.

    The driving fBm increments are recovered by inverting the simulation
    recursion of the model ``dA = (k - decay * A) dt + sigma dB``.
    """
    grid, values = _fine_path(times, values, config.s)
    t = grid.points
    a = config.decay
    paths = np.atleast_2d(values)
    model = CovarianceModel.fou(config.H, k, a, sigma, float(paths[0, 0]))
    dB = recover_increments(model, grid, paths)
    w = psi_fou(config.s, config.T, 0.5 * (t[1:] + t[:-1]), config.H,
                config.fou_kernel_variant, config.inner_nodes, a)
    damp = math.exp(-a * (config.T - config.s))
    drift = k / a * (1.0 - damp) if a != 0 else k * (config.T - config.s)
    out = paths[:, -1] * damp + drift + sigma * (dB @ w)
    return out if np.ndim(values) > 1 else float(out[0])


def write_psi_csv(v, psi, path) -> None:
    """Tabulate a weight function as CSV columns ``v, psi``."""
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["v", "psi"])
        for a, b in zip(np.asarray(v, dtype=float), np.asarray(psi, dtype=float)):
            wr.writerow([repr(float(a)), repr(float(b))])


__all__ = [
    "ContinuousPredictorConfig",
    "KernelVariant",
    "predict_fbm_continuous",
    "predict_fou_continuous",
    "psi_fbm",
    "psi_fou",
    "write_psi_csv",
]
