"""Covariance models, dense Gaussian linear algebra and truncated moments.

Every Gaussian process handled by the package (fBm, Wiener-type integrals
against fBm, fractional OU, the latent fOU behind fCIR) is represented on a
simulation grid ``u_0 = 0 < u_1 < ... < u_M`` by the linear recursion

    X(u_{j+1}) = phi_j * X(u_j) + c_j + g_j * (B(u_{j+1}) - B(u_j)),

driven by fractional Gaussian noise.  The value at grid point ``k`` is then
an explicit linear combination of increments, ``X(u_k) = mean_k + R[k] @ dB``,
and covariances are ``R C R^T`` with ``C`` the exact increment covariance.
The same recursion drives path simulation, so exact predictors and simulated
samples share one discretisation.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np
from scipy.linalg import lapack, solve_triangular
from scipy.special import ndtr

from .errors import ConditioningError, ConfigError, DomainError, NotPositiveDefinite

Coefficient = Union[float, Callable[[np.ndarray], np.ndarray]]

VARIANCE_CLAMP_REL = 1e-10
JITTER_REL = 1e-12


@dataclass(frozen=True)
class HurstIndex:
    value: float

    def __post_init__(self):
        v = float(self.value)
        if not (0.0 < v < 1.0) or math.isnan(v):
            raise DomainError(f"Hurst index must lie in (0, 1), got {self.value!r}")
        object.__setattr__(self, "value", v)

    def __float__(self):
        return self.value


def hurst_value(H) -> float:
    return HurstIndex(H).value if not isinstance(H, HurstIndex) else H.value


class TimeGrid:
    """Strictly increasing, non-negative time points."""

    __slots__ = ("_points",)

    def __init__(self, points: Sequence[float]):
        pts = np.array(points, dtype=np.float64).ravel()
        if pts.size == 0:
            raise DomainError("time grid must be non-empty")
        if not np.all(np.isfinite(pts)) or pts[0] < 0:
            raise DomainError("time grid points must be finite and non-negative")
        if pts.size > 1 and np.any(np.diff(pts) <= 0):
            raise DomainError("time grid must be strictly increasing")
        pts.setflags(write=False)
        self._points = pts

    @classmethod
    def uniform(cls, stop: float, n_steps: int) -> "TimeGrid":
        """``n_steps + 1`` equally spaced points on ``[0, stop]``."""
        if n_steps < 1 or stop <= 0:
            raise DomainError("uniform grid needs n_steps >= 1 and stop > 0")
        h = stop / n_steps
        pts = np.arange(n_steps + 1) * h
        pts[-1] = stop
        return cls(pts)

    @classmethod
    def observations(cls, s: float, n_obs: int) -> "TimeGrid":
        """Observation times ``t_i = i * s / N`` for ``i = 1..N``."""
        if n_obs < 1 or s <= 0:
            raise DomainError("observation grid needs N >= 1 and s > 0")
        pts = np.arange(1, n_obs + 1) * (s / n_obs)
        pts[-1] = s
        return cls(pts)

    @property
    def points(self) -> np.ndarray:
        return self._points

    @property
    def origin_included(self) -> bool:
        return bool(self._points[0] == 0.0)

    @property
    def last(self) -> float:
        return float(self._points[-1])

    def __len__(self):
        return self._points.size

    def __iter__(self):
        return iter(self._points)

    def __eq__(self, other):
        return isinstance(other, TimeGrid) and np.array_equal(self._points, other._points)

    def __hash__(self):
        return hash(self._points.tobytes())

    def __repr__(self):
        return f"TimeGrid(n={len(self)}, first={self._points[0]!r}, last={self.last!r})"

    def is_uniform(self, rtol: float = 1e-9) -> bool:
        if len(self) < 3:
            return True
        d = np.diff(self._points)
        return bool(np.all(np.abs(d - d[0]) <= rtol * d[0]))

    def step(self) -> float:
        if len(self) < 2:
            raise DomainError("grid with a single point has no step")
        return float((self._points[-1] - self._points[0]) / (len(self) - 1))

    def locate(self, times, rtol: float = 1e-9) -> np.ndarray:
        """Indices of ``times`` in the grid; every time must be a member."""
        from .errors import GridIndexError

        t = np.atleast_1d(np.asarray(times, dtype=np.float64))
        pts = self._points
        idx = np.clip(np.searchsorted(pts, t), 0, pts.size - 1)
        lower = np.clip(idx - 1, 0, pts.size - 1)
        pick = np.where(np.abs(pts[lower] - t) < np.abs(pts[idx] - t), lower, idx)
        scale = max(1.0, abs(self.last))
        bad = np.abs(pts[pick] - t) > rtol * scale
        if np.any(bad):
            raise GridIndexError(f"time {t[bad][0]!r} is not on the grid")
        return pick


class Kind(enum.Enum):
    FBM = "fbm"
    FGN_INCREMENTS = "fgn_increments"
    INTEGRAL_PROCESS = "integral_process"
    FOU = "fou"
    FCIR_LATENT = "fcir_latent"


@dataclass(frozen=True)
class CovarianceModel:
    """Joint Gaussian law of a process driven by fBm.

    ``params`` holds the kind-specific parameters:

    * ``INTEGRAL_PROCESS``: ``f`` (callable or constant integrand)
    * ``FOU``: ``k``, ``a``, ``sigma`` (constants or callables), ``a0``
    * ``FCIR_LATENT``: ``lam``, ``sigma``, ``r0``
    """

    kind: Kind
    hurst: HurstIndex
    params: dict = field(default_factory=dict, compare=False)

    @classmethod
    def fbm(cls, H):
        return cls(Kind.FBM, HurstIndex(hurst_value(H)))

    @classmethod
    def fgn(cls, H):
        return cls(Kind.FGN_INCREMENTS, HurstIndex(hurst_value(H)))

    @classmethod
    def integral(cls, H, f: Coefficient):
        return cls(Kind.INTEGRAL_PROCESS, HurstIndex(hurst_value(H)), {"f": f})

    @classmethod
    def fou(cls, H, k: Coefficient = 0.0, a: Coefficient = 0.5, sigma: Coefficient = 1.0,
            a0: float = 0.0):
        return cls(Kind.FOU, HurstIndex(hurst_value(H)),
                   {"k": k, "a": a, "sigma": sigma, "a0": float(a0)})

    @classmethod
    def fcir_latent(cls, H, lam: float, sigma: float, r0: float):
        if lam <= 0 or sigma <= 0 or r0 <= 0:
            raise DomainError("fCIR needs lam, sigma, r0 > 0")
        return cls(Kind.FCIR_LATENT, HurstIndex(hurst_value(H)),
                   {"lam": float(lam), "sigma": float(sigma), "r0": float(r0)})

    @property
    def H(self) -> float:
        return self.hurst.value

    def describe(self) -> str:
        parts = [self.kind.value, f"H={self.H!r}"]
        for key, val in self.params.items():
            parts.append(f"{key}={_describe_coef(val)}")
        return ";".join(parts)

    def fou_parameters(self):
        """(k, a, sigma, a0) of the underlying fOU recursion, if any."""
        if self.kind is Kind.FOU:
            p = self.params
            return p["k"], p["a"], p["sigma"], p["a0"]
        if self.kind is Kind.FCIR_LATENT:
            p = self.params
            return 0.0, p["lam"] / 2.0, 1.0, math.sqrt(4.0 * p["r0"] / p["sigma"] ** 2)
        raise ConfigError(f"{self.kind.value} has no fOU parameters")


def _describe_coef(val):
    if callable(val):
        return getattr(val, "__name__", "callable")
    return repr(val)


# --------------------------------------------------------------------------
# Scalar covariance functions

def fbm_cov(t, s, H):
    """Covariance ``E[B_t B_s] = (t^{2H} + s^{2H} - |t - s|^{2H}) / 2``."""
    H = hurst_value(H)
    t = np.asarray(t, dtype=np.float64)
    s = np.asarray(s, dtype=np.float64)
    if np.any(t < 0) or np.any(s < 0):
        raise DomainError("fBm covariance needs non-negative times")
    if H == 0.5:
        out = np.minimum(t, s)
        return out[()] if out.ndim == 0 else out
    h2 = 2.0 * H
    hi, lo = np.broadcast_arrays(np.maximum(t, s), np.minimum(t, s))
    # hi^{2H} - (hi - lo)^{2H} without cancellation when lo << hi
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(hi > 0, lo / np.where(hi > 0, hi, 1.0), 0.0)
        diff = np.where(ratio < 1.0, -(hi ** h2) * np.expm1(h2 * np.log1p(-ratio)), hi ** h2)
    out = 0.5 * (lo ** h2 + diff)
    out = np.where(t == s, t ** h2, out)
    return out[()] if out.ndim == 0 else out


def fgn_autocov(lag, H, dt=1.0):
    """Autocovariance of fBm increments of length ``dt`` at integer ``lag``."""
    H = hurst_value(H)
    if dt <= 0:
        raise DomainError("dt must be positive")
    k = np.abs(np.asarray(lag, dtype=np.float64))
    h2 = 2.0 * H
    out = 0.5 * dt ** h2 * (np.abs(k + 1) ** h2 - 2.0 * k ** h2 + np.abs(k - 1) ** h2)
    return out[()] if out.ndim == 0 else out


def increment_cov(grid: TimeGrid, H) -> np.ndarray:
    """Dense covariance of the increments ``B(u_{j+1}) - B(u_j)`` of ``grid``."""
    H = hurst_value(H)
    u = grid.points
    if grid.is_uniform() and u.size > 2:
        m = u.size - 1
        lags = np.arange(m)
        acf = fgn_autocov(lags, H, grid.step())
        return acf[np.abs(lags[:, None] - lags[None, :])]
    a, b = u[:-1], u[1:]
    h2 = 2.0 * H
    # Cov(B_b1 - B_a1, B_b2 - B_a2) = (|b1-a2|^{2H} + |a1-b2|^{2H} - |b1-b2|^{2H} - |a1-a2|^{2H}) / 2
    return 0.5 * (
        np.abs(b[:, None] - a[None, :]) ** h2
        + np.abs(a[:, None] - b[None, :]) ** h2
        - np.abs(b[:, None] - b[None, :]) ** h2
        - np.abs(a[:, None] - a[None, :]) ** h2
    )


# --------------------------------------------------------------------------
# Linear-map construction

def _coef_values(coef, t):
    if callable(coef):
        return np.broadcast_to(np.asarray(coef(t), dtype=np.float64), t.shape).astype(np.float64)
    return np.full(t.shape, float(coef))


def recursion_coefficients(model: CovarianceModel, sim_grid: TimeGrid):
    """Return ``(x0, phi, c, g)`` of the process recursion on ``sim_grid``.

    Constant-coefficient fOU uses the exact exponential propagator with the
    kernel evaluated at the cell midpoint; time-varying coefficients use
    Euler-Maruyama.  Integral processes use left-point Riemann-Stieltjes sums.
    """
    u = sim_grid.points
    if not sim_grid.origin_included:
        raise DomainError("simulation grid must start at t = 0")
    left = u[:-1]
    du = np.diff(u)
    m = du.size
    if model.kind is Kind.FBM:
        return 0.0, np.ones(m), np.zeros(m), np.ones(m)
    if model.kind is Kind.INTEGRAL_PROCESS:
        return 0.0, np.ones(m), np.zeros(m), _coef_values(model.params["f"], left)
    if model.kind in (Kind.FOU, Kind.FCIR_LATENT):
        k, a, sigma, a0 = model.fou_parameters()
        if not any(callable(x) for x in (k, a, sigma)):
            k, a, sigma = float(k), float(a), float(sigma)
            phi = np.exp(-a * du)
            if a != 0.0:
                c = (k / a) * (1.0 - phi)
            else:
                c = k * du
            g = sigma * np.exp(-a * du / 2.0)
            return a0, phi, c, g
        kv, av, sv = (_coef_values(x, left) for x in (k, a, sigma))
        return a0, 1.0 - av * du, kv * du, sv
    raise ConfigError(f"no recursion for {model.kind.value}")


def mean_path(model: CovarianceModel, sim_grid: TimeGrid) -> np.ndarray:
    x0, phi, c, _ = recursion_coefficients(model, sim_grid)
    out = np.empty(phi.size + 1)
    out[0] = x0
    for j in range(phi.size):
        out[j + 1] = phi[j] * out[j] + c[j]
    return out


def linear_map_rows(model: CovarianceModel, sim_grid: TimeGrid, indices) -> np.ndarray:
    """Rows ``R[k]`` with ``X(u_k) - mean_k = R[k] @ dB`` for the requested grid indices."""
    _, phi, _, g = recursion_coefficients(model, sim_grid)
    idx = np.atleast_1d(np.asarray(indices, dtype=np.int64))
    m = phi.size
    rows = np.zeros((idx.size, m))
    if np.all(phi > 0):
        logp = np.concatenate([[0.0], np.cumsum(np.log(phi))])
        j = np.arange(m)
        for r, k in enumerate(idx):
            if k == 0:
                continue
            # prod_{l=j+1}^{k-1} phi_l = exp(L[k] - L[j+1])
            rows[r, :k] = g[:k] * np.exp(logp[k] - logp[j[:k] + 1])
    else:
        for r, k in enumerate(idx):
            acc = 1.0
            for jj in range(k - 1, -1, -1):
                rows[r, jj] = g[jj] * acc
                acc *= phi[jj]
    return rows


def apply_increment_cov(sim_grid: TimeGrid, H, rows: np.ndarray, chunk: int = 64) -> np.ndarray:
    """Compute ``rows @ C`` with ``C`` the increment covariance of ``sim_grid``.

    Uniform grids use the circulant embedding of the Toeplitz matrix (FFT).
    """
    H = hurst_value(H)
    rows = np.atleast_2d(rows)
    m = len(sim_grid) - 1
    if not sim_grid.is_uniform() or m < 64:
        return rows @ increment_cov(sim_grid, H)
    acf = fgn_autocov(np.arange(m), H, sim_grid.step())
    circ = np.concatenate([acf, [0.0], acf[:0:-1]])
    lam = np.fft.rfft(circ)
    size = circ.size
    out = np.empty_like(rows)
    for start in range(0, rows.shape[0], chunk):
        block = rows[start:start + chunk]
        padded = np.zeros((block.shape[0], size))
        padded[:, :m] = block
        out[start:start + chunk] = np.fft.irfft(np.fft.rfft(padded, axis=1) * lam, n=size, axis=1)[:, :m]
    return out


def build_cov_matrix(model: CovarianceModel, grid: TimeGrid,
                     sim_grid: Optional[TimeGrid] = None) -> np.ndarray:
    """Covariance matrix of the model at the points of ``grid``.

    For ``FGN_INCREMENTS`` the entries refer to the consecutive increments of
    ``grid``.  Non-fBm kinds are assembled on ``sim_grid`` (default: a
    refinement of ``grid``, see :func:`default_sim_grid`).
    """
    H = model.H
    if model.kind is Kind.FBM:
        t = grid.points
        cov = fbm_cov(t[:, None], t[None, :], H)
        return np.atleast_2d(cov)
    if model.kind is Kind.FGN_INCREMENTS:
        return increment_cov(grid, H)
    if sim_grid is None:
        sim_grid = default_sim_grid(grid)
    idx = sim_grid.locate(grid.points)
    rows = linear_map_rows(model, sim_grid, idx)
    cov = apply_increment_cov(sim_grid, H, rows) @ rows.T
    return 0.5 * (cov + cov.T)


def model_mean(model: CovarianceModel, grid: TimeGrid, sim_grid: Optional[TimeGrid] = None):
    """Mean of the model at the points of ``grid``."""
    if model.kind in (Kind.FBM, Kind.FGN_INCREMENTS, Kind.INTEGRAL_PROCESS):
        n = len(grid) - 1 if model.kind is Kind.FGN_INCREMENTS else len(grid)
        return np.zeros(n)
    if sim_grid is None:
        sim_grid = default_sim_grid(grid)
    return mean_path(model, sim_grid)[sim_grid.locate(grid.points)]


def default_sim_grid(grid: TimeGrid, refine: int = 8) -> TimeGrid:
    """Uniform grid from 0 that contains every point of ``grid``."""
    pts = np.concatenate([[0.0], grid.points]) if grid.points[0] > 0 else grid.points
    gaps = np.diff(pts)
    if gaps.size == 0:
        raise DomainError("cannot refine a grid consisting only of t = 0")
    base = gaps.min()
    steps = pts[-1] / base
    n_steps = int(round(steps)) * refine
    sim = TimeGrid.uniform(float(pts[-1]), n_steps)
    try:
        sim.locate(grid.points)
    except Exception:
        raise ConfigError("grid points are not commensurate; pass an explicit sim_grid") from None
    return sim


# --------------------------------------------------------------------------
# Cholesky and conditioning

def cholesky_factor(matrix, jitter: bool = True) -> np.ndarray:
    """Lower Cholesky factor of a symmetric matrix.

    On failure a single jitter of ``1e-12 * trace / n`` is added to the
    diagonal and the factorisation retried; a second failure raises
    :class:`NotPositiveDefinite` carrying the 0-based failing pivot.
    """
    a = np.array(matrix, dtype=np.float64, copy=True)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DomainError("cholesky_factor needs a square matrix")
    L, pivot = _potrf(a)
    if pivot is None:
        return L
    if jitter:
        n = a.shape[0]
        eps = JITTER_REL * max(np.trace(a), 0.0) / n
        if eps > 0:
            L, pivot2 = _potrf(a + eps * np.eye(n))
            if pivot2 is None:
                return L
            pivot = pivot2
    raise NotPositiveDefinite(pivot)


def _potrf(a):
    c, info = lapack.dpotrf(a, lower=1, clean=1, overwrite_a=0)
    if info > 0:
        return None, info - 1
    if info < 0:
        raise DomainError(f"dpotrf argument {-info} invalid")
    return c, None


@dataclass(frozen=True)
class GaussianConditional:
    """Affine conditional mean ``offset + weight @ x`` and its variance."""

    weight: np.ndarray
    offset: float
    variance: float

    def predict(self, x):
        x = np.asarray(x, dtype=np.float64)
        return self.offset + x @ self.weight


def gaussian_condition(mean, cov, target_index: int, observed_indices) -> GaussianConditional:
    """Condition coordinate ``target_index`` of ``N(mean, cov)`` on ``observed_indices``."""
    mean = np.asarray(mean, dtype=np.float64)
    cov = np.asarray(cov, dtype=np.float64)
    obs = np.atleast_1d(np.asarray(observed_indices, dtype=np.int64))
    if target_index in set(obs.tolist()):
        raise DomainError("target index must not be among the observed indices")
    s22 = cov[np.ix_(obs, obs)]
    s12 = cov[target_index, obs]
    s11 = float(cov[target_index, target_index])
    if not np.any(s22):
        # deterministic observations carry no information about the target
        weight = np.zeros(obs.size)
        weight.setflags(write=False)
        return GaussianConditional(weight=weight, offset=float(mean[target_index]), variance=s11)
    L = _factor_observed(s22)
    z = solve_triangular(L, s12, lower=True)
    weight = solve_triangular(L.T, z, lower=False)
    variance = s11 - float(z @ z)
    tol = VARIANCE_CLAMP_REL * abs(s11)
    if variance < -tol:
        raise ConditioningError(int(obs[-1]), f"negative conditional variance {variance!r}")
    if variance <= tol:
        variance = 0.0
    offset = float(mean[target_index] - weight @ mean[obs])
    weight.setflags(write=False)
    return GaussianConditional(weight=weight, offset=offset, variance=variance)


def _factor_observed(s22):
    L, pivot = _potrf(s22)
    if pivot is None:
        return L
    n = s22.shape[0]
    eps = JITTER_REL * np.trace(s22) / n
    L, pivot2 = _potrf(s22 + eps * np.eye(n))
    if pivot2 is not None:
        raise ConditioningError(pivot2)
    # the jitter alone carries the failing pivot: the observation is redundant
    if L[pivot, pivot] ** 2 <= 10.0 * eps:
        raise ConditioningError(pivot)
    return L


def conditional_block(mean, cov, target_indices, observed_indices, x):
    """Conditional mean vector and covariance of several targets given ``x``."""
    mean = np.asarray(mean, dtype=np.float64)
    cov = np.asarray(cov, dtype=np.float64)
    tgt = np.atleast_1d(np.asarray(target_indices, dtype=np.int64))
    obs = np.atleast_1d(np.asarray(observed_indices, dtype=np.int64))
    if obs.size == 0:
        return mean[tgt].copy(), cov[np.ix_(tgt, tgt)].copy()
    L = _factor_observed(cov[np.ix_(obs, obs)])
    s_to = cov[np.ix_(tgt, obs)]
    z = solve_triangular(L, s_to.T, lower=True)
    w = solve_triangular(L.T, z, lower=False).T
    cmean = mean[tgt] + w @ (np.asarray(x, dtype=np.float64) - mean[obs])
    ccov = cov[np.ix_(tgt, tgt)] - z.T @ z
    return cmean, 0.5 * (ccov + ccov.T)


# --------------------------------------------------------------------------
# Truncated normal moments

def _phi(x):
    return np.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)


def truncated_normal_upper_second_moment(mu, sigma):
    """``int_0^inf u^2 N(u; mu, sigma^2) du`` in closed form."""
    mu = np.asarray(mu, dtype=np.float64)
    sigma = np.asarray(sigma, dtype=np.float64)
    if np.any(sigma <= 0):
        raise DomainError("sigma must be positive")
    z = mu / sigma
    out = (mu * mu + sigma * sigma) * ndtr(z) + mu * sigma * _phi(z)
    out = np.maximum(out, 0.0)
    return out[()] if out.ndim == 0 else out


def truncated_normal_lower_second_moment(mu, sigma):
    """``int_{-inf}^0 u^2 N(u; mu, sigma^2) du`` by reflection ``u -> -u``."""
    return truncated_normal_upper_second_moment(-np.asarray(mu, dtype=np.float64), sigma)
