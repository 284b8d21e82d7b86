"""Optimal (conditional-mean) predictors from discrete observations.

fBm, Wiener-type integrals and fOU are Gaussian, so the optimal predictor
is the affine Gaussian conditional mean.  fCIR is a signed square of a
latent fOU, and its predictor integrates the transform against the latent
conditional law.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import gammaln, roots_legendre

from . import rng
from .core import (
    CovarianceModel,
    GaussianConditional,
    TimeGrid,
    build_cov_matrix,
    cholesky_factor,
    conditional_block,
    default_sim_grid,
    gaussian_condition,
    hurst_value,
    model_mean,
    truncated_normal_lower_second_moment,
    truncated_normal_upper_second_moment,
)
from .errors import DomainError, InfeasibleOrthant, OrthantCaseRequired, UnsupportedRegime
from .paths import fcir_inverse, fcir_transform

MIN_ACCEPTANCE = 1e-6


@dataclass(frozen=True)
class FcirTransform:
    """Maps the latent Gaussian conditional law to ``E[f(A_T) | ...]``."""

    sigma: float

    def to_latent(self, r):
        r = np.asarray(r, dtype=np.float64)
        if np.any(r == 0):
            raise OrthantCaseRequired("observations contain zeros; use fcir_predict_orthant_mc")
        return fcir_inverse(r, self.sigma)

    def expectation(self, mu_hat, var_hat):
        mu_hat = np.asarray(mu_hat, dtype=np.float64)
        scale = self.sigma ** 2 / 4.0
        if var_hat <= 0:
            return fcir_transform(mu_hat, self.sigma)
        sd = math.sqrt(var_hat)
        return scale * (truncated_normal_upper_second_moment(mu_hat, sd)
                        - truncated_normal_lower_second_moment(mu_hat, sd))


@dataclass(frozen=True, eq=False)
class ExactPredictor:
    conditional: GaussianConditional
    observation_times: TimeGrid
    horizon: float
    transform: Optional[FcirTransform] = None
    model: Optional[CovarianceModel] = None
    sim_grid: Optional[TimeGrid] = None

    @property
    def weight(self):
        return self.conditional.weight

    def predict(self, x):
        """Prediction for one observation vector or an ``(n, N)`` matrix."""
        x = np.asarray(x, dtype=np.float64)
        if self.transform is None:
            return self.conditional.predict(x)
        latent = self.transform.to_latent(x)
        return self.transform.expectation(self.conditional.predict(latent),
                                          self.conditional.variance)


def _check_times(observation_times, T):
    times = observation_times if isinstance(observation_times, TimeGrid) else TimeGrid(observation_times)
    if times.points[0] <= 0:
        raise DomainError("observation times must be positive")
    if not times.last < T:
        raise DomainError("horizon T must exceed the last observation time")
    return times


def _from_model(model, times, T, sim_grid, transform=None):
    joint = TimeGrid(np.concatenate([times.points, [T]]))
    if model.kind.value != "fbm" and sim_grid is None:
        sim_grid = default_sim_grid(joint)
    cov = build_cov_matrix(model, joint, sim_grid)
    mean = model_mean(model, joint, sim_grid)
    n = len(times)
    cond = gaussian_condition(mean, cov, n, np.arange(n))
    return ExactPredictor(cond, times, float(T), transform, model, sim_grid)


def build_fbm_predictor(H, observation_times, T) -> ExactPredictor:
    times = _check_times(observation_times, T)
    return _from_model(CovarianceModel.fbm(H), times, T, None)


def build_integral_predictor(f, H, observation_times, T, sim_grid=None) -> ExactPredictor:
    times = _check_times(observation_times, T)
    return _from_model(CovarianceModel.integral(H, f), times, T, sim_grid)


def build_fou_predictor(k, a, sigma, a0, H, observation_times, T, sim_grid=None) -> ExactPredictor:
    times = _check_times(observation_times, T)
    return _from_model(CovarianceModel.fou(H, k, a, sigma, a0), times, T, sim_grid)


def build_fcir_predictor(lam, sigma, r0, H, observation_times, T, sim_grid=None) -> ExactPredictor:
    if hurst_value(H) <= 0.5:
        raise UnsupportedRegime("fCIR predictor requires H > 1/2")
    times = _check_times(observation_times, T)
    model = CovarianceModel.fcir_latent(H, lam, sigma, r0)
    return _from_model(model, times, T, sim_grid, FcirTransform(float(sigma)))


def theoretical_mse(predictor: ExactPredictor) -> float:
    """Conditional variance: the minimal achievable MSE for Gaussian targets."""
    if predictor.transform is not None:
        raise DomainError("theoretical MSE is only available for affine predictors")
    return predictor.conditional.variance


def write_weights_csv(predictor: ExactPredictor, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t_i", "weight"])
        for t, wt in zip(predictor.observation_times.points, predictor.weight):
            w.writerow([repr(float(t)), repr(float(wt))])


# --------------------------------------------------------------------------
# fOU covariance through the Gamma*_{H,T} transfer operator (H > 1/2)

def kappa_h(H) -> float:
    """Normalising constant of the fBm moving-average kernel, via log-gamma."""
    H = hurst_value(H)
    logk2 = (math.log(2.0 * H) + gammaln(1.5 - H) - gammaln(H + 0.5) - gammaln(2.0 - 2.0 * H))
    return math.exp(0.5 * logk2)


def _gl01(n):
    x, w = roots_legendre(n)
    return 0.5 * (x + 1.0), 0.5 * w


def _inner(s, t, H, a, nodes):
    """``int_s^t u^{H-1/2} (u-s)^{H-3/2} e^{-a(t-u)} du * (H - 1/2)`` for an array of ``s < t``.

    With ``w = (u - s)^{H-1/2}`` the singular factor and the ``(H - 1/2)``
    prefactor are absorbed into ``dw``.
    """
    x, wts = _gl01(nodes)
    e = H - 0.5
    W = (t - s) ** e
    w = W[:, None] * x[None, :]
    u = s[:, None] + w ** (1.0 / e)
    vals = u ** e * np.exp(-a * (t - u))
    return W * (vals @ wts)


def fou_gamma_cov(t_i, t_j, H, a=0.5, T=None, inner_nodes=64, outer_nodes=64) -> float:
    """``Cov[int_0^{t_i} e^{-a(t_i-s)} dB^H_s, int_0^{t_j} e^{-a(t_j-s)} dB^H_s]`` for H > 1/2.

    Evaluates ``int_0^T Gamma* f_i(s) Gamma* f_j(s) ds`` by nested
    Gauss-Legendre quadrature.  The outer variable is substituted
    ``s = r^{1/(2-2H)}`` to absorb the ``s^{1-2H}`` weight.
    """
    H = hurst_value(H)
    if H <= 0.5:
        raise UnsupportedRegime("Gamma* covariance requires H > 1/2")
    if T is None:
        T = max(t_i, t_j)
    if min(t_i, t_j) < 0 or max(t_i, t_j) > T:
        raise DomainError("need 0 <= t_i, t_j <= T")
    upper = min(t_i, t_j)
    if upper <= 0:
        return 0.0
    q = 1.0 / (2.0 - 2.0 * H)
    x, wts = _gl01(outer_nodes)
    R = upper ** (1.0 / q)
    s = (R * x) ** q
    Ji = _inner(s, t_i, H, a, inner_nodes)
    Jj = Ji if t_j == t_i else _inner(s, t_j, H, a, inner_nodes)
    k2 = kappa_h(H) ** 2
    return float(k2 * q * R * np.sum(wts * Ji * Jj))


# --------------------------------------------------------------------------
# fCIR with zero observations

@dataclass(frozen=True)
class OrthantEstimate:
    value: float
    se: float
    acceptance_rate: float
    n_proposals: int


def fcir_predict_orthant_mc(lam, sigma, r0, H, observation_times, observed, T, n_mc, seed,
                            sim_grid=None, max_proposals=10 ** 8) -> OrthantEstimate:
    """Monte-Carlo ``E[R_T | R_{t_i} = r_i]`` when some ``r_i`` are zero.

    Zero observations constrain the latent value to ``A_{t_i} <= 0``;
    the latent vector (target and zero coordinates) is drawn from its
    Gaussian conditional law given the non-zero coordinates and accepted
    when every constrained coordinate is non-positive.  ``n_mc`` accepted
    draws are collected.
    """
    if hurst_value(H) <= 0.5:
        raise UnsupportedRegime("fCIR predictor requires H > 1/2")
    times = _check_times(observation_times, T)
    r = np.asarray(observed, dtype=np.float64)
    if r.shape != (len(times),):
        raise DomainError("one observation per time is required")
    zero = np.flatnonzero(r == 0)
    if zero.size == 0:
        raise DomainError("no zero observations; use build_fcir_predictor")
    nonzero = np.flatnonzero(r != 0)
    model = CovarianceModel.fcir_latent(H, lam, sigma, r0)
    joint = TimeGrid(np.concatenate([times.points, [T]]))
    if sim_grid is None:
        sim_grid = default_sim_grid(joint)
    cov = build_cov_matrix(model, joint, sim_grid)
    mean = model_mean(model, joint, sim_grid)
    n = len(times)
    targets = np.concatenate([[n], zero])
    cmean, ccov = conditional_block(mean, cov, targets, nonzero, fcir_inverse(r[nonzero], sigma))
    L = cholesky_factor(ccov)
    gen = rng.stream(seed, rng.MC)
    samples = []
    accepted = 0
    proposals = 0
    block = max(int(n_mc), 1000)
    while accepted < n_mc:
        z = cmean + gen.standard_normal((block, targets.size)) @ L.T
        ok = np.all(z[:, 1:] <= 0.0, axis=1)
        proposals += block
        hit = z[ok, 0]
        samples.append(hit)
        accepted += hit.size
        rate = accepted / proposals
        if proposals >= 10 ** 6 and rate < MIN_ACCEPTANCE:
            raise InfeasibleOrthant(f"acceptance rate {rate:.3g} below {MIN_ACCEPTANCE:g}")
        if proposals >= max_proposals:
            raise InfeasibleOrthant(f"only {accepted} of {n_mc} draws accepted")
        if accepted < n_mc:
            need = (n_mc - accepted) / max(rate, 1.0 / proposals)
            block = int(min(max(1.2 * need, 1000), 10 ** 6))
    a_t = np.concatenate(samples)[:n_mc]
    vals = fcir_transform(a_t, sigma)
    se = float(vals.std(ddof=1) / math.sqrt(vals.size)) if vals.size > 1 else float("nan")
    return OrthantEstimate(float(vals.mean()), se, accepted / proposals, proposals)


__all__ = [
    "ExactPredictor",
    "FcirTransform",
    "OrthantEstimate",
    "build_fbm_predictor",
    "build_fcir_predictor",
    "build_fou_predictor",
    "build_integral_predictor",
    "fcir_predict_orthant_mc",
    "fou_gamma_cov",
    "kappa_h",
    "theoretical_mse",
    "write_weights_csv",
]
