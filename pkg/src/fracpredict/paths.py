"""Seeded Monte-Carlo simulation of fBm and processes driven by it."""
from __future__ import annotations

import csv
import io
import struct
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from . import kernels, rng
from .core import (
    CovarianceModel,
    Kind,
    TimeGrid,
    build_cov_matrix,
    cholesky_factor,
    fgn_autocov,
    hurst_value,
    increment_cov,
    model_mean,
    recursion_coefficients,
)
from .errors import DomainError, NotPositiveDefinite, SimulationError, UnsupportedRegime

EIGEN_FLOOR_REL = 1e-10


@dataclass(frozen=True, eq=False)
class PathBatch:
    grid: TimeGrid
    values: np.ndarray
    model: Union[CovarianceModel, str, None]
    seed: int
    latent: Optional[np.ndarray] = None

    def __post_init__(self):
        vals = np.array(self.values, dtype=np.float64, copy=True)
        if vals.ndim != 2 or vals.shape[1] != len(self.grid):
            raise DomainError("values must have shape (n_paths, len(grid))")
        if not np.all(np.isfinite(vals)):
            raise SimulationError("simulated paths contain non-finite values")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)
        if self.latent is not None:
            lat = np.array(self.latent, dtype=np.float64, copy=True)
            lat.setflags(write=False)
            object.__setattr__(self, "latent", lat)

    @property
    def n_paths(self) -> int:
        return self.values.shape[0]

    def model_descriptor(self) -> str:
        if isinstance(self.model, CovarianceModel):
            return self.model.describe()
        return str(self.model or "")


@dataclass(frozen=True, eq=False)
class ObservationSet:
    times: TimeGrid
    values: np.ndarray
    horizon: float

    def __post_init__(self):
        if not self.times.last < self.horizon:
            raise DomainError("observation times must end strictly before the horizon")


# --------------------------------------------------------------------------
# fGn increments

def fgn_increments(H, grid: TimeGrid, n_paths: int, seed: int, *, stream=(),
                   method: str = "auto", workers=None) -> np.ndarray:
    """Exact samples of the increments of fBm over ``grid``, shape ``(n_paths, M)``."""
    H = hurst_value(H)
    if n_paths < 1:
        raise DomainError("n_paths must be >= 1")
    m = len(grid) - 1
    if m < 1:
        return np.zeros((n_paths, 0))
    if method not in ("auto", "circulant", "cholesky"):
        raise DomainError(f"unknown sampling method {method!r}")
    keys = (rng.SIM,) + tuple(stream)
    if method in ("auto", "circulant") and grid.is_uniform():
        dt = grid.step()
        acf = fgn_autocov(np.arange(m + 1), H, dt)
        circ = np.concatenate([acf[:m], [acf[m]], acf[m - 1:0:-1]])
        lam = np.fft.fft(circ).real
        if lam.min() >= -EIGEN_FLOOR_REL * lam.max():
            scale = np.sqrt(np.clip(lam, 0.0, None) / circ.size)
            size = circ.size

            def draw(gen, n):
                z = gen.standard_normal((n, 2 * size))
                w = (z[:, :size] + 1j * z[:, size:]) * scale
                return np.fft.fft(w, axis=1)[:, :m].real

            return rng.chunked(n_paths, draw, seed, keys, workers)
        if method == "circulant":
            raise SimulationError("circulant embedding has negative eigenvalues")
    cov = increment_cov(grid, H)
    try:
        L = cholesky_factor(cov)
    except NotPositiveDefinite as exc:
        raise SimulationError(f"increment covariance not factorisable: {exc}") from exc

    def draw_chol(gen, n):
        return gen.standard_normal((n, m)) @ L.T

    return rng.chunked(n_paths, draw_chol, seed, keys, workers)


def _require_uniform_from_zero(grid):
    if not grid.origin_included or not grid.is_uniform():
        raise DomainError("grid must be equally spaced and start at 0")


# --------------------------------------------------------------------------
# samplers

def sample_fbm(H, grid: TimeGrid, n_paths: int, seed: int, *, method="auto", stream=(),
               workers=None) -> PathBatch:
    _require_uniform_from_zero(grid)
    dB = fgn_increments(H, grid, n_paths, seed, stream=stream, method=method, workers=workers)
    values = np.zeros((n_paths, len(grid)))
    np.cumsum(dB, axis=1, out=values[:, 1:])
    return PathBatch(grid, values, CovarianceModel.fbm(H), seed)


def _integrand_model(f, H, grid):
    if callable(f) or np.ndim(f) == 0:
        return CovarianceModel.integral(H, f)
    table = np.asarray(f, dtype=np.float64)
    if table.shape != (len(grid),):
        raise DomainError("tabulated integrand must have one value per grid point")
    if not np.all(np.isfinite(table)):
        raise DomainError("integrand must be bounded on the grid")
    pts = grid.points

    def tabulated(t):
        return table[np.searchsorted(pts, t)]

    return CovarianceModel.integral(H, tabulated)


def sample_process(model: CovarianceModel, grid: TimeGrid, n_paths: int, seed: int, *,
                   stream=(), method="auto", workers=None, backend=None) -> PathBatch:
    """Simulate any recursion-backed model on ``grid`` (which must start at 0)."""
    if not grid.origin_included:
        raise DomainError("simulation grid must start at t = 0")
    x0, phi, c, g = recursion_coefficients(model, grid)
    dB = fgn_increments(model.H, grid, n_paths, seed, stream=stream, method=method,
                        workers=workers)
    values = kernels.ar_scan(phi, c, g, dB, x0, backend=backend)
    return PathBatch(grid, values, model, seed)


def sample_integral_process(f, H, grid: TimeGrid, n_paths: int, seed: int, *, stream=(),
                            method="auto", workers=None) -> PathBatch:
    """Left-point Riemann-Stieltjes sums ``Z_k = sum_{j<k} f(u_j) dB_j``."""
    model = _integrand_model(f, H, grid)
    _, _, _, g = recursion_coefficients(model, grid)
    dB = fgn_increments(H, grid, n_paths, seed, stream=stream, method=method, workers=workers)
    values = np.zeros((n_paths, len(grid)))
    np.cumsum(dB * g, axis=1, out=values[:, 1:])
    return PathBatch(grid, values, model, seed)


def sample_fou(k, a, sigma, a0, H, grid: TimeGrid, n_paths: int, seed: int, *, stream=(),
               method="auto", workers=None, backend=None) -> PathBatch:
    """fOU paths ``dA = (k - a A) dt + sigma dB^H``, ``A_0 = a0``.

    Constant coefficients use the exact exponential propagator; callables
    switch to Euler-Maruyama on the grid.
    """
    model = CovarianceModel.fou(H, k, a, sigma, a0)
    return sample_process(model, grid, n_paths, seed, stream=stream, method=method,
                          workers=workers, backend=backend)


def fcir_transform(x, sigma):
    """``f(x) = sgn(x) sigma^2 x^2 / 4``."""
    x = np.asarray(x, dtype=np.float64)
    return np.sign(x) * (sigma * sigma) * x * x / 4.0


def fcir_inverse(r, sigma):
    """Signed inverse ``sgn(r) sqrt(4 |r| / sigma^2)``."""
    r = np.asarray(r, dtype=np.float64)
    return np.sign(r) * np.sqrt(4.0 * np.abs(r) / (sigma * sigma))


def sample_fcir(lam, sigma, r0, H, grid: TimeGrid, n_paths: int, seed: int, *, stream=(),
                method="auto", workers=None) -> PathBatch:
    if hurst_value(H) <= 0.5:
        raise UnsupportedRegime("fCIR pathwise solution requires H > 1/2")
    if r0 <= 0 or lam <= 0 or sigma <= 0:
        raise DomainError("fCIR needs lam, sigma, r0 > 0")
    model = CovarianceModel.fcir_latent(H, lam, sigma, r0)
    latent = sample_process(model, grid, n_paths, seed, stream=stream, method=method,
                            workers=workers)
    r = fcir_transform(latent.values, sigma)
    if grid.origin_included:
        r[:, 0] = r0
    return PathBatch(grid, r, model, seed, latent=latent.values)


class MarginalSampler:
    """Joint law of a model at fixed times, factored once for repeated draws."""

    def __init__(self, model: CovarianceModel, times: TimeGrid,
                 sim_grid: Optional[TimeGrid] = None):
        self.times = times
        self.mean = model_mean(model, times, sim_grid)
        self.factor = cholesky_factor(build_cov_matrix(model, times, sim_grid))

    def draw(self, n_paths: int, seed: int, stream=(), workers=None) -> np.ndarray:
        keys = (rng.SIM,) + tuple(stream)
        mean, L = self.mean, self.factor

        def draw(gen, n):
            return mean + gen.standard_normal((n, len(mean))) @ L.T

        return rng.chunked(n_paths, draw, seed, keys, workers)


def sample_marginal(model: CovarianceModel, times: TimeGrid, n_paths: int, seed: int, *,
                    stream=(), sim_grid: Optional[TimeGrid] = None, workers=None) -> np.ndarray:
    """Draw the joint law of the model at ``times`` directly (Cholesky).

    Exact in distribution for the process as discretised on ``sim_grid``;
    returns an ``(n_paths, len(times))`` array (no fine path is produced).
    """
    return MarginalSampler(model, times, sim_grid).draw(n_paths, seed, stream, workers)


def recover_increments(model: CovarianceModel, grid: TimeGrid, values) -> np.ndarray:
    """Invert the simulation recursion to recover the driving fBm increments."""
    x0, phi, c, g = recursion_coefficients(model, grid)
    values = np.atleast_2d(np.asarray(values, dtype=np.float64))
    if np.any(g == 0):
        raise DomainError("noise coefficient vanishes; increments are not identifiable")
    return (values[:, 1:] - phi * values[:, :-1] - c) / g


def subsample(batch: PathBatch, observation_times, horizon: float):
    """Observation matrix at ``observation_times`` and the targets at ``horizon``."""
    times = observation_times if isinstance(observation_times, TimeGrid) else TimeGrid(observation_times)
    if not times.last < horizon:
        raise DomainError("observation times must end strictly before the horizon")
    obs_idx = batch.grid.locate(times.points)
    t_idx = batch.grid.locate([horizon])[0]
    obs = ObservationSet(times, batch.values[:, obs_idx], float(horizon))
    return obs, batch.values[:, t_idx].copy()


# --------------------------------------------------------------------------
# I/O

def write_csv(batch: PathBatch, path_or_buf) -> None:
    """CSV: ``#`` comment lines (model, seed), header of grid times, one row per path."""
    own = isinstance(path_or_buf, (str, bytes)) or hasattr(path_or_buf, "__fspath__")
    fh = open(path_or_buf, "w", newline="") if own else path_or_buf
    try:
        fh.write(f"# model: {batch.model_descriptor()}\n")
        fh.write(f"# seed: {int(batch.seed)}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([repr(float(t)) for t in batch.grid.points])
        for row in batch.values:
            w.writerow([repr(float(x)) for x in row])
    finally:
        if own:
            fh.close()


def read_csv(path_or_buf) -> PathBatch:
    own = isinstance(path_or_buf, (str, bytes)) or hasattr(path_or_buf, "__fspath__")
    fh = open(path_or_buf, newline="") if own else path_or_buf
    try:
        meta = {}
        lines = []
        for line in fh:
            if line.startswith("#"):
                key, _, val = line[1:].partition(":")
                meta[key.strip()] = val.strip()
            elif line.strip():
                lines.append(line)
    finally:
        if own:
            fh.close()
    rows = list(csv.reader(io.StringIO("".join(lines))))
    grid = TimeGrid([float(x) for x in rows[0]])
    values = np.array([[float(x) for x in r] for r in rows[1:]], dtype=np.float64)
    values = values.reshape(-1, len(grid))
    return PathBatch(grid, values, meta.get("model", ""), int(meta.get("seed", 0)))


_FPB_HEADER = struct.Struct("<4sQII")


def write_binary(batch: PathBatch, path) -> None:
    """FPB1 layout (little-endian)::

        magic  b"FPB1"
        uint64 seed
        uint32 n_paths
        uint32 n_points
        float64[n_points]            grid
        float64[n_paths * n_points]  values, row-major
        uint32 descriptor length, then UTF-8 model descriptor
    """
    desc = batch.model_descriptor().encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_FPB_HEADER.pack(b"FPB1", int(batch.seed) & 0xFFFFFFFFFFFFFFFF,
                                  batch.n_paths, len(batch.grid)))
        fh.write(np.asarray(batch.grid.points, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(batch.values, dtype="<f8").tobytes())
        fh.write(struct.pack("<I", len(desc)))
        fh.write(desc)


def read_binary(path) -> PathBatch:
    with open(path, "rb") as fh:
        data = fh.read()
    magic, seed, n_paths, n_points = _FPB_HEADER.unpack_from(data, 0)
    if magic != b"FPB1":
        raise DomainError("not an FPB1 file")
    off = _FPB_HEADER.size
    grid = np.frombuffer(data, dtype="<f8", count=n_points, offset=off)
    off += 8 * n_points
    values = np.frombuffer(data, dtype="<f8", count=n_paths * n_points, offset=off)
    off += 8 * n_paths * n_points
    (dlen,) = struct.unpack_from("<I", data, off)
    desc = data[off + 4: off + 4 + dlen].decode("utf-8")
    return PathBatch(TimeGrid(grid), values.reshape(n_paths, n_points), desc, seed)
