"""Experiment harness: simulate, train, evaluate and report.

Every experiment observes a process at ``t_i = i s / N`` (``i = 1..N``) and
predicts its value at ``T``.  Test paths are simulated on one uniform grid
of step ``s / (N * sim_refinement)`` that runs to ``T``; the exact predictor
is built for the law of the process discretised on that same grid, and the
network is trained on the same law, sampled directly at the observation
times.
"""
from __future__ import annotations

import configparser
import csv
import dataclasses
import io
import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import rng
from .continuous import (
    ContinuousPredictorConfig,
    KernelVariant,
    predict_fbm_continuous,
    predict_fou_continuous,
)
from .core import CovarianceModel, TimeGrid, hurst_value
from .errors import ConfigError, DomainError, FracPredictError, tag_stage
from .exact import (
    build_fbm_predictor,
    build_fcir_predictor,
    build_fou_predictor,
    build_integral_predictor,
    theoretical_mse,
)
from .nn import MlpNetwork, TrainingConfig, mlp_forward, mlp_init, train
from .paths import (
    MarginalSampler,
    fcir_transform,
    sample_fbm,
    sample_fcir,
    sample_integral_process,
    sample_process,
)

PROCESSES = ("fbm", "integral", "fou", "fcir")
INTEGRANDS = {
    "one": 1.0,
    "u": lambda u: u,
    "sqrt": lambda u: np.sqrt(u),
    "cos": lambda u: np.cos(u),
}


@dataclass(frozen=True)
class ExperimentConfig:
    process: str = "fbm"
    H: float = 0.7
    s: float = 5.0
    T: float = 10.0
    N: int = 32
    sim_refinement: int = 1
    train: TrainingConfig = field(default_factory=TrainingConfig)
    n_test: int = 10000
    arch: tuple = (64, 64, 64)
    seed: int = 0
    k: float = 0.0
    a: float = 0.5
    sigma: float = 1.0
    a0: float = 0.0
    lam: float = 1.0
    r0: float = 1.0
    integrand: str = "one"

    def __post_init__(self):
        object.__setattr__(self, "process", str(self.process).lower())
        object.__setattr__(self, "arch", tuple(int(w) for w in self.arch))
        # one master seed drives initialisation and every stream
        object.__setattr__(self, "train", dataclasses.replace(self.train, seed=int(self.seed)))
        if self.process not in PROCESSES:
            raise ConfigError(f"unknown process {self.process!r}; choose from {PROCESSES}")
        try:
            hurst_value(self.H)
        except DomainError as err:
            raise ConfigError(str(err)) from None
        if int(self.N) < 1:
            raise ConfigError("N must be >= 1")
        if not 0 < self.s < self.T:
            raise ConfigError("need 0 < s < T")
        if int(self.n_test) < 100:
            raise ConfigError("n_test must be >= 100")
        if int(self.sim_refinement) < 1:
            raise ConfigError("sim_refinement must be >= 1")
        if not self.arch or min(self.arch) < 1:
            raise ConfigError("arch lists the hidden-layer widths, each >= 1")
        if self.integrand not in INTEGRANDS:
            raise ConfigError(f"unknown integrand {self.integrand!r}; choose from {sorted(INTEGRANDS)}")
        self.test_grid()

    @property
    def observation_times(self) -> TimeGrid:
        return TimeGrid(self.s * np.arange(1, self.N + 1) / self.N)

    def test_grid(self) -> TimeGrid:
        h = self.s / (self.N * self.sim_refinement)
        steps = self.T / h
        if abs(steps - round(steps)) > 1e-9 * steps:
            raise ConfigError(f"T={self.T} is not on the simulation grid of step {h:g}; "
                              "raise sim_refinement")
        return TimeGrid.uniform(self.T, int(round(steps)))

    def model(self) -> CovarianceModel:
        if self.process == "fbm":
            return CovarianceModel.fbm(self.H)
        if self.process == "integral":
            return CovarianceModel.integral(self.H, INTEGRANDS[self.integrand])
        if self.process == "fou":
            return CovarianceModel.fou(self.H, self.k, self.a, self.sigma, self.a0)
        return CovarianceModel.fcir_latent(self.H, self.lam, self.sigma, self.r0)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["arch"] = list(self.arch)
        return d

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)


_TRAIN_KEYS = {f.name: f.type for f in dataclasses.fields(TrainingConfig)}


def load_config(path) -> ExperimentConfig:
    """Read an INI-style key = value file.

    Keys of ``ExperimentConfig`` go in ``[experiment]`` (or before any
    section header); ``TrainingConfig`` keys go in ``[training]``.
    """
    with open(path) as fh:
        text = fh.read()
    return parse_config(text)


def parse_config(text: str) -> ExperimentConfig:
    parser = configparser.ConfigParser()
    parser.optionxform = str
    try:
        parser.read_string(text if text.lstrip().startswith("[") else "[experiment]\n" + text)
    except configparser.Error as err:
        raise ConfigError(f"cannot parse config: {err}") from None
    unknown = set(parser.sections()) - {"experiment", "training"}
    if unknown:
        raise ConfigError(f"unknown config sections {sorted(unknown)}")
    exp = dict(parser["experiment"]) if parser.has_section("experiment") else {}
    trn = dict(parser["training"]) if parser.has_section("training") else {}
    return config_from_mapping(exp, trn)


def _convert(name, value, kind):
    try:
        if kind in ("int", int):
            return int(value)
        if kind in ("float", float):
            return float(value)
        if kind in ("bool", bool):
            if str(value).lower() in ("1", "true", "yes", "on"):
                return True
            if str(value).lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(value)
        return str(value)
    except ValueError:
        raise ConfigError(f"bad value {value!r} for {name}") from None


def config_from_mapping(exp: dict, trn: Optional[dict] = None) -> ExperimentConfig:
    kinds = {f.name: f.type for f in dataclasses.fields(ExperimentConfig)}
    kwargs = {}
    for key, value in exp.items():
        if key not in kinds or key == "train":
            raise ConfigError(f"unknown experiment key {key!r}")
        if key == "arch":
            kwargs[key] = tuple(_convert("arch", w, int) for w in str(value).replace(",", " ").split())
        else:
            kwargs[key] = _convert(key, value, kinds[key])
    tkw = {}
    for key, value in (trn or {}).items():
        if key not in _TRAIN_KEYS:
            raise ConfigError(f"unknown training key {key!r}")
        tkw[key] = _convert(key, value, _TRAIN_KEYS[key])
    if tkw:
        kwargs["train"] = TrainingConfig(**tkw)
    return ExperimentConfig(**kwargs)


# --------------------------------------------------------------------------
# metrics and reports

def evaluate_me_mse(predictions, targets):
    """``(ME, MSE, SE of MSE)`` with errors ``target - prediction``."""
    p = np.asarray(predictions, dtype=np.float64).reshape(-1)
    t = np.asarray(targets, dtype=np.float64).reshape(-1)
    if p.size == 0 or p.size != t.size:
        raise DomainError("predictions and targets must be non-empty and of equal length")
    e = t - p
    sq = e * e
    se = float(sq.std(ddof=1) / math.sqrt(sq.size)) if sq.size > 1 else 0.0
    return float(e.mean()), float(sq.mean()), se


@dataclass
class MethodResult:
    method: str
    me: float
    mse: float
    se_mse: float
    se_me: float
    errors: np.ndarray = field(repr=False)

    @classmethod
    def from_predictions(cls, method, predictions, targets):
        me, mse, se = evaluate_me_mse(predictions, targets)
        e = np.asarray(targets, dtype=np.float64) - np.asarray(predictions, dtype=np.float64)
        se_me = float(e.std(ddof=1) / math.sqrt(e.size)) if e.size > 1 else 0.0
        return cls(method, me, mse, se, se_me, e)


@dataclass
class PredictionReport:
    config: ExperimentConfig
    rows: List[MethodResult]
    theoretical_mse: Optional[float]
    wall_time: float
    network: Optional[MlpNetwork] = field(default=None, repr=False)
    loss_trace: Optional[object] = field(default=None, repr=False)

    def row(self, method) -> MethodResult:
        for r in self.rows:
            if r.method == method:
                return r
        raise KeyError(method)

    @property
    def methods(self):
        return [r.method for r in self.rows]

    def write_csv(self, path_or_buf) -> None:
        lines = [f"# config: {json.dumps(self.config.to_dict(), sort_keys=True)}",
                 f"# wall_time_s: {self.wall_time:.3f}"]
        body = io.StringIO()
        w = csv.writer(body, lineterminator="\n")
        w.writerow(["method", "ME", "MSE", "SE_MSE", "SE_ME", "theoretical_mse"])
        theo = "" if self.theoretical_mse is None else repr(self.theoretical_mse)
        for r in self.rows:
            w.writerow([r.method, repr(r.me), repr(r.mse), repr(r.se_mse), repr(r.se_me), theo])
        _emit("\n".join(lines) + "\n" + body.getvalue(), path_or_buf)


def _emit(text, path_or_buf):
    if hasattr(path_or_buf, "write"):
        path_or_buf.write(text)
    else:
        with open(path_or_buf, "w", newline="") as fh:
            fh.write(text)


def data_section(text: str) -> str:
    """CSV text without its ``#`` comment lines."""
    return "".join(line for line in text.splitlines(keepends=True) if not line.startswith("#"))


# --------------------------------------------------------------------------
# experiment pipeline

def _stage(name, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except FracPredictError as err:
        raise tag_stage(err, name)


def simulate_test_paths(config: ExperimentConfig, grid: TimeGrid, n_paths, seed):
    H, keys = config.H, (rng.TEST,)
    if config.process == "fbm":
        return sample_fbm(H, grid, n_paths, seed, stream=keys)
    if config.process == "integral":
        return sample_integral_process(INTEGRANDS[config.integrand], H, grid, n_paths, seed,
                                       stream=keys)
    if config.process == "fou":
        return sample_process(config.model(), grid, n_paths, seed, stream=keys)
    return sample_fcir(config.lam, config.sigma, config.r0, H, grid, n_paths, seed, stream=keys)


def build_exact_predictor(config: ExperimentConfig, grid: TimeGrid):
    obs, T = config.observation_times, config.T
    if config.process == "fbm":
        return build_fbm_predictor(config.H, obs, T)
    if config.process == "integral":
        return build_integral_predictor(INTEGRANDS[config.integrand], config.H, obs, T, grid)
    if config.process == "fou":
        return build_fou_predictor(config.k, config.a, config.sigma, config.a0, config.H,
                                   obs, T, grid)
    return build_fcir_predictor(config.lam, config.sigma, config.r0, config.H, obs, T, grid)


def train_network(config: ExperimentConfig, grid: TimeGrid):
    joint = TimeGrid(np.concatenate([config.observation_times.points, [config.T]]))
    sim = None if config.process == "fbm" else grid
    sampler = MarginalSampler(config.model(), joint, sim)
    tc = config.train

    def batches(i):
        Z = sampler.draw(tc.batch_size, tc.seed, (rng.TRAIN, i))
        if config.process == "fcir":
            Z = fcir_transform(Z, config.sigma)
        return Z[:, :-1], Z[:, -1]

    widths = (config.N,) + config.arch + (1,)
    net = mlp_init(widths, tc.seed)
    return train(net, tc, batches)


def _continuous_predictions(config: ExperimentConfig, grid: TimeGrid, values):
    n_obs = int(round(config.s / grid.step())) + 1
    if config.process not in ("fbm", "fou") or n_obs < 16:
        return None
    past = TimeGrid(grid.points[:n_obs])
    cc = ContinuousPredictorConfig(config.s, config.T, config.H, decay=config.a)
    if config.process == "fbm":
        return predict_fbm_continuous(past, values[:, :n_obs], cc)
    if config.a0 != 0 and np.any(values[:, 0] != config.a0):
        raise DomainError("fOU test paths must start at a0")
    return predict_fou_continuous(past, values[:, :n_obs], cc, k=config.k, sigma=config.sigma)


def run_experiment(config: ExperimentConfig, methods=("NN", "EXACT", "CONTINUOUS")) -> PredictionReport:
    """Train, build the exact predictor and score every method on common test paths."""
    start = time.perf_counter()
    grid = _stage("config", config.test_grid)
    net = trace = None
    if "NN" in methods:
        net, trace = _stage("train", train_network, config, grid)
    exact = _stage("exact", build_exact_predictor, config, grid) if "EXACT" in methods else None
    test = _stage("simulate", simulate_test_paths, config, grid, config.n_test, config.seed)
    obs_idx = grid.locate(config.observation_times.points)
    t_idx = int(grid.locate([config.T])[0])
    X = test.values[:, obs_idx]
    y = test.values[:, t_idx]
    rows = []
    if net is not None:
        rows.append(MethodResult.from_predictions("NN", mlp_forward(net, X), y))
    if exact is not None:
        rows.append(MethodResult.from_predictions("EXACT", _stage("evaluate", exact.predict, X), y))
    if "CONTINUOUS" in methods:
        cont = _stage("continuous", _continuous_predictions, config, grid, test.values)
        if cont is not None:
            rows.append(MethodResult.from_predictions("CONTINUOUS", cont, y))
    theo = None
    if exact is not None and exact.transform is None:
        theo = theoretical_mse(exact)
    return PredictionReport(config, rows, theo, time.perf_counter() - start, net, trace)


# --------------------------------------------------------------------------
# table sweeps

TEMPLATES = {
    "TABLE1": "fbm",
    "TABLE2": "fbm",
    "TABLE3": "fou",
    "TABLE4": "fou",
}
H_DESK = (0.1, 0.3, 0.5, 0.7, 0.9)
H_PAPER = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9)
T_AXIS = tuple(5.5 + 0.5 * i for i in range(10))

SCALES = {
    # N values, n_batches, batch_size, hidden widths, n_test
    "desk": dict(N=(16, 32, 64), N_fixed=32, n_batches=300, batch_size=1024,
                 arch=(64, 64, 64), n_test=10000),
    "paper": dict(N=tuple(2 ** p for p in range(9, 17)), N_fixed=4096, n_batches=3000,
                  batch_size=4096, arch=(64, 64, 64), n_test=10000),
}


def template_cells(template: str, scale: str = "desk") -> List[dict]:
    """Cell coordinates of a sweep; each entry holds ``s, H, N, T``."""
    template = template.upper()
    if template not in TEMPLATES:
        raise ConfigError(f"unknown template {template!r}")
    if scale not in SCALES:
        raise ConfigError(f"unknown scale {scale!r}")
    sc = SCALES[scale]
    if template in ("TABLE1", "TABLE3"):
        return [dict(s=s, H=H, N=N, T=10.0) for s in (2.0, 5.0, 8.0) for N in sc["N"] for H in H_DESK]
    hs = H_DESK if scale == "desk" else H_PAPER
    return [dict(s=5.0, H=H, N=sc["N_fixed"], T=T) for T in T_AXIS for H in hs]


def cell_seed(seed, template, index) -> int:
    tag = int(template[-1])
    return int(np.random.SeedSequence([int(seed), tag, int(index)]).generate_state(1, np.uint64)[0])


def _cell_config(template, cell, scale, seed, index):
    sc = SCALES[scale]
    # refine until T lands on the test grid (the T axis moves in steps of 0.5)
    refinement = 1
    while True:
        h = cell["s"] / (cell["N"] * refinement)
        steps = cell["T"] / h
        if abs(steps - round(steps)) < 1e-9 * steps:
            break
        refinement += 1
    tc = TrainingConfig(n_batches=sc["n_batches"], batch_size=sc["batch_size"])
    return ExperimentConfig(process=TEMPLATES[template], H=cell["H"], s=cell["s"], T=cell["T"],
                            N=cell["N"], sim_refinement=refinement, train=tc,
                            n_test=sc["n_test"], arch=sc["arch"],
                            seed=cell_seed(seed, template, index))


SWEEP_COLUMNS = ["s", "H", "N", "T", "nn_ME", "nn_MSE", "nn_SE_MSE", "nn_SE_ME",
                 "exact_ME", "exact_MSE", "exact_SE_MSE", "exact_SE_ME", "theoretical_MSE", "status"]


def _run_cell(template, cell, scale, seed, index):
    coords = [cell["s"], cell["H"], cell["N"], cell["T"]]
    try:
        report = run_experiment(_cell_config(template, cell, scale, seed, index),
                                methods=("NN", "EXACT"))
    except FracPredictError as err:
        return coords + [""] * 9 + [f"error: {type(err).__name__}: {err}"]
    nn, ex = report.row("NN"), report.row("EXACT")
    theo = "" if report.theoretical_mse is None else repr(report.theoretical_mse)
    return coords + [repr(nn.me), repr(nn.mse), repr(nn.se_mse), repr(nn.se_me),
                     repr(ex.me), repr(ex.mse), repr(ex.se_mse), repr(ex.se_me), theo, "ok"]


def run_table_sweep(template: str, scale: str = "desk", seed: int = 0, out=None,
                    cells: Optional[Sequence[dict]] = None, workers=None) -> str:
    """Run every cell of a table template and return (and optionally write) the CSV text.

    Cells are independent and seeded from ``(seed, template, cell index)``.
    """
    template = template.upper()
    all_cells = template_cells(template, scale) if cells is None else list(cells)
    start = time.perf_counter()
    n_workers = min(rng.worker_count(workers), max(1, len(all_cells)))
    args = [(template, c, scale, seed, i) for i, c in enumerate(all_cells)]
    if n_workers <= 1:
        rows = [_run_cell(*a) for a in args]
    else:
        with ThreadPoolExecutor(n_workers) as pool:
            rows = list(pool.map(lambda a: _run_cell(*a), args))
    sc = SCALES[scale]
    header = {"template": template, "scale": scale, "seed": int(seed),
              "n_batches": sc["n_batches"], "batch_size": sc["batch_size"],
              "arch": list(sc["arch"]), "n_test": sc["n_test"]}
    body = io.StringIO()
    w = csv.writer(body, lineterminator="\n")
    w.writerow(SWEEP_COLUMNS)
    for r in rows:
        w.writerow(r)
    text = (f"# config: {json.dumps(header, sort_keys=True)}\n"
            f"# wall_time_s: {time.perf_counter() - start:.3f}\n" + body.getvalue())
    if out is not None:
        _emit(text, out)
    return text


def read_sweep(text: str) -> List[dict]:
    rows = list(csv.DictReader(io.StringIO(data_section(text))))
    return rows


# --------------------------------------------------------------------------
# discrete to continuous convergence

@dataclass
class ConvergenceResult:
    process: str
    H: float
    variant: Optional[KernelVariant]
    N: np.ndarray
    discrete: np.ndarray
    continuous: float

    @property
    def gap(self) -> np.ndarray:
        return np.abs(self.discrete - self.continuous)

    def write_csv(self, path_or_buf, config_echo=None) -> None:
        echo = {"process": self.process, "H": self.H,
                "variant": None if self.variant is None else self.variant.value}
        echo.update(config_echo or {})
        body = io.StringIO()
        w = csv.writer(body, lineterminator="\n")
        w.writerow(["N", "discrete_prediction", "continuous_prediction", "gap"])
        for n, d, g in zip(self.N, self.discrete, self.gap):
            w.writerow([int(n), repr(float(d)), repr(float(self.continuous)), repr(float(g))])
        _emit(f"# config: {json.dumps(echo, sort_keys=True)}\n" + body.getvalue(), path_or_buf)


def run_convergence_study(process, H, s, T, N_list, seed, fine_steps=2 ** 14,
                          variant=KernelVariant.Z_ARGUMENT, decay=0.5) -> ConvergenceResult:
    """Discrete exact predictors on nested subsamples of one fine path vs the continuous one.

    The path is simulated on ``[0, s]`` with ``fine_steps`` steps; every
    ``N`` in ``N_list`` must divide ``fine_steps``.  The fOU case uses
    ``dA = -decay A dt + dB``, ``A_0 = 0``.
    """
    process = str(process).lower()
    if process not in ("fbm", "fou"):
        raise ConfigError("convergence studies cover fbm and fou")
    N_list = [int(n) for n in N_list]
    if any(b <= a for a, b in zip(N_list, N_list[1:])):
        raise ConfigError("N_list must be increasing")
    if any(fine_steps % n for n in N_list):
        raise ConfigError("every N must divide fine_steps")
    variant = KernelVariant(variant) if not isinstance(variant, KernelVariant) else variant
    h = s / fine_steps
    total = T / h
    if abs(total - round(total)) > 1e-9 * total:
        raise ConfigError("T must be a multiple of the fine step s / fine_steps")
    full = TimeGrid.uniform(T, int(round(total)))
    past = TimeGrid(full.points[:fine_steps + 1])
    cc = ContinuousPredictorConfig(s, T, H, fou_kernel_variant=variant, decay=decay)
    if process == "fbm":
        path = sample_fbm(H, past, 1, seed, stream=(rng.CONVERGENCE,)).values[0]
        cont = float(predict_fbm_continuous(past, path, cc))
    else:
        model = CovarianceModel.fou(H, 0.0, decay, 1.0, 0.0)
        path = sample_process(model, past, 1, seed, stream=(rng.CONVERGENCE,)).values[0]
        cont = float(predict_fou_continuous(past, path, cc))
    disc = []
    for n in N_list:
        idx = np.arange(1, n + 1) * (fine_steps // n)
        times = past.points[idx]
        if process == "fbm":
            pred = build_fbm_predictor(H, times, T)
        else:
            pred = build_fou_predictor(0.0, decay, 1.0, 0.0, H, times, T, full)
        disc.append(float(pred.predict(path[idx])))
    return ConvergenceResult(process, float(H), variant if process == "fou" else None,
                             np.array(N_list), np.array(disc), cont)


# --------------------------------------------------------------------------
# exact vs network over the horizon

@dataclass
class ComparisonRow:
    T: float
    mse_exact: float
    se_exact: float
    mse_nn: float
    se_nn: float
    difference: float
    se_difference: float


def compare_exact_vs_nn(config: ExperimentConfig, T_values: Sequence[float]) -> List[ComparisonRow]:
    """Paired comparison on common test paths; ``difference = mse_nn - mse_exact``."""
    out = []
    for T in T_values:
        rep = run_experiment(config.replace(T=float(T)), methods=("NN", "EXACT"))
        nn, ex = rep.row("NN"), rep.row("EXACT")
        d = nn.errors ** 2 - ex.errors ** 2
        out.append(ComparisonRow(float(T), ex.mse, ex.se_mse, nn.mse, nn.se_mse,
                                 float(d.mean()), float(d.std(ddof=1) / math.sqrt(d.size))))
    return out


def write_comparison_csv(rows: Sequence[ComparisonRow], path_or_buf, config=None) -> None:
    body = io.StringIO()
    w = csv.writer(body, lineterminator="\n")
    w.writerow(["T", "mse_exact", "se_exact", "mse_nn", "se_nn", "difference", "se_difference"])
    for r in rows:
        w.writerow([repr(getattr(r, f.name)) for f in dataclasses.fields(r)])
    echo = json.dumps(config.to_dict() if config is not None else {}, sort_keys=True)
    _emit(f"# config: {echo}\n" + body.getvalue(), path_or_buf)


__all__ = [
    "ComparisonRow",
    "build_exact_predictor",
    "simulate_test_paths",
    "train_network",
    "ConvergenceResult",
    "ExperimentConfig",
    "MethodResult",
    "PredictionReport",
    "compare_exact_vs_nn",
    "config_from_mapping",
    "data_section",
    "evaluate_me_mse",
    "load_config",
    "parse_config",
    "read_sweep",
    "run_convergence_study",
    "run_experiment",
    "run_table_sweep",
    "template_cells",
    "write_comparison_csv",
]
