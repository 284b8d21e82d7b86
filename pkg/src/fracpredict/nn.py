"""Fully connected ReLU regression networks.

A network maps ``x`` to ``A_L relu(... relu(A_1 x + b_1) ...) + b_L`` with a
scalar output.  Inputs are standardised with stored per-coordinate
statistics and the output is rescaled with stored target statistics, so the
trainable part always sees unit-scale data.  ``truncation_beta`` clamps the
final output.
"""
from __future__ import annotations

import csv
import math
import struct
from dataclasses import dataclass, field
from typing import Callable, List, Optional

import numpy as np

from . import rng
from .errors import ConfigError, DomainError, TrainingDivergence

MAGIC = b"FPNN1"


@dataclass(eq=False)
class MlpNetwork:
    layer_widths: tuple
    weights: List[np.ndarray]
    biases: List[np.ndarray]
    truncation_beta: Optional[float] = None
    input_mean: Optional[np.ndarray] = None
    input_scale: Optional[np.ndarray] = None
    output_mean: float = 0.0
    output_scale: float = 1.0

    def __post_init__(self):
        self.layer_widths = tuple(int(w) for w in self.layer_widths)
        widths = self.layer_widths
        if len(widths) < 2 or min(widths) < 1:
            raise ConfigError("need at least an input and an output layer, all widths >= 1")
        if len(self.weights) != len(widths) - 1 or len(self.biases) != len(widths) - 1:
            raise ConfigError("one weight matrix and bias vector per layer")
        self.weights = [np.asarray(A, dtype=np.float64) for A in self.weights]
        self.biases = [np.asarray(b, dtype=np.float64) for b in self.biases]
        for l, (A, b) in enumerate(zip(self.weights, self.biases), start=1):
            if A.shape != (widths[l], widths[l - 1]) or b.shape != (widths[l],):
                raise ConfigError(f"layer {l} has shape {A.shape}/{b.shape}, "
                                  f"expected {(widths[l], widths[l - 1])}/{(widths[l],)}")
        if self.input_mean is None:
            self.input_mean = np.zeros(widths[0])
        if self.input_scale is None:
            self.input_scale = np.ones(widths[0])
        self.input_mean = np.asarray(self.input_mean, dtype=np.float64)
        self.input_scale = np.asarray(self.input_scale, dtype=np.float64)
        if self.truncation_beta is not None and not self.truncation_beta > 0:
            raise ConfigError("truncation_beta must be positive")

    @property
    def depth(self) -> int:
        return len(self.weights)

    def copy(self) -> "MlpNetwork":
        return MlpNetwork(self.layer_widths, [A.copy() for A in self.weights],
                          [b.copy() for b in self.biases], self.truncation_beta,
                          self.input_mean.copy(), self.input_scale.copy(),
                          self.output_mean, self.output_scale)

    def parameters(self):
        """Flat list ``[A_1, b_1, ..., A_L, b_L]`` of the trainable arrays (views)."""
        out = []
        for A, b in zip(self.weights, self.biases):
            out.extend([A, b])
        return out


def mlp_init(layer_widths, seed) -> MlpNetwork:
    """He-initialised network: ``A_l ~ N(0, 2 / fan_in)``, zero biases."""
    widths = tuple(int(w) for w in layer_widths)
    if len(widths) < 2 or min(widths) < 1:
        raise ConfigError("layer widths must be >= 1 with at least two layers")
    if widths[-1] != 1:
        raise ConfigError("networks have a scalar output (last width must be 1)")
    gen = rng.stream(seed, rng.INIT)
    weights = [gen.standard_normal((widths[l], widths[l - 1])) * math.sqrt(2.0 / widths[l - 1])
               for l in range(1, len(widths))]
    biases = [np.zeros(w) for w in widths[1:]]
    return MlpNetwork(widths, weights, biases)


def truncate(u, beta):
    """Clamp to ``[-beta, beta]``."""
    if not beta > 0:
        raise DomainError("beta must be positive")
    return np.clip(u, -beta, beta) if np.ndim(u) else float(min(beta, max(-beta, u)))


def _as_batch(net, x):
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    X = x[None, :] if single else x
    if X.ndim != 2 or X.shape[1] != net.layer_widths[0]:
        raise DomainError(f"expected inputs of length {net.layer_widths[0]}, got shape {x.shape}")
    return X, single


def _forward_trace(net, X):
    h = (X - net.input_mean) / net.input_scale
    acts = [h]
    for l, (A, b) in enumerate(zip(net.weights, net.biases)):
        z = h @ A.T + b
        if l < net.depth - 1:
            h = np.maximum(z, 0.0)
            acts.append(h)
        else:
            h = z
    raw = net.output_mean + net.output_scale * h[:, 0]
    return acts, raw


def mlp_forward(net: MlpNetwork, x, truncated=True):
    """Network output for one input vector or an ``(n, lambda_0)`` batch."""
    X, single = _as_batch(net, x)
    _, out = _forward_trace(net, X)
    if truncated and net.truncation_beta is not None:
        out = np.clip(out, -net.truncation_beta, net.truncation_beta)
    return float(out[0]) if single else out


def _backward(net, acts, dout):
    """Parameter gradients given ``d loss / d output`` per sample."""
    grads = [None] * (2 * net.depth)
    delta = (dout * net.output_scale)[:, None]
    for l in range(net.depth - 1, -1, -1):
        grads[2 * l] = delta.T @ acts[l]
        grads[2 * l + 1] = delta.sum(axis=0)
        if l > 0:
            delta = (delta @ net.weights[l]) * (acts[l] > 0)
    return grads


def mlp_gradient(net: MlpNetwork, x, y_target):
    """Gradient of ``0.5 (y(x) - y)^2`` as ``[dA_1, db_1, ..., dA_L, db_L]``.

    Truncation acts as the identity inside ``(-beta, beta)`` and has zero
    derivative outside.
    """
    X, single = _as_batch(net, x)
    if not single:
        raise DomainError("mlp_gradient takes a single input vector")
    acts, raw = _forward_trace(net, X)
    out = raw
    slope = np.ones_like(raw)
    if net.truncation_beta is not None:
        out = np.clip(raw, -net.truncation_beta, net.truncation_beta)
        slope = (np.abs(raw) < net.truncation_beta).astype(np.float64)
    return _backward(net, acts, (out - float(y_target)) * slope)


def loss_and_gradient(net: MlpNetwork, X, Y):
    """Mean squared error of the untruncated output over a batch and its gradient."""
    X, _ = _as_batch(net, X)
    Y = np.asarray(Y, dtype=np.float64).reshape(-1)
    acts, out = _forward_trace(net, X)
    resid = out - Y
    loss = float(np.mean(resid ** 2))
    return loss, _backward(net, acts, 2.0 * resid / Y.size)


# --------------------------------------------------------------------------
# training

@dataclass(frozen=True)
class TrainingConfig:
    n_batches: int = 300
    batch_size: int = 1024
    lr_initial: float = 0.01
    lr_decay: float = 0.95
    lr_decay_every: int = 10
    seed: int = 0
    truncation_c: float = 10.0
    optimizer: str = "adam"
    standardize: bool = True
    refit_fraction: float = 0.25

    def __post_init__(self):
        if self.n_batches < 1 or self.batch_size < 1 or self.lr_decay_every < 1:
            raise ConfigError("n_batches, batch_size and lr_decay_every must be >= 1")
        if not self.lr_initial > 0:
            raise ConfigError("lr_initial must be positive")
        if not 0 < self.lr_decay <= 1:
            raise ConfigError("lr_decay must lie in (0, 1]")
        if not self.truncation_c > 0:
            raise ConfigError("truncation_c must be positive")
        if not 0 <= self.refit_fraction <= 1:
            raise ConfigError("refit_fraction must lie in [0, 1]")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")

    def learning_rate(self, batch_index: int) -> float:
        return self.lr_initial * self.lr_decay ** (batch_index // self.lr_decay_every)


@dataclass
class LossTrace:
    loss: np.ndarray
    lr: np.ndarray = field(repr=False)
    # loss of the returned network on the terminal batch
    final_loss: float = float("nan")

    def __len__(self):
        return self.loss.size

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["batch", "loss", "lr"])
            for i, (l, r) in enumerate(zip(self.loss, self.lr)):
                w.writerow([i, repr(float(l)), repr(float(r))])


def _standardize(net, X, Y):
    sd = X.std(axis=0)
    net.input_mean = X.mean(axis=0)
    net.input_scale = np.where(sd > 0, sd, 1.0)
    ysd = float(Y.std())
    net.output_mean = float(Y.mean())
    net.output_scale = ysd if ysd > 0 else 1.0


def train(net: MlpNetwork, config: TrainingConfig, generator: Callable):
    """Fit ``net`` by minimising the empirical squared loss on fresh batches.

    ``generator(i)`` returns the ``(X, Y)`` pair for batch ``i``.  The input
    network is not modified; the trained copy carries the truncation bound
    ``truncation_c * log(n_samples)``.  Returns ``(network, LossTrace)``.

    After the gradient phase the output layer is refitted by least squares
    on the last ``refit_fraction`` of the batches, which removes the
    residual bias left by the noisy final steps.
    """
    net = net.copy()
    params = net.parameters()
    m = [np.zeros_like(p) for p in params]
    v = [np.zeros_like(p) for p in params]
    b1, b2, eps = 0.9, 0.999, 1e-8
    losses = np.empty(config.n_batches)
    rates = np.empty(config.n_batches)
    n_seen = 0
    n_keep = int(round(config.refit_fraction * config.n_batches))
    kept = []
    for i in range(config.n_batches):
        X, Y = generator(i)
        X = np.asarray(X, dtype=np.float64)
        Y = np.asarray(Y, dtype=np.float64).reshape(-1)
        if i == 0 and config.standardize:
            _standardize(net, X, Y)
        loss, grads = loss_and_gradient(net, X, Y)
        if not math.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grads):
            raise TrainingDivergence(i, loss)
        lr = config.learning_rate(i)
        losses[i] = loss
        rates[i] = lr
        n_seen += Y.size
        if i >= config.n_batches - n_keep:
            kept.append((X, Y))
        if config.optimizer == "sgd":
            for p, g in zip(params, grads):
                p -= lr * g
            continue
        t = i + 1
        for p, g, mm, vv in zip(params, grads, m, v):
            mm *= b1
            mm += (1 - b1) * g
            vv *= b2
            vv += (1 - b2) * g * g
            mhat = mm / (1 - b1 ** t)
            vhat = vv / (1 - b2 ** t)
            p -= lr * mhat / (np.sqrt(vhat) + eps)
    if kept:
        _refit_output_layer(net, np.concatenate([k[0] for k in kept]),
                            np.concatenate([k[1] for k in kept]))
    final_loss, _ = loss_and_gradient(net, X, Y)
    net.truncation_beta = config.truncation_c * math.log(max(n_seen, 2))
    return net, LossTrace(losses, rates, final_loss)


def _refit_output_layer(net, X, Y):
    acts, _ = _forward_trace(net, X)
    F = np.hstack([acts[-1], np.ones((X.shape[0], 1))])
    target = (Y - net.output_mean) / net.output_scale
    coef, *_ = np.linalg.lstsq(F, target, rcond=None)
    if np.all(np.isfinite(coef)):
        net.weights[-1][...] = coef[:-1][None, :]
        net.biases[-1][...] = coef[-1:]


# --------------------------------------------------------------------------
# constructive fragments

def build_fsq() -> MlpNetwork:
    """One hidden layer computing ``|m + n| - |m - n|`` from inputs ``(m, n)``."""
    A1 = np.array([[1.0, 1.0], [-1.0, -1.0], [1.0, -1.0], [-1.0, 1.0]])
    A2 = np.array([[1.0, 1.0, -1.0, -1.0]])
    return MlpNetwork((2, 4, 1), [A1, A2], [np.zeros(4), np.zeros(1)])


def build_fmult(d: int) -> MlpNetwork:
    """Binary tree of ``f_sq`` gates over ``(x_1, ..., x_d, 1, ..., 1)``.

    Each tree level uses two layers: the four ReLU units of every gate, then
    a ReLU layer holding the gate outputs (non-negative, so the ReLU is
    exact).  Keeping gate outputs in their own layer means a zero input
    yields a bit-exact zero regardless of summation order.
    """
    d = int(d)
    if d < 1:
        raise ConfigError("d must be >= 1")
    levels = max(1, math.ceil(math.log2(d)))
    width = 2 ** levels
    gate_in = np.array([[1.0, 1.0], [-1.0, -1.0], [1.0, -1.0], [-1.0, 1.0]])
    gate_out = np.array([1.0, 1.0, -1.0, -1.0])
    # padded vector z = P x + q
    P = np.zeros((width, d))
    P[np.arange(d), np.arange(d)] = 1.0
    q = np.zeros(width)
    q[d:] = 1.0
    weights, biases, widths = [], [], [d]
    n = width
    for level in range(levels):
        g = n // 2
        A = np.zeros((4 * g, n))
        for j in range(g):
            A[4 * j:4 * j + 4, 2 * j:2 * j + 2] = gate_in
        b = np.zeros(4 * g)
        if level == 0:
            b = A @ q
            A = A @ P
        B = np.zeros((g, 4 * g))
        for j in range(g):
            B[j, 4 * j:4 * j + 4] = gate_out
        weights += [A, B]
        biases += [b, np.zeros(g)]
        widths += [4 * g, g]
        n = g
    # final affine layer passes the (non-negative) root through
    weights.append(np.ones((1, 1)))
    biases.append(np.zeros(1))
    widths.append(1)
    return MlpNetwork(tuple(widths), weights, biases)


def build_fdemo(c2: float, c5: float = 1.0) -> MlpNetwork:
    """``-relu(-c2 relu(x) + 1) + 1``: 0 for ``x <= 0``, 1 for ``x >= 1/c2``, linear between."""
    if c5 < 1:
        raise ConfigError("c5 must be >= 1")
    if c2 < c5:
        raise ConfigError("c2 must be >= c5 so the gate saturates by 1/c5")
    return MlpNetwork((1, 1, 1, 1),
                      [np.ones((1, 1)), np.array([[-float(c2)]]), np.array([[-1.0]])],
                      [np.zeros(1), np.ones(1), np.ones(1)])


# --------------------------------------------------------------------------
# serialisation

def save_network(net: MlpNetwork, path) -> None:
    """Binary layout (little endian): ``FPNN1``, uint32 layer count, uint32
    widths, f8 beta (NaN if none), f8 output mean/scale, f8 input mean and
    scale, then per layer the row-major weights followed by the biases."""
    beta = float("nan") if net.truncation_beta is None else float(net.truncation_beta)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(net.layer_widths)))
        fh.write(np.asarray(net.layer_widths, dtype="<u4").tobytes())
        fh.write(struct.pack("<3d", beta, net.output_mean, net.output_scale))
        fh.write(net.input_mean.astype("<f8").tobytes())
        fh.write(net.input_scale.astype("<f8").tobytes())
        for A, b in zip(net.weights, net.biases):
            fh.write(np.ascontiguousarray(A, dtype="<f8").tobytes())
            fh.write(b.astype("<f8").tobytes())


def load_network(path) -> MlpNetwork:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:5] != MAGIC:
        raise DomainError("not an FPNN1 network file")
    pos = 5
    (n_layers,) = struct.unpack_from("<I", data, pos)
    pos += 4
    widths = np.frombuffer(data, dtype="<u4", count=n_layers, offset=pos).astype(int)
    pos += 4 * n_layers
    beta, ymean, yscale = struct.unpack_from("<3d", data, pos)
    pos += 24

    def take(count):
        nonlocal pos
        arr = np.frombuffer(data, dtype="<f8", count=count, offset=pos).copy()
        pos += 8 * count
        return arr

    mean = take(widths[0])
    scale = take(widths[0])
    weights, biases = [], []
    for l in range(1, n_layers):
        weights.append(take(widths[l] * widths[l - 1]).reshape(widths[l], widths[l - 1]))
        biases.append(take(widths[l]))
    if pos != len(data):
        raise DomainError("trailing bytes in network file")
    return MlpNetwork(tuple(widths), weights, biases, None if math.isnan(beta) else beta,
                      mean, scale, ymean, yscale)


__all__ = [
    "LossTrace",
    "MlpNetwork",
    "TrainingConfig",
    "build_fdemo",
    "build_fmult",
    "build_fsq",
    "load_network",
    "loss_and_gradient",
    "mlp_forward",
    "mlp_gradient",
    "mlp_init",
    "save_network",
    "train",
    "truncate",
]
