"""Fully-connected network mapping design parameters to reduced coefficients.

Self-contained numpy implementation: forward pass, reverse-mode gradients,
ADAM with bias correction, and a deterministic training loop.  The loss is
the relative squared error in reduced coordinates, which equals the
reference-stiffness semi-norm error because the POD modes are orthonormal
in that inner product.
"""

from __future__ import annotations

import json
import struct
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, TrainingDivergedError


@dataclass
class Normalizer:
    """Per-component affine map x -> (x - shift) / scale."""

    shift: np.ndarray
    scale: np.ndarray

    def __post_init__(self):
        self.shift = np.asarray(self.shift, dtype=float)
        self.scale = np.asarray(self.scale, dtype=float)
        if np.any(self.scale <= 0):
            raise ValueError("normalizer scales must be strictly positive")

    def encode(self, x):
        return (x - self.shift) / self.scale

    def decode(self, x):
        return x * self.scale + self.shift

    @staticmethod
    def minmax(data: np.ndarray) -> "Normalizer":
        """Map the training range onto [-1, 1] componentwise."""
        lo, hi = data.min(axis=0), data.max(axis=0)
        scale = 0.5 * (hi - lo)
        scale[scale == 0] = 1.0
        return Normalizer(shift=0.5 * (hi + lo), scale=scale)

    @staticmethod
    def zscore(data: np.ndarray) -> "Normalizer":
        std = data.std(axis=0)
        std[std == 0] = 1.0
        return Normalizer(shift=data.mean(axis=0), scale=std)


@dataclass
class MlpModel:
    layer_sizes: list[int]
    weights: list[np.ndarray]       # (n_out, n_in) per layer
    biases: list[np.ndarray]
    input_norm: Normalizer
    output_norm: Normalizer
    activation: str = "relu"
    basis_hash: str = ""

    def __post_init__(self):
        if self.activation != "relu":
            raise ConfigError(f"unsupported activation {self.activation!r}")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (self.layer_sizes[i + 1], self.layer_sizes[i]):
                raise ValueError(f"layer {i}: weight shape {w.shape} inconsistent")
            if b.shape != (self.layer_sizes[i + 1],):
                raise ValueError(f"layer {i}: bias shape {b.shape} inconsistent")

    @property
    def output_dim(self) -> int:
        return self.layer_sizes[-1]

    def parameters(self):
        for w, b in zip(self.weights, self.biases):
            yield w
            yield b


def init_model(layer_sizes, seed=0, input_norm=None, output_norm=None,
               basis_hash: str = "") -> MlpModel:
    """He-uniform weights, zero biases."""
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for n_in, n_out in zip(layer_sizes[:-1], layer_sizes[1:]):
        limit = np.sqrt(6.0 / n_in)
        weights.append(rng.uniform(-limit, limit, size=(n_out, n_in)))
        biases.append(np.zeros(n_out))
    ident_in = Normalizer(np.zeros(layer_sizes[0]), np.ones(layer_sizes[0]))
    ident_out = Normalizer(np.zeros(layer_sizes[-1]), np.ones(layer_sizes[-1]))
    return MlpModel(
        layer_sizes=list(layer_sizes),
        weights=weights,
        biases=biases,
        input_norm=input_norm or ident_in,
        output_norm=output_norm or ident_out,
        basis_hash=basis_hash,
    )


def _forward_cached(model: MlpModel, X: np.ndarray):
    a = model.input_norm.encode(np.asarray(X, dtype=float))
    acts = [a]
    n_layers = len(model.weights)
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        z = a @ w.T + b
        a = np.maximum(z, 0.0) if i < n_layers - 1 else z
        acts.append(a)
    return model.output_norm.decode(a), acts


def forward(model: MlpModel, P) -> np.ndarray:
    """Deterministic prediction; accepts one parameter vector or a batch."""
    x = np.asarray(P, dtype=float)
    single = x.ndim == 1
    y, _ = _forward_cached(model, x[None, :] if single else x)
    return y[0] if single else y


def loss(ubar, utilde) -> float:
    """Relative squared error ||utilde - ubar||^2 / ||ubar||^2."""
    ubar = np.asarray(ubar, dtype=float)
    utilde = np.asarray(utilde, dtype=float)
    denom = float(ubar @ ubar)
    if denom == 0.0:
        raise ConfigError("loss undefined for a zero reference vector (skip sample)")
    d = utilde - ubar
    return float(d @ d) / denom


def batch_loss(model: MlpModel, X, Y, l2: float = 0.0) -> float:
    pred, _ = _forward_cached(model, X)
    Y = np.asarray(Y, dtype=float)
    denom = np.einsum("ij,ij->i", Y, Y)
    ok = denom > 0
    d = pred - Y
    data = float(np.mean(np.einsum("ij,ij->i", d, d)[ok] / denom[ok]))
    reg = l2 * sum(float(np.sum(p * p)) for p in model.parameters())
    return data + reg


def backward(model: MlpModel, X, Y, l2: float = 0.0):
    """Exact gradients of the mean relative loss plus L2 penalty.

    Returns (weight_grads, bias_grads) matching the model's layer order.
    ReLU subgradient at 0 is taken as 0.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    if X.shape[0] == 0:
        raise ConfigError("backward requires a non-empty batch")
    pred, acts = _forward_cached(model, X)
    denom = np.einsum("ij,ij->i", Y, Y)
    ok = denom > 0
    n_eff = max(int(np.sum(ok)), 1)
    coeff = np.where(ok, 2.0 / np.where(ok, denom, 1.0), 0.0) / n_eff
    # d(loss)/d(decoded output), then through the output normalizer scale
    delta = coeff[:, None] * (pred - Y) * model.output_norm.scale[None, :]
    wg, bg = [], []
    for i in range(len(model.weights) - 1, -1, -1):
        a_prev = acts[i]
        wg.append(delta.T @ a_prev + 2.0 * l2 * model.weights[i])
        bg.append(delta.sum(axis=0) + 2.0 * l2 * model.biases[i])
        if i > 0:
            delta = (delta @ model.weights[i]) * (acts[i] > 0)
    return wg[::-1], bg[::-1]


# ---------------------------------------------------------------------------
# ADAM optimizer


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0

    @staticmethod
    def for_model(model: MlpModel) -> "AdamState":
        params = list(model.parameters())
        return AdamState(
            m=[np.zeros_like(p) for p in params],
            v=[np.zeros_like(p) for p in params],
        )


def adam_step(state: AdamState, params: list[np.ndarray], grads: list[np.ndarray],
              config: "TrainConfig") -> None:
    """Standard ADAM update with bias correction, in place."""
    state.t += 1
    b1, b2 = config.adam_beta1, config.adam_beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= config.learning_rate * (m / c1) / (np.sqrt(v / c2) + config.adam_epsilon)


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8
    l2_regularization: float = 1e-6
    epochs: int = 2000
    batch_size: int | None = None   # None = full batch
    seed: int = 0
    early_stop_tolerance: float = 0.0
    test_interval: int = 100
    patience: int = 10

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if not (0.0 < self.adam_beta1 < 1.0 and 0.0 < self.adam_beta2 < 1.0):
            raise ConfigError("ADAM betas must lie in (0, 1)")
        if self.learning_rate <= 0:
            raise ConfigError("learning rate must be positive")


@dataclass
class TrainHistory:
    epochs: list[int] = field(default_factory=list)
    train_loss: list[float] = field(default_factory=list)
    test_loss: list[float] = field(default_factory=list)   # nan where not evaluated
    duration: float = 0.0
    stopped_early: bool = False


def train(train_X, train_Y, test_X, test_Y, hidden_layers, config: TrainConfig,
          basis_hash: str = "") -> tuple[MlpModel, TrainHistory]:
    """Mini-batch (default full-batch) ADAM training, reproducible given seed."""
    train_X = np.asarray(train_X, dtype=float)
    train_Y = np.asarray(train_Y, dtype=float)
    if train_X.shape[0] == 0:
        raise ConfigError("training set must be non-empty")
    sizes = [train_X.shape[1], *hidden_layers, train_Y.shape[1]]
    model = init_model(
        sizes,
        seed=config.seed,
        input_norm=Normalizer.minmax(train_X),
        output_norm=Normalizer.zscore(train_Y),
        basis_hash=basis_hash,
    )
    state = AdamState.for_model(model)
    rng = np.random.default_rng(config.seed + 1)
    history = TrainHistory()
    t0 = time.perf_counter()
    l2 = config.l2_regularization
    best_test = np.inf
    stale = 0
    n = train_X.shape[0]
    bs = config.batch_size or n
    for epoch in range(1, config.epochs + 1):
        if bs >= n:
            wg, bg = backward(model, train_X, train_Y, l2)
            grads = [g for pair in zip(wg, bg) for g in pair]
            adam_step(state, list(model.parameters()), grads, config)
        else:
            order = rng.permutation(n)
            for s in range(0, n, bs):
                sel = order[s : s + bs]
                wg, bg = backward(model, train_X[sel], train_Y[sel], l2)
                grads = [g for pair in zip(wg, bg) for g in pair]
                adam_step(state, list(model.parameters()), grads, config)
        tl = batch_loss(model, train_X, train_Y, l2)
        if not np.isfinite(tl) or tl > 1e6:
            history.duration = time.perf_counter() - t0
            raise TrainingDivergedError(f"training diverged at epoch {epoch} (loss {tl:.3e})",
                                        history)
        check = epoch % config.test_interval == 0 or epoch == config.epochs
        vl = np.nan
        if check and test_X is not None and len(test_X):
            vl = batch_loss(model, test_X, test_Y, 0.0)
            if vl < best_test - 1e-15:
                best_test = vl
                stale = 0
            else:
                stale += 1
        history.epochs.append(epoch)
        history.train_loss.append(tl)
        history.test_loss.append(float(vl))
        if config.early_stop_tolerance > 0 and tl < config.early_stop_tolerance:
            history.stopped_early = True
            break
        if check and stale >= config.patience:
            history.stopped_early = True
            break
    history.duration = time.perf_counter() - t0
    return model, history


# ---------------------------------------------------------------------------
# persistence: JSON header + little-endian float64 payload, layer order
# (weights row-major, then biases)

_MAGIC = b"IGFMLP1\n"
FORMAT_VERSION = 1


def save_model(model: MlpModel, path) -> None:
    header = {
        "format": "igafield-mlp",
        "version": FORMAT_VERSION,
        "layer_sizes": model.layer_sizes,
        "activation": model.activation,
        "input_norm": {"shift": model.input_norm.shift.tolist(),
                       "scale": model.input_norm.scale.tolist()},
        "output_norm": {"shift": model.output_norm.shift.tolist(),
                        "scale": model.output_norm.scale.tolist()},
        "basis_hash": model.basis_hash,
    }
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for w, b in zip(model.weights, model.biases):
            fh.write(np.ascontiguousarray(w, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(b, dtype="<f8").tobytes())


def read_model_header(path) -> dict:
    with open(path, "rb") as fh:
        if fh.read(len(_MAGIC)) != _MAGIC:
            raise ConfigError(f"{path}: not a model file")
        (hlen,) = struct.unpack("<I", fh.read(4))
        return json.loads(fh.read(hlen))


def load_model(path) -> MlpModel:
    with open(path, "rb") as fh:
        if fh.read(len(_MAGIC)) != _MAGIC:
            raise ConfigError(f"{path}: not a model file")
        (hlen,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(hlen))
        if header.get("version") != FORMAT_VERSION:
            raise ConfigError(f"{path}: unsupported model version {header.get('version')}")
        sizes = header["layer_sizes"]
        weights, biases = [], []
        for n_in, n_out in zip(sizes[:-1], sizes[1:]):
            wb = fh.read(n_out * n_in * 8)
            bb = fh.read(n_out * 8)
            if len(wb) != n_out * n_in * 8 or len(bb) != n_out * 8:
                raise ConfigError(f"{path}: truncated weight payload")
            weights.append(np.frombuffer(wb, dtype="<f8").reshape(n_out, n_in).copy())
            biases.append(np.frombuffer(bb, dtype="<f8").copy())
    return MlpModel(
        layer_sizes=sizes,
        weights=weights,
        biases=biases,
        input_norm=Normalizer(np.asarray(header["input_norm"]["shift"]),
                              np.asarray(header["input_norm"]["scale"])),
        output_norm=Normalizer(np.asarray(header["output_norm"]["shift"]),
                               np.asarray(header["output_norm"]["scale"])),
        activation=header["activation"],
        basis_hash=header.get("basis_hash", ""),
    )
