"""Exact MLP engine: forward, backprop, optimizers, init, checkpoints.

Activations are batched row-wise: a (b, n) array holds b samples. The output
layer always applies log-softmax and the loss is mean negative log-likelihood,
so the output-layer delta is (softmax(z) - onehot) / batch.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, FormatError, ParameterError
from .linalg import matmul, require_finite, stream

HIDDEN_ACTIVATIONS = ("relu", "linear")
CHECKPOINT_MAGIC = b"MLPC"
CHECKPOINT_VERSION = 1


@dataclass
class MlpModel:
    layer_dims: list[int]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    hidden_activation: str = "relu"

    def __post_init__(self):
        if len(self.layer_dims) < 2:
            raise ParameterError("need at least input and output dims")
        if self.hidden_activation not in HIDDEN_ACTIVATIONS:
            raise ParameterError(f"unknown hidden activation {self.hidden_activation!r}")
        if len(self.weights) != len(self.layer_dims) - 1 or len(self.biases) != len(self.weights):
            raise ParameterError("weight/bias count must match layer count")
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (self.layer_dims[k], self.layer_dims[k + 1]):
                raise DimensionError(f"weights[{k}] has shape {w.shape}, expected "
                                     f"({self.layer_dims[k]}, {self.layer_dims[k + 1]})")
            if b.shape != (self.layer_dims[k + 1],):
                raise DimensionError(f"biases[{k}] has shape {b.shape}")

    @property
    def n_layers(self):
        return len(self.weights)

    @property
    def n_inputs(self):
        return self.layer_dims[0]

    @property
    def n_outputs(self):
        return self.layer_dims[-1]

    def copy(self) -> "MlpModel":
        return MlpModel(list(self.layer_dims), [w.copy() for w in self.weights],
                        [b.copy() for b in self.biases], self.hidden_activation)


@dataclass
class ForwardTrace:
    """Per-layer pre-activations and activations; activations[0] is the input batch."""

    pre_activations: list[np.ndarray]
    activations: list[np.ndarray]

    @property
    def output(self) -> np.ndarray:
        return self.activations[-1]

    @property
    def batch_size(self):
        return self.activations[0].shape[0]


@dataclass
class Gradients:
    weights: list[np.ndarray]
    biases: list[np.ndarray]


def init_weights(layer_dims, scheme="he_uniform", seed=0) -> MlpModel:
    """He-uniform weights (bound sqrt(6/fan_in)), zero biases."""
    if any(d < 1 for d in layer_dims):
        raise ParameterError("layer dims must be positive")
    if scheme != "he_uniform":
        raise ParameterError(f"unknown init scheme {scheme!r}")
    rng = stream(seed, "init")
    weights, biases = [], []
    for fan_in, fan_out in zip(layer_dims[:-1], layer_dims[1:]):
        bound = np.sqrt(6.0 / fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return MlpModel(list(layer_dims), weights, biases)


def _as_batch(x, n_inputs) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != n_inputs:
        raise DimensionError(f"input shape {x.shape} does not match {n_inputs} inputs")
    return x


def log_softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def apply_hidden(z, kind):
    if kind == "relu":
        return np.maximum(z, 0.0)
    return z


def hidden_derivative(z, kind):
    if kind == "relu":
        return (z > 0.0).astype(np.float64)
    return np.ones_like(z)


def forward(model: MlpModel, x) -> ForwardTrace:
    """Exact forward pass over a sample or batch."""
    a = _as_batch(x, model.n_inputs)
    pre, acts = [], [a]
    for k in range(model.n_layers):
        z = matmul(a, model.weights[k]) + model.biases[k]
        pre.append(z)
        if k == model.n_layers - 1:
            a = log_softmax(z)
        else:
            a = apply_hidden(z, model.hidden_activation)
        acts.append(a)
    require_finite(acts[-1], "forward output")
    return ForwardTrace(pre, acts)


def _as_targets(targets, n_outputs, batch) -> np.ndarray:
    t = np.atleast_1d(np.asarray(targets, dtype=np.int64))
    if t.shape != (batch,):
        raise DimensionError(f"targets shape {t.shape} does not match batch {batch}")
    if (t < 0).any() or (t >= n_outputs).any():
        raise ParameterError(f"target class out of range (0..{n_outputs - 1})")
    return t


def nll_loss(trace: ForwardTrace, targets) -> float:
    """Mean negative log-likelihood of the recorded log-softmax output."""
    t = _as_targets(targets, trace.output.shape[1], trace.batch_size)
    return float(-trace.output[np.arange(trace.batch_size), t].mean())


def output_delta(trace: ForwardTrace, targets) -> np.ndarray:
    """Gradient of the mean NLL loss w.r.t. the output pre-activation."""
    b = trace.batch_size
    t = _as_targets(targets, trace.output.shape[1], b)
    delta = np.exp(trace.output)  # softmax recovered from log-softmax
    delta[np.arange(b), t] -= 1.0
    return delta / b


def backward(model: MlpModel, trace: ForwardTrace, targets) -> Gradients:
    """Exact gradients of mean NLL w.r.t. every weight matrix and bias."""
    delta = output_delta(trace, targets)
    grads_w = [None] * model.n_layers
    grads_b = [None] * model.n_layers
    for k in range(model.n_layers - 1, -1, -1):
        grads_w[k] = matmul(trace.activations[k].T, delta)
        grads_b[k] = delta.sum(axis=0)
        if k > 0:
            upstream = matmul(delta, model.weights[k].T)
            delta = upstream * hidden_derivative(trace.pre_activations[k - 1],
                                                 model.hidden_activation)
    return Gradients(grads_w, grads_b)


# ---------------------------------------------------------------------------
# Optimizers
# ---------------------------------------------------------------------------


@dataclass
class Optimizer:
    kind: str = "sgd"  # "sgd" or "adam"
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    _m: list = field(default_factory=list, repr=False)
    _v: list = field(default_factory=list, repr=False)

    def __post_init__(self):
        if self.kind not in ("sgd", "adam"):
            raise ParameterError(f"unknown optimizer {self.kind!r}")
        if not self.learning_rate > 0:
            raise ParameterError("learning rate must be positive")


def _ensure_adam_state(opt: Optimizer, model: MlpModel):
    if opt._m:
        return
    for w, b in zip(model.weights, model.biases):
        opt._m.append((np.zeros_like(w), np.zeros_like(b)))
        opt._v.append((np.zeros_like(w), np.zeros_like(b)))


def step(optimizer: Optimizer, model: MlpModel, grads: Gradients):
    """Apply one parameter update in place."""
    eta = optimizer.learning_rate
    if optimizer.kind == "sgd":
        for k in range(model.n_layers):
            model.weights[k] -= eta * grads.weights[k]
            model.biases[k] -= eta * grads.biases[k]
        optimizer.step_count += 1
        return

    _ensure_adam_state(optimizer, model)
    optimizer.step_count += 1
    t = optimizer.step_count
    b1, b2, eps = optimizer.beta1, optimizer.beta2, optimizer.eps
    bias1 = 1.0 - b1**t
    bias2 = 1.0 - b2**t
    for k in range(model.n_layers):
        for param, g, m, v in (
            (model.weights[k], grads.weights[k], optimizer._m[k][0], optimizer._v[k][0]),
            (model.biases[k], grads.biases[k], optimizer._m[k][1], optimizer._v[k][1]),
        ):
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            param -= eta * (m / bias1) / (np.sqrt(v / bias2) + eps)


# ---------------------------------------------------------------------------
# Checkpoints: versioned binary weights plus a JSON metadata sidecar.
# ---------------------------------------------------------------------------


def save_checkpoint(model: MlpModel, path, metadata: dict | None = None):
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<II", CHECKPOINT_VERSION, len(model.layer_dims)))
        f.write(struct.pack(f"<{len(model.layer_dims)}I", *model.layer_dims))
        for w, b in zip(model.weights, model.biases):
            f.write(np.ascontiguousarray(w, dtype="<f8").tobytes())
            f.write(np.ascontiguousarray(b, dtype="<f8").tobytes())
    sidecar = {"activation": model.hidden_activation}
    sidecar.update(metadata or {})
    with open(str(path) + ".json", "w") as f:
        json.dump(sidecar, f, indent=2, sort_keys=True)
        f.write("\n")


def load_checkpoint(path) -> MlpModel:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != CHECKPOINT_MAGIC:
            raise FormatError(f"{path}: bad checkpoint magic {magic!r} at byte 0")
        version, n_dims = struct.unpack("<II", f.read(8))
        if version != CHECKPOINT_VERSION:
            raise FormatError(f"{path}: unsupported checkpoint version {version}")
        dims = list(struct.unpack(f"<{n_dims}I", f.read(4 * n_dims)))
        weights, biases = [], []
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            w = np.frombuffer(f.read(8 * fan_in * fan_out), dtype="<f8")
            if w.size != fan_in * fan_out:
                raise FormatError(f"{path}: truncated weight block")
            weights.append(w.reshape(fan_in, fan_out).copy())
            b = np.frombuffer(f.read(8 * fan_out), dtype="<f8")
            if b.size != fan_out:
                raise FormatError(f"{path}: truncated bias block")
            biases.append(b.copy())
    activation = "relu"
    try:
        with open(str(path) + ".json") as f:
            activation = json.load(f).get("activation", "relu")
    except OSError:
        pass
    return MlpModel(dims, weights, biases, activation)
