"""Dense feed-forward network with per-sample backpropagation.

The model keeps its parameters in a single flat float64 vector; layer
weights and biases are views into it. Canonical layout: for each layer in
order, the weight matrix (fan_in x fan_out, row-major) followed by the
bias vector. Everything downstream (clipping, noise addition, federated
averaging) works on that flat vector.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

ACTIVATIONS = ("relu", "tanh")


@dataclass(frozen=True)
class MlpConfig:
    """Architecture of a classifier MLP: hidden widths and activation."""

    input_dim: int
    hidden_dims: tuple[int, ...] = (64, 64, 64)
    output_dim: int = 2
    activation: str = "relu"

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        if self.input_dim < 1 or self.output_dim < 1:
            raise ValueError("input_dim and output_dim must be >= 1")
        if not self.hidden_dims or any(h < 1 for h in self.hidden_dims):
            raise ValueError("hidden_dims must be non-empty positive counts")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}, got {self.activation!r}")

    @property
    def layer_dims(self) -> list[tuple[int, int]]:
        dims = (self.input_dim, *self.hidden_dims, self.output_dim)
        return list(zip(dims[:-1], dims[1:]))

    @property
    def n_params(self) -> int:
        return sum(fi * fo + fo for fi, fo in self.layer_dims)


@dataclass
class MlpModel:
    """Parameter vector plus the config that gives it shape."""

    config: MlpConfig
    params: np.ndarray

    def __post_init__(self):
        self.params = np.asarray(self.params, dtype=np.float64)
        if self.params.shape != (self.config.n_params,):
            raise ValueError(
                f"parameter vector has length {self.params.size}, "
                f"config requires {self.config.n_params}"
            )

    def layers(self) -> list[tuple[np.ndarray, np.ndarray]]:
        """(weight, bias) views into the flat parameter vector, in layer order."""
        out = []
        offset = 0
        for fan_in, fan_out in self.config.layer_dims:
            w = self.params[offset : offset + fan_in * fan_out].reshape(fan_in, fan_out)
            offset += fan_in * fan_out
            b = self.params[offset : offset + fan_out]
            offset += fan_out
            out.append((w, b))
        return out

    def copy(self) -> "MlpModel":
        return MlpModel(self.config, self.params.copy())


@dataclass
class ForwardCache:
    """Per-layer pre-activations and activations for one batch."""

    inputs: np.ndarray                 # (batch, input_dim)
    pre_activations: list[np.ndarray]  # z_l, one per layer, batch-major
    activations: list[np.ndarray]      # act(z_l) for hidden layers only
    n_params: int

    @property
    def batch_size(self) -> int:
        return self.inputs.shape[0]


@dataclass
class PerSampleGrads:
    """One flat parameter-length gradient per sample, stacked batch-major."""

    grads: np.ndarray  # (batch, n_params)

    def __post_init__(self):
        if self.grads.ndim != 2 or self.grads.shape[0] < 1:
            raise ValueError("per-sample gradients must be a non-empty 2-D array")

    @property
    def batch_size(self) -> int:
        return self.grads.shape[0]


def init_model(config: MlpConfig, seed: int) -> MlpModel:
    """Initialize weights uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)), biases zero.

    Deterministic for a fixed (config, seed) pair.
    """
    rng = np.random.default_rng(seed)
    params = np.zeros(config.n_params)
    model = MlpModel(config, params)
    for w, b in model.layers():
        bound = 1.0 / np.sqrt(w.shape[0])
        w[...] = rng.uniform(-bound, bound, size=w.shape)
        b[...] = 0.0
    return model


def _check_batch(x: np.ndarray, input_dim: int) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError("batch must be a 2-D array of shape (n, input_dim)")
    if x.shape[1] != input_dim:
        raise ValueError(f"batch has {x.shape[1]} features, model expects {input_dim}")
    return x


def _activate(z: np.ndarray, kind: str) -> np.ndarray:
    if kind == "relu":
        return np.maximum(z, 0.0)
    return np.tanh(z)


def _activation_grad(z: np.ndarray, a: np.ndarray, kind: str) -> np.ndarray:
    if kind == "relu":
        return (z > 0.0).astype(np.float64)
    return 1.0 - a * a


def forward(model: MlpModel, batch: np.ndarray) -> tuple[np.ndarray, ForwardCache]:
    """Run the batch through the network; returns logits and a backward cache."""
    x = _check_batch(batch, model.config.input_dim)
    act = model.config.activation
    pre, post = [], []
    a = x
    layer_list = model.layers()
    for idx, (w, b) in enumerate(layer_list):
        z = a @ w + b
        pre.append(z)
        if idx < len(layer_list) - 1:
            a = _activate(z, act)
            post.append(a)
    logits = pre[-1]
    cache = ForwardCache(inputs=x, pre_activations=pre, activations=post,
                         n_params=model.config.n_params)
    return logits, cache


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax, stable under large logits."""
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def _check_labels(labels, n_rows: int, n_classes: int) -> np.ndarray:
    y = np.asarray(labels, dtype=np.int64)
    if y.shape != (n_rows,):
        raise ValueError(f"labels must have shape ({n_rows},), got {y.shape}")
    if y.size and (y.min() < 0 or y.max() >= n_classes):
        raise ValueError(f"label out of range [0, {n_classes})")
    return y


def cross_entropy(logits: np.ndarray, labels) -> tuple[float, np.ndarray]:
    """Mean and per-sample cross-entropy of integer class labels.

    Uses log-sum-exp so extreme logits neither overflow nor lose the loss.
    """
    logits = np.asarray(logits, dtype=np.float64)
    y = _check_labels(labels, logits.shape[0], logits.shape[1])
    lse = logsumexp(logits, axis=1)
    per_sample = lse - logits[np.arange(logits.shape[0]), y]
    return float(per_sample.mean()), per_sample


def backward_per_sample(model: MlpModel, cache: ForwardCache, labels) -> PerSampleGrads:
    """Gradient of each sample's own loss w.r.t. the flat parameter vector.

    Batched backprop that keeps the sample axis; grads[i] is exactly the
    gradient of sample i's (un-averaged) cross-entropy loss.
    """
    if cache.n_params != model.config.n_params:
        raise ValueError("cache was produced by a model with a different shape")
    act = model.config.activation
    logits = cache.pre_activations[-1]
    batch = cache.batch_size
    y = _check_labels(labels, batch, model.config.output_dim)

    delta = softmax(logits)
    delta[np.arange(batch), y] -= 1.0

    layer_list = model.layers()
    out = np.empty((batch, model.config.n_params))
    # walk layers from last to first, filling each layer's slice of the
    # flat gradient; weight grad per sample is the outer product of the
    # layer input and the backpropagated delta
    offset = model.config.n_params
    for idx in range(len(layer_list) - 1, -1, -1):
        w, _ = layer_list[idx]
        a_in = cache.inputs if idx == 0 else cache.activations[idx - 1]
        fan_in, fan_out = w.shape
        offset -= fan_out
        out[:, offset : offset + fan_out] = delta
        offset -= fan_in * fan_out
        gw = np.einsum("bi,bo->bio", a_in, delta)
        out[:, offset : offset + fan_in * fan_out] = gw.reshape(batch, fan_in * fan_out)
        if idx > 0:
            z_prev = cache.pre_activations[idx - 1]
            a_prev = cache.activations[idx - 1]
            delta = (delta @ w.T) * _activation_grad(z_prev, a_prev, act)
    return PerSampleGrads(out)


def evaluate(model: MlpModel, features: np.ndarray, labels) -> float:
    """Classification accuracy; argmax ties resolve to the lower class index."""
    x = _check_batch(features, model.config.input_dim)
    if x.shape[0] == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    y = _check_labels(labels, x.shape[0], model.config.output_dim)
    logits, _ = forward(model, x)
    preds = np.argmax(logits, axis=1)
    return float(np.mean(preds == y))


def flatten_params(model: MlpModel) -> np.ndarray:
    """Copy of the parameter vector in canonical order."""
    return model.params.copy()


def unflatten_params(model: MlpModel, vector: np.ndarray) -> MlpModel:
    """New model with the same config and the given flat parameters."""
    vector = np.asarray(vector, dtype=np.float64)
    if vector.shape != model.params.shape:
        raise ValueError(f"expected {model.params.shape[0]} parameters, got {vector.size}")
    return MlpModel(model.config, vector.copy())
