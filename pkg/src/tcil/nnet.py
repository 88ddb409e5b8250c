"""Small dense classifier with explicit forward and backward passes.

Gradients are exposed with respect to parameters (for training) and with
respect to inputs (for adversarial perturbation). All arithmetic is
float64 numpy. Weight matrices are stored as (out, in); a layer computes
``relu(W @ a + b)`` and the head is purely linear.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import LabelError, ShapeError

Array = np.ndarray

DEFAULT_FEATURE_DIMS = (32, 16)


def _he_uniform(rng: np.random.Generator, fan_out: int, fan_in: int) -> Array:
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=(fan_out, fan_in))


@dataclass
class MlpModel:
    """ReLU feature extractor plus a linear classification head.

    ``eval_count`` accumulates per-sample forward/backward evaluations.
    It is bookkeeping for complexity accounting and never affects results.
    """

    feature_weights: list[Array]
    feature_biases: list[Array]
    head_weight: Array
    head_bias: Array
    eval_count: int = 0

    @property
    def input_dim(self) -> int:
        if self.feature_weights:
            return self.feature_weights[0].shape[1]
        return self.head_weight.shape[1]

    @property
    def feature_dim(self) -> int:
        return self.head_weight.shape[1]

    @property
    def num_classes(self) -> int:
        return self.head_weight.shape[0]

    @classmethod
    def create(
        cls,
        input_dim: int,
        num_classes: int,
        feature_dims: tuple[int, ...] = DEFAULT_FEATURE_DIMS,
        seed: int = 0,
    ) -> "MlpModel":
        """New model with He-uniform weights and zero biases.

        ``feature_dims`` lists the widths of the ReLU layers; the last
        entry is the feature dimension. An empty tuple yields an identity
        feature extractor (the head applies directly to the input).
        """
        if input_dim < 1 or num_classes < 1:
            raise ValueError("input_dim and num_classes must be >= 1")
        rng = np.random.default_rng(seed)
        dims = [input_dim, *feature_dims]
        weights, biases = [], []
        for i in range(len(feature_dims)):
            weights.append(_he_uniform(rng, dims[i + 1], dims[i]))
            biases.append(np.zeros(dims[i + 1]))
        head_weight = _he_uniform(rng, num_classes, dims[-1])
        head_bias = np.zeros(num_classes)
        return cls(weights, biases, head_weight, head_bias)

    def copy(self) -> "MlpModel":
        return MlpModel(
            [w.copy() for w in self.feature_weights],
            [b.copy() for b in self.feature_biases],
            self.head_weight.copy(),
            self.head_bias.copy(),
        )

    def params(self) -> list[Array]:
        """Parameter arrays in a fixed order (mirrored by ParamGradients)."""
        out: list[Array] = []
        for w, b in zip(self.feature_weights, self.feature_biases):
            out.extend((w, b))
        out.extend((self.head_weight, self.head_bias))
        return out

    def params_finite(self) -> bool:
        return all(np.isfinite(p).all() for p in self.params())


@dataclass(frozen=True)
class ForwardTrace:
    """Intermediate values of one forward pass (single sample)."""

    inputs: Array
    pre_activations: list[Array]
    activations: list[Array]
    features: Array
    logits: Array


@dataclass(frozen=True)
class BatchTrace:
    """Row-stacked forward pass over a batch; arrays are (n, dim)."""

    inputs: Array
    pre_activations: list[Array]
    activations: list[Array]
    features: Array
    logits: Array


@dataclass(frozen=True)
class ParamGradients:
    feature_weights: list[Array]
    feature_biases: list[Array]
    head_weight: Array
    head_bias: Array

    def as_list(self) -> list[Array]:
        out: list[Array] = []
        for w, b in zip(self.feature_weights, self.feature_biases):
            out.extend((w, b))
        out.extend((self.head_weight, self.head_bias))
        return out


def forward(model: MlpModel, x: Array) -> ForwardTrace:
    """Evaluate the network on a single input vector."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (model.input_dim,):
        raise ShapeError(
            f"input has shape {x.shape}, expected ({model.input_dim},)"
        )
    batch = forward_batch(model, x[None, :])
    return ForwardTrace(
        inputs=x,
        pre_activations=[z[0] for z in batch.pre_activations],
        activations=[a[0] for a in batch.activations],
        features=batch.features[0],
        logits=batch.logits[0],
    )


def forward_batch(model: MlpModel, inputs: Array) -> BatchTrace:
    """Evaluate the network on an (n, input_dim) batch."""
    inputs = np.asarray(inputs, dtype=np.float64)
    if inputs.ndim != 2 or inputs.shape[1] != model.input_dim:
        raise ShapeError(
            f"batch has shape {inputs.shape}, expected (n, {model.input_dim})"
        )
    model.eval_count += inputs.shape[0]
    pre, act = [], []
    activation = inputs
    for w, b in zip(model.feature_weights, model.feature_biases):
        z = activation @ w.T + b
        activation = np.maximum(z, 0.0)
        pre.append(z)
        act.append(activation)
    logits = activation @ model.head_weight.T + model.head_bias
    return BatchTrace(inputs, pre, act, activation, logits)


def _softmax_rows(logits: Array, temperature: float = 1.0) -> Array:
    scaled = logits / temperature
    scaled = scaled - scaled.max(axis=1, keepdims=True)
    exp = np.exp(scaled)
    return exp / exp.sum(axis=1, keepdims=True)


def _check_labels(labels: Array, num_classes: int) -> None:
    if labels.size == 0:
        raise ValueError("batch must be nonempty")
    if labels.min() < 1 or labels.max() > num_classes:
        bad = labels[(labels < 1) | (labels > num_classes)][0]
        raise LabelError(f"label {bad} outside valid range [1, {num_classes}]")


def _stack_pairs(batch) -> tuple[Array, Array]:
    if len(batch) == 0:
        raise ValueError("batch must be nonempty")
    xs = np.stack([np.asarray(x, dtype=np.float64) for x, _ in batch])
    ys = np.array([y for _, y in batch], dtype=np.int64)
    return xs, ys


def param_gradients(model: MlpModel, batch, temperature: float = 1.0) -> ParamGradients:
    """Gradients of the mean cross-entropy of ``batch`` w.r.t. all parameters.

    ``batch`` is a sequence of (x, y) pairs with 1-based labels. Logits are
    divided by ``temperature`` before the softmax.
    """
    xs, ys = _stack_pairs(batch)
    return param_gradients_arrays(model, xs, ys, temperature)


def param_gradients_arrays(
    model: MlpModel, inputs: Array, labels: Array, temperature: float = 1.0
) -> ParamGradients:
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    labels = np.asarray(labels, dtype=np.int64)
    _check_labels(labels, model.num_classes)
    trace = forward_batch(model, inputs)
    n = inputs.shape[0]
    model.eval_count += n  # backward pass

    probs = _softmax_rows(trace.logits, temperature)
    probs[np.arange(n), labels - 1] -= 1.0
    dlogits = probs / (n * temperature)

    d_head_w = dlogits.T @ trace.features
    d_head_b = dlogits.sum(axis=0)
    upstream = dlogits @ model.head_weight

    d_weights: list[Array] = [None] * len(model.feature_weights)
    d_biases: list[Array] = [None] * len(model.feature_biases)
    for i in range(len(model.feature_weights) - 1, -1, -1):
        dz = upstream * (trace.pre_activations[i] > 0)
        below = trace.activations[i - 1] if i > 0 else trace.inputs
        d_weights[i] = dz.T @ below
        d_biases[i] = dz.sum(axis=0)
        upstream = dz @ model.feature_weights[i]
    return ParamGradients(d_weights, d_biases, d_head_w, d_head_b)


def input_gradient(model: MlpModel, x: Array, y_label: int) -> Array:
    """Gradient of the single-sample cross-entropy (T=1) w.r.t. the input."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (model.input_dim,):
        raise ShapeError(
            f"input has shape {x.shape}, expected ({model.input_dim},)"
        )
    return input_gradients(model, x[None, :], np.array([y_label]))[0]


def input_gradients(model: MlpModel, inputs: Array, labels: Array) -> Array:
    """Row-wise input gradients: row i is d CE(x_i, y_i) / d x_i at T=1."""
    labels = np.asarray(labels, dtype=np.int64)
    _check_labels(labels, model.num_classes)
    trace = forward_batch(model, inputs)
    n = inputs.shape[0]
    model.eval_count += n  # backward pass

    dlogits = _softmax_rows(trace.logits)
    dlogits[np.arange(n), labels - 1] -= 1.0

    upstream = dlogits @ model.head_weight
    for i in range(len(model.feature_weights) - 1, -1, -1):
        dz = upstream * (trace.pre_activations[i] > 0)
        upstream = dz @ model.feature_weights[i]
    return upstream


def widen_head(model: MlpModel, extra_classes: int) -> MlpModel:
    """Grow the head by ``extra_classes`` zero-initialized rows.

    Existing rows are copied bit-identically, so old-class logits are
    unchanged on every input.
    """
    if extra_classes < 1:
        raise ValueError("extra_classes must be >= 1")
    widened = model.copy()
    zeros_w = np.zeros((extra_classes, model.feature_dim))
    zeros_b = np.zeros(extra_classes)
    widened.head_weight = np.vstack([widened.head_weight, zeros_w])
    widened.head_bias = np.concatenate([widened.head_bias, zeros_b])
    widened.eval_count = 0
    return widened
