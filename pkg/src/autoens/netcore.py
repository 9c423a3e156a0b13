"""Minimal dense softmax classifier with SGD training and a finite-difference
gradient oracle.

All math is float64 and every operation is a pure function over parameter
values: nothing mutates its inputs, so parameter sets can be snapshotted,
persisted, and compared bit-for-bit. Hidden layers use tanh; the final dense
layer (the "probe layer") feeds a numerically stable softmax.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, InputError, NumericError, ShapeError


@dataclass
class ModelParams:
    """Weights and biases of a feed-forward softmax classifier.

    ``layer_dims`` lists widths from input to class count; ``weights[i]``
    maps layer i to layer i+1 with shape (dims[i], dims[i+1]).
    """

    layer_dims: tuple[int, ...]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    rng_seed: int

    def copy(self) -> "ModelParams":
        return ModelParams(
            layer_dims=self.layer_dims,
            weights=[w.copy() for w in self.weights],
            biases=[b.copy() for b in self.biases],
            rng_seed=self.rng_seed,
        )

    @property
    def n_classes(self) -> int:
        return self.layer_dims[-1]

    def param_count(self) -> int:
        return sum(w.size for w in self.weights) + sum(b.size for b in self.biases)


@dataclass
class Batch:
    """A block of input rows with integer class labels."""

    inputs: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.inputs.ndim != 2:
            raise ShapeError("batch inputs must be 2-D (rows, features)")
        if self.inputs.shape[0] < 1:
            raise InputError("batch must contain at least one row")
        if self.labels.ndim != 1 or self.labels.shape[0] != self.inputs.shape[0]:
            raise ShapeError("labels must be 1-D with one entry per input row")
        if self.labels.min() < 0:
            raise InputError("labels must be nonnegative class indices")

    def __len__(self) -> int:
        return self.inputs.shape[0]


@dataclass(frozen=True)
class Metrics:
    mean_loss: float
    accuracy: float


@dataclass
class Gradients:
    """Per-layer loss gradients, shaped exactly like the model parameters."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]


def init_model(layer_dims, seed: int) -> ModelParams:
    """Deterministic initialization: zero biases, uniform weights on
    [-1/sqrt(fan_in), 1/sqrt(fan_in)]."""
    dims = tuple(int(d) for d in layer_dims)
    if len(dims) < 2:
        raise ConfigurationError(f"need at least input and output layers, got dims {dims}")
    if any(d < 1 for d in dims):
        raise ConfigurationError(f"layer dims must be positive, got {dims}")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        scale = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-scale, scale, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return ModelParams(layer_dims=dims, weights=weights, biases=biases, rng_seed=int(seed))


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax with max subtraction for numerical stability."""
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def _check_inputs(params: ModelParams, inputs) -> np.ndarray:
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != params.layer_dims[0]:
        raise ShapeError(
            f"expected inputs of width {params.layer_dims[0]}, got shape {x.shape}"
        )
    return x


def _check_labels(params: ModelParams, labels: np.ndarray):
    if labels.max() >= params.n_classes:
        raise InputError(
            f"label {int(labels.max())} out of range for {params.n_classes} classes"
        )


def _activations(params: ModelParams, x: np.ndarray):
    acts = [x]
    for w, b in zip(params.weights[:-1], params.biases[:-1]):
        acts.append(np.tanh(acts[-1] @ w + b))
    logits = acts[-1] @ params.weights[-1] + params.biases[-1]
    return acts, logits


def forward(params: ModelParams, inputs) -> np.ndarray:
    """Softmax class probabilities, one row per input row."""
    x = _check_inputs(params, inputs)
    _, logits = _activations(params, x)
    return softmax(logits)


def _mean_cross_entropy(probs: np.ndarray, labels: np.ndarray) -> float:
    return float(-np.mean(np.log(probs[np.arange(labels.shape[0]), labels])))


def batch_loss(params: ModelParams, batch: Batch) -> float:
    """Mean cross-entropy of the batch, without gradients."""
    _check_labels(params, batch.labels)
    return _mean_cross_entropy(forward(params, batch.inputs), batch.labels)


def loss_and_grad(params: ModelParams, batch: Batch) -> tuple[float, Gradients]:
    """Mean cross-entropy over the batch and its backprop gradient.

    The gradient mirrors the parameter layout exactly, layer by layer.
    """
    x = _check_inputs(params, batch.inputs)
    _check_labels(params, batch.labels)
    n = x.shape[0]
    acts, logits = _activations(params, x)
    probs = softmax(logits)
    loss = _mean_cross_entropy(probs, batch.labels)

    delta = probs.copy()
    delta[np.arange(n), batch.labels] -= 1.0
    delta /= n
    n_layers = len(params.weights)
    g_w: list[np.ndarray] = [None] * n_layers  # type: ignore[list-item]
    g_b: list[np.ndarray] = [None] * n_layers  # type: ignore[list-item]
    for layer in reversed(range(n_layers)):
        g_w[layer] = acts[layer].T @ delta
        g_b[layer] = delta.sum(axis=0)
        if layer:
            # tanh'(z) expressed through the stored activation
            delta = (delta @ params.weights[layer].T) * (1.0 - acts[layer] ** 2)
    return loss, Gradients(weights=g_w, biases=g_b)


def sgd_step(
    params: ModelParams,
    grad: Gradients,
    lr: float,
    *,
    momentum: float = 0.0,
    weight_decay: float = 0.0,
    velocity: Gradients | None = None,
) -> ModelParams:
    """One SGD update ``p - lr * g``.

    Momentum and weight decay are off by default. With ``momentum > 0`` a
    ``velocity`` buffer must be supplied; it is updated in place.
    """
    if not lr > 0:
        raise InputError(f"learning rate must be positive, got {lr}")
    for g in grad.weights + grad.biases:
        if not np.all(np.isfinite(g)):
            raise NumericError("non-finite gradient; step refused")
    if momentum > 0.0 and velocity is None:
        raise InputError("momentum requires a velocity buffer")

    def stepped(p, g, v):
        d = g + weight_decay * p if weight_decay != 0.0 else g
        if momentum > 0.0:
            v *= momentum
            v += d
            d = v
        return p - lr * d

    new_w = [
        stepped(p, g, velocity.weights[i] if velocity else None)
        for i, (p, g) in enumerate(zip(params.weights, grad.weights))
    ]
    new_b = [
        stepped(p, g, velocity.biases[i] if velocity else None)
        for i, (p, g) in enumerate(zip(params.biases, grad.biases))
    ]
    return ModelParams(
        layer_dims=params.layer_dims, weights=new_w, biases=new_b, rng_seed=params.rng_seed
    )


def evaluate(params: ModelParams, batch: Batch) -> Metrics:
    """Mean loss and argmax accuracy; argmax ties go to the lowest class index."""
    _check_labels(params, batch.labels)
    probs = forward(params, batch.inputs)
    n = len(batch)
    preds = np.argmax(probs, axis=1)  # np.argmax picks the first (lowest) index on ties
    correct = int(np.count_nonzero(preds == batch.labels))
    return Metrics(mean_loss=_mean_cross_entropy(probs, batch.labels), accuracy=correct / n)


def probe_weights(params: ModelParams) -> np.ndarray:
    """Final dense layer flattened: row-major weights then biases."""
    return np.concatenate([params.weights[-1].ravel(), params.biases[-1]])


def central_difference(loss_fn, params: ModelParams, eps: float) -> Gradients:
    """Central-difference gradient of ``loss_fn(params)`` per coordinate."""
    if not (0.0 < eps <= 1e-3):
        raise InputError(f"eps must lie in (0, 1e-3], got {eps}")
    work = params.copy()
    g_w = [np.zeros_like(w) for w in work.weights]
    g_b = [np.zeros_like(b) for b in work.biases]
    for arr, out in zip(work.weights + work.biases, g_w + g_b):
        flat = arr.reshape(-1)
        gflat = out.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            hi = loss_fn(work)
            flat[i] = orig - eps
            lo = loss_fn(work)
            flat[i] = orig
            gflat[i] = (hi - lo) / (2.0 * eps)
    return Gradients(weights=g_w, biases=g_b)


def finite_diff_grad(params: ModelParams, batch: Batch, eps: float = 1e-6) -> Gradients:
    """Finite-difference oracle for ``loss_and_grad``.

    Exact to O(eps^2); intended for nets up to a few thousand parameters.
    """
    return central_difference(lambda p: batch_loss(p, batch), params, eps)


def train_epoch(
    params: ModelParams,
    data: Batch,
    lr: float,
    batch_size: int = 32,
    rng: np.random.Generator | None = None,
) -> tuple[ModelParams, float]:
    """One minibatch-SGD pass over the data (shuffled when given an rng).

    Returns the updated parameters and the sample-weighted mean loss
    observed during the pass.
    """
    if batch_size < 1:
        raise ConfigurationError(f"batch size must be positive, got {batch_size}")
    n = len(data)
    order = np.arange(n) if rng is None else rng.permutation(n)
    total = 0.0
    for start in range(0, n, batch_size):
        idx = order[start : start + batch_size]
        mb = Batch(data.inputs[idx], data.labels[idx])
        loss, grad = loss_and_grad(params, mb)
        params = sgd_step(params, grad, lr)
        total += loss * idx.size
    return params, total / n
