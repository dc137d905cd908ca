"""Dense float64 MLP arithmetic: forward pass, fused softmax/cross-entropy and
exact reverse-mode gradients with respect to the input and the parameters.

Everything here is pure numpy and deterministic. Ties in argmax resolve to the
lowest class index (numpy's ``argmax`` already behaves that way).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

ACTIVATIONS = ("relu",)


class ShapeError(ValueError):
    """Raised when an input or parameter has the wrong dimensions."""


class NonFiniteError(ValueError):
    """Raised when NaN/Inf shows up where finite values are required."""


def as_vector(x, name: str = "x") -> np.ndarray:
    """Convert to a finite, contiguous float64 1-D array."""
    arr = np.ascontiguousarray(x, dtype=np.float64)
    if arr.ndim != 1 or arr.size == 0:
        raise ShapeError(f"{name} must be a non-empty vector, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"{name} contains non-finite entries")
    return arr


@dataclass(frozen=True, eq=False)
class MlpParams:
    """Weights of a fully connected ReLU network.

    ``weights[i]`` has shape ``(out_i, in_i)`` and ``biases[i]`` shape
    ``(out_i,)``; the last layer produces the ``n_classes`` logits and has no
    activation.
    """

    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]
    activation: str = "relu"

    def __post_init__(self):
        if len(self.weights) == 0 or len(self.weights) != len(self.biases):
            raise ShapeError("need one bias per weight matrix and at least one layer")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unsupported activation {self.activation!r}")
        ws, bs = [], []
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            w = np.ascontiguousarray(w, dtype=np.float64)
            b = np.ascontiguousarray(b, dtype=np.float64)
            if w.ndim != 2 or b.ndim != 1 or b.shape[0] != w.shape[0] or w.size == 0:
                raise ShapeError(f"layer {i}: weight {w.shape} / bias {b.shape} mismatch")
            if i > 0 and w.shape[1] != ws[-1].shape[0]:
                raise ShapeError(
                    f"layer {i} expects {w.shape[1]} inputs, previous layer emits {ws[-1].shape[0]}"
                )
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise NonFiniteError(f"layer {i} has non-finite parameters")
            w.setflags(write=False)
            b.setflags(write=False)
            ws.append(w)
            bs.append(b)
        object.__setattr__(self, "weights", tuple(ws))
        object.__setattr__(self, "biases", tuple(bs))

    @property
    def n_inputs(self) -> int:
        return self.weights[0].shape[1]

    @property
    def n_classes(self) -> int:
        return self.weights[-1].shape[0]

    @property
    def layer_sizes(self) -> tuple[int, ...]:
        return (self.n_inputs,) + tuple(w.shape[0] for w in self.weights)

    def same_as(self, other: "MlpParams") -> bool:
        """Bitwise equality of all parameters."""
        if self.layer_sizes != other.layer_sizes or self.activation != other.activation:
            return False
        return all(
            np.array_equal(a, b) for a, b in zip(self.weights + self.biases, other.weights + other.biases)
        )

    # classifier view, so an MlpParams can be attacked directly
    def predict_proba(self, x) -> np.ndarray:
        return softmax(mlp_forward(self, x))

    def predict(self, x) -> int:
        return int(np.argmax(mlp_forward(self, x)))

    def loss_grad(self, x, label: int) -> tuple[float, np.ndarray, np.ndarray]:
        """Cross-entropy at ``x``, its input gradient and the probabilities."""
        return loss_and_input_gradient(self, x, label)


def init_mlp(layer_sizes: Sequence[int], seed: int) -> MlpParams:
    """He-normal weights, zero biases."""
    if len(layer_sizes) < 2 or any(int(s) <= 0 for s in layer_sizes):
        raise ShapeError(f"bad layer sizes {layer_sizes}")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
        weights.append(rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return MlpParams(tuple(weights), tuple(biases))


def _check_input(params: MlpParams, x) -> np.ndarray:
    x = as_vector(x)
    if x.shape[0] != params.n_inputs:
        raise ShapeError(f"input has {x.shape[0]} features, network expects {params.n_inputs}")
    return x


def _forward_cache(params: MlpParams, x: np.ndarray) -> tuple[np.ndarray, list, list]:
    # inputs to every layer and pre-activations of the hidden layers
    inputs, pre = [], []
    h = x
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        inputs.append(h)
        z = w @ h + b
        if i < last:
            pre.append(z)
            h = np.maximum(z, 0.0)
        else:
            h = z
    return h, inputs, pre


def mlp_forward(params: MlpParams, x) -> np.ndarray:
    """Logits of the network at a single input vector."""
    x = _check_input(params, x)
    return _forward_cache(params, x)[0]


def mlp_forward_batch(params: MlpParams, X) -> np.ndarray:
    """Logits for a batch ``X`` of shape ``(m, n)``; returns ``(m, k)``."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != params.n_inputs:
        raise ShapeError(f"batch shape {X.shape} incompatible with {params.n_inputs} inputs")
    h = X
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        h = h @ w.T + b
        if i < last:
            h = np.maximum(h, 0.0)
    return h


def softmax(logits) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    e = np.exp(z - np.max(z, axis=-1, keepdims=True))
    return e / np.sum(e, axis=-1, keepdims=True)


def softmax_ce(logits, label: int) -> tuple[np.ndarray, float]:
    """Softmax probabilities and ``-log p[label]``, max-shifted for stability."""
    z = as_vector(logits, "logits")
    if not 0 <= label < z.shape[0]:
        raise IndexError(f"label {label} out of range for {z.shape[0]} classes")
    shifted = z - np.max(z)
    e = np.exp(shifted)
    s = np.sum(e)
    probs = e / s
    loss = float(np.log(s) - shifted[label])
    return probs, loss


def cross_entropy_batch(logits: np.ndarray, labels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-row probabilities and losses for a batch of logits."""
    shifted = logits - np.max(logits, axis=1, keepdims=True)
    e = np.exp(shifted)
    s = np.sum(e, axis=1)
    probs = e / s[:, None]
    losses = np.log(s) - shifted[np.arange(len(labels)), labels]
    return probs, losses


def _backprop_input(params: MlpParams, inputs: list, pre: list, dlogits: np.ndarray) -> np.ndarray:
    g = dlogits
    for i in range(len(params.weights) - 1, -1, -1):
        g = params.weights[i].T @ g
        if i > 0:
            g = g * (pre[i - 1] > 0.0)
    return g


def loss_and_input_gradient(params: MlpParams, x, label: int) -> tuple[float, np.ndarray, np.ndarray]:
    """One forward and one backward pass: (loss, d loss / d x, probabilities)."""
    x = _check_input(params, x)
    logits, inputs, pre = _forward_cache(params, x)
    probs, loss = softmax_ce(logits, label)
    dlogits = probs.copy()
    dlogits[label] -= 1.0
    return loss, _backprop_input(params, inputs, pre, dlogits), probs


def input_gradient(params: MlpParams, x, label: int) -> np.ndarray:
    """Exact gradient of the cross-entropy loss with respect to the input."""
    return loss_and_input_gradient(params, x, label)[1]


def batch_loss_grads(
    params: MlpParams, X: np.ndarray, labels: np.ndarray, want_params: bool = True, want_input: bool = False
):
    """Mean cross-entropy over a batch and its gradients.

    Returns ``(mean_loss, param_grads, input_grads)`` where ``param_grads`` is a
    list of ``(dW, db)`` pairs (or None) and ``input_grads`` holds the
    per-sample gradient of each sample's own loss (or None).
    """
    X = np.asarray(X, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    m = X.shape[0]
    acts, pre = [X], []
    h = X
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = h @ w.T + b
        if i < last:
            pre.append(z)
            h = np.maximum(z, 0.0)
            acts.append(h)
        else:
            h = z
    probs, losses = cross_entropy_batch(h, labels)
    g = probs.copy()
    g[np.arange(m), labels] -= 1.0  # per-sample d loss_i / d logits_i
    grads = [None] * len(params.weights)
    for i in range(last, -1, -1):
        if want_params:
            grads[i] = ((g.T @ acts[i]) / m, g.sum(axis=0) / m)
        g = g @ params.weights[i]
        if i > 0:
            g = g * (pre[i - 1] > 0.0)
    return float(losses.mean()), (grads if want_params else None), (g if want_input else None)


class ClassifierLoss:
    """Cross-entropy of a network against a fixed label, seen as a scalar field.

    Gives MLPs the same ``value``/``gradient`` surface as the synthetic
    objectives used by the theory checks.
    """

    def __init__(self, params: MlpParams, label: int):
        self.params = params
        self.label = int(label)

    def value(self, x) -> float:
        return softmax_ce(mlp_forward(self.params, x), self.label)[1]

    def gradient(self, x) -> np.ndarray:
        return input_gradient(self.params, x, self.label)


def as_scalar_field(f, label: int | None = None):
    """Wrap an ``MlpParams`` (with a label) or pass through anything that
    already has ``value`` and ``gradient``."""
    if isinstance(f, MlpParams):
        if label is None:
            raise ValueError("a label is required to turn a classifier into a loss")
        return ClassifierLoss(f, label)
    if not (hasattr(f, "value") and hasattr(f, "gradient")):
        raise TypeError(f"{type(f).__name__} is neither MlpParams nor a scalar field")
    return f
