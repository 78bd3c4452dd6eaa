"""Dense feedforward binary classifier with hand-written backpropagation.

The network maps a feature vector to a single logit; a sigmoid on the
(clamped) logit gives P(Y=+1 | x).  Labels live in {-1,+1} at the API
boundary and are mapped to {0,1} internally for cross-entropy.

Everything here is a pure function over immutable value objects: steps
return fresh parameter structures and never mutate their inputs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Logits are clamped to this magnitude before the sigmoid so that both
# p and 1-p stay representable and the cross-entropy stays finite.
LOGIT_CLAMP = 30.0

ACTIVATIONS = ("relu", "sigmoid")


class ShapeError(ValueError):
    """Input dimensions incompatible with the parameter structure."""


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters for the bi-level trainer.

    eta is the one-step-forward learning rate, eta_prime the meta learning
    rate, gamma the actual-training learning rate.
    """

    eta: float = 0.1
    eta_prime: float = 0.05
    gamma: float = 0.1
    batch_size: int = 256
    steps: int = 300
    hidden_sizes: tuple[int, ...] = (32,)
    activation: str = "relu"
    seed: int = 0

    def __post_init__(self):
        if self.eta <= 0 or self.eta_prime < 0 or self.gamma <= 0:
            raise ValueError("learning rates must be positive (eta_prime may be 0)")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2")
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}")
        if any(h < 1 for h in self.hidden_sizes):
            raise ValueError("hidden sizes must be positive")


@dataclass(frozen=True)
class ModelParams:
    """Weights and biases of the classifier; the final layer emits one logit."""

    layer_weights: tuple[np.ndarray, ...]
    layer_biases: tuple[np.ndarray, ...]
    activation: str = "relu"

    def __post_init__(self):
        if len(self.layer_weights) != len(self.layer_biases):
            raise ShapeError("weights and biases must pair up")
        for t in range(len(self.layer_weights) - 1):
            if self.layer_weights[t].shape[1] != self.layer_weights[t + 1].shape[0]:
                raise ShapeError(
                    f"layer {t} output dim {self.layer_weights[t].shape[1]} != "
                    f"layer {t + 1} input dim {self.layer_weights[t + 1].shape[0]}"
                )
        for w, b in zip(self.layer_weights, self.layer_biases):
            if w.shape[1] != b.shape[0]:
                raise ShapeError("bias dimension must match layer output dimension")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise ValueError("parameters must be finite")
        if self.layer_weights[-1].shape[1] != 1:
            raise ShapeError("output layer must emit a single logit")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}")

    @property
    def n_inputs(self) -> int:
        return self.layer_weights[0].shape[0]


@dataclass(frozen=True)
class Gradients:
    """Gradient structure shaped like ModelParams."""

    layer_weights: tuple[np.ndarray, ...]
    layer_biases: tuple[np.ndarray, ...]


def init_params(
    n_inputs: int,
    hidden_sizes: tuple[int, ...],
    activation: str = "relu",
    seed=0,
) -> ModelParams:
    """Seeded uniform init in [-s, s] with s = sqrt(6 / (fan_in + fan_out)).

    seed may be an int, a SeedSequence, or a Generator.
    """
    rng = np.random.default_rng(seed)
    dims = [n_inputs, *hidden_sizes, 1]
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        s = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-s, s, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return ModelParams(tuple(weights), tuple(biases), activation)


def _sigmoid(t: np.ndarray) -> np.ndarray:
    out = np.empty_like(t, dtype=float)
    pos = t >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-t[pos]))
    e = np.exp(t[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def _activate(u: np.ndarray, kind: str) -> np.ndarray:
    if kind == "relu":
        return np.maximum(u, 0.0)
    return _sigmoid(u)


def _activate_grad(u: np.ndarray, h: np.ndarray, kind: str) -> np.ndarray:
    # derivative expressed via pre-activation u and activation value h
    if kind == "relu":
        return np.where(u > 0, 1.0, 0.0)
    return h * (1.0 - h)


def forward_batch(params: ModelParams, x: np.ndarray) -> tuple[np.ndarray, np.ndarray, list]:
    """Return (probabilities, raw logits, cache) for an (n, d) batch.

    The cache holds per-layer pre-activations and activations for backprop.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if x.shape[1] != params.n_inputs:
        raise ShapeError(f"input dim {x.shape[1]} != model dim {params.n_inputs}")
    h = x
    cache = []
    n_layers = len(params.layer_weights)
    for t, (w, b) in enumerate(zip(params.layer_weights, params.layer_biases)):
        u = h @ w + b
        if t < n_layers - 1:
            a = _activate(u, params.activation)
        else:
            a = u  # linear output layer
        cache.append((h, u, a))
        h = a
    logits = h[:, 0]
    probs = _sigmoid(np.clip(logits, -LOGIT_CLAMP, LOGIT_CLAMP))
    return probs, logits, cache


def forward(params: ModelParams, x: np.ndarray) -> float:
    """P(Y=+1 | x) for a single feature vector, strictly inside (0, 1)."""
    probs, _, _ = forward_batch(params, np.asarray(x, dtype=float).reshape(1, -1))
    return float(probs[0])


def predict_labels(params: ModelParams, x: np.ndarray) -> np.ndarray:
    """Threshold at 0.5; ties go to +1."""
    probs, _, _ = forward_batch(params, x)
    return np.where(probs >= 0.5, 1, -1)


def bce_loss(p: float, y: int) -> float:
    """Binary cross-entropy of a probability against a label in {-1,+1}."""
    p = float(p)
    if not 0.0 < p < 1.0:
        raise ValueError(f"probability {p} outside (0,1)")
    return -np.log(p) if y == 1 else -np.log1p(-p)


def bce_batch(probs: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Vectorized binary cross-entropy; y in {-1,+1}."""
    probs = np.asarray(probs, dtype=float)
    if np.any(probs <= 0.0) or np.any(probs >= 1.0):
        raise ValueError("probabilities must lie strictly inside (0,1)")
    pos = np.asarray(y) == 1
    return np.where(pos, -np.log(probs), -np.log1p(-probs))


def backprop(params: ModelParams, cache: list, dlogit: np.ndarray) -> Gradients:
    """Backpropagate per-sample dL/dlogit through the cached forward pass."""
    n_layers = len(params.layer_weights)
    dW = [None] * n_layers
    db = [None] * n_layers
    delta = np.asarray(dlogit, dtype=float).reshape(-1, 1)
    for t in range(n_layers - 1, -1, -1):
        h_in, u, a = cache[t]
        if t < n_layers - 1:
            delta = delta * _activate_grad(u, a, params.activation)
        dW[t] = h_in.T @ delta
        db[t] = delta.sum(axis=0)
        if t > 0:
            delta = delta @ params.layer_weights[t].T
    return Gradients(tuple(dW), tuple(db))


def grad(params: ModelParams, batch_x: np.ndarray, batch_y: np.ndarray,
         batch_a: np.ndarray, loss_fn) -> Gradients:
    """Analytic gradient of the mean of loss_fn over the batch.

    loss_fn(probs, logits, y, a) must return per-sample loss values and
    per-sample dloss/dlogit; the logit clamp zeroes the derivative where
    it saturates so the gradient matches finite differences exactly.
    """
    batch_x = np.atleast_2d(np.asarray(batch_x, dtype=float))
    if batch_x.shape[0] == 0:
        raise ValueError("batch must be nonempty")
    probs, logits, cache = forward_batch(params, batch_x)
    _, dlogit = loss_fn(probs, logits, batch_y, batch_a)
    dlogit = dlogit * (np.abs(logits) < LOGIT_CLAMP)
    return backprop(params, cache, dlogit / batch_x.shape[0])


def sgd_step(params: ModelParams, grads: Gradients, lr: float) -> ModelParams:
    """params - lr * grads, elementwise; the input structure is untouched."""
    new_w = tuple(w - lr * g for w, g in zip(params.layer_weights, grads.layer_weights))
    new_b = tuple(b - lr * g for b, g in zip(params.layer_biases, grads.layer_biases))
    return ModelParams(new_w, new_b, params.activation)


def flatten(grads: Gradients) -> np.ndarray:
    """Concatenate all gradient entries into one vector (testing helper)."""
    parts = [g.ravel() for g in grads.layer_weights] + [g.ravel() for g in grads.layer_biases]
    return np.concatenate(parts)
