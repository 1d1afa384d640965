"""Dense feed-forward layers, weighted cross-entropy, and Adam.

Everything is float64 numpy with hand-derived gradients; the tests check
them against finite differences, so the math here is exact, not approximate.
Layers store weights as [fan_out, fan_in] and biases as [fan_out].
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dataset import ClassWeights
from .errors import ConfigError, ShapeError, TrainingError

ACTIVATIONS = ("identity", "relu", "sigmoid", "tanh", "softmax")

PROB_EPS = 1e-7  # probability clamp inside the loss


@dataclass
class DenseLayer:
    W: np.ndarray
    b: np.ndarray
    activation: str


def init_dense(n_in: int, n_out: int, activation: str, rng: np.random.Generator) -> DenseLayer:
    """Uniform init: He bound for relu, Xavier bound otherwise; zero biases."""
    if activation not in ACTIVATIONS:
        raise ConfigError(f"unknown activation {activation!r}, expected one of {ACTIVATIONS}")
    if n_in < 1 or n_out < 1:
        raise ConfigError(f"layer dims must be positive, got {n_in}->{n_out}")
    if activation == "relu":
        bound = np.sqrt(6.0 / n_in)
    else:
        bound = np.sqrt(6.0 / (n_in + n_out))
    W = rng.uniform(-bound, bound, size=(n_out, n_in))
    return DenseLayer(W=W, b=np.zeros(n_out), activation=activation)


def apply_activation(name: str, z: np.ndarray) -> np.ndarray:
    if name == "identity":
        return z
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "sigmoid":
        return 1.0 / (1.0 + np.exp(-z))
    if name == "tanh":
        return np.tanh(z)
    if name == "softmax":
        shifted = z - np.max(z, axis=-1, keepdims=True)
        e = np.exp(shifted)
        return e / np.sum(e, axis=-1, keepdims=True)
    raise ConfigError(f"unknown activation {name!r}")


def activation_backward(name: str, a: np.ndarray, upstream: np.ndarray) -> np.ndarray:
    """dL/dz from dL/da, using only the activation output a."""
    if name == "identity":
        return upstream
    if name == "relu":
        return upstream * (a > 0.0)
    if name == "sigmoid":
        return upstream * a * (1.0 - a)
    if name == "tanh":
        return upstream * (1.0 - a * a)
    if name == "softmax":
        inner = np.sum(upstream * a, axis=-1, keepdims=True)
        return a * (upstream - inner)
    raise ConfigError(f"unknown activation {name!r}")


def forward(layers: list[DenseLayer], x: np.ndarray) -> list[np.ndarray]:
    """Activations per layer for a [batch, features] input."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeError(f"input must be [batch, features], got shape {x.shape}")
    acts = []
    a = x
    for i, layer in enumerate(layers):
        if a.shape[1] != layer.W.shape[1]:
            raise ShapeError(
                f"layer {i} expects {layer.W.shape[1]} inputs, got {a.shape[1]}"
            )
        z = a @ layer.W.T + layer.b
        a = apply_activation(layer.activation, z)
        acts.append(a)
    return acts


def predict_proba(layers: list[DenseLayer], x: np.ndarray) -> np.ndarray:
    """Final-layer output flattened to [batch] for single-unit heads."""
    out = forward(layers, x)[-1]
    return out.reshape(len(out)) if out.shape[1] == 1 else out


def weighted_bce_loss(p, y, weights: ClassWeights):
    """Per-example weighted binary cross-entropy and its gradient in p.

    Probabilities are clamped to [1e-7, 1 - 1e-7] before the logs. Returns
    (loss, dL/dp) elementwise with no batch reduction.
    """
    p = np.clip(np.asarray(p, dtype=np.float64), PROB_EPS, 1.0 - PROB_EPS)
    y = np.asarray(y, dtype=np.float64)
    w = np.where(y == 1.0, weights.w_pos, weights.w_neg)
    loss = -w * (y * np.log(p) + (1.0 - y) * np.log1p(-p))
    grad = w * (p - y) / (p * (1.0 - p))
    return loss, grad


def mean_weighted_bce(layers: list[DenseLayer], x, y, weights: ClassWeights) -> float:
    loss, _ = weighted_bce_loss(predict_proba(layers, x), y, weights)
    return float(np.mean(loss))


def backward(
    layers: list[DenseLayer], x: np.ndarray, y: np.ndarray, weights: ClassWeights
):
    """Mean weighted-BCE loss and exact parameter gradients.

    Returns (loss, grads) where grads is a list of (dW, db) aligned with the
    layers. The network must end in one sigmoid unit.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    acts = forward(layers, x)
    p = acts[-1].reshape(-1)
    if acts[-1].shape[1] != 1:
        raise ShapeError(
            f"binary head expects one output unit, got {acts[-1].shape[1]}"
        )
    n = len(y)
    loss_vec, dldp = weighted_bce_loss(p, y, weights)
    loss = float(np.mean(loss_vec))

    # Clamped probabilities carry no gradient; match the loss exactly.
    clamped = (p <= PROB_EPS) | (p >= 1.0 - PROB_EPS)
    dldp = np.where(clamped, 0.0, dldp) / n

    grads: list[tuple[np.ndarray, np.ndarray]] = [None] * len(layers)
    delta = dldp.reshape(-1, 1)
    for i in range(len(layers) - 1, -1, -1):
        a = acts[i]
        delta = activation_backward(layers[i].activation, a, delta)
        below = acts[i - 1] if i > 0 else x
        grads[i] = (delta.T @ below, delta.sum(axis=0))
        if i > 0:
            delta = delta @ layers[i].W
    return loss, grads


@dataclass
class AdamState:
    """First/second moment accumulators for one parameter list."""

    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    # kept so a state can only ever be applied to its own parameter list
    shapes: list[tuple] = field(default_factory=list)


def adam_init(params: list[np.ndarray], lr: float = 1e-3, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8) -> AdamState:
    if lr <= 0:
        raise ConfigError(f"learning rate must be positive, got {lr}")
    return AdamState(
        m=[np.zeros_like(p) for p in params],
        v=[np.zeros_like(p) for p in params],
        lr=lr,
        beta1=beta1,
        beta2=beta2,
        eps=eps,
        shapes=[p.shape for p in params],
    )


def adam_step(params: list[np.ndarray], grads: list[np.ndarray], state: AdamState) -> AdamState:
    """One bias-corrected Adam update, in place on params."""
    if len(params) != len(state.m):
        raise ShapeError(
            f"state tracks {len(state.m)} tensors, got {len(params)} params"
        )
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    corr1 = 1.0 - b1**state.t
    corr2 = 1.0 - b2**state.t
    for i, (p, g) in enumerate(zip(params, grads)):
        if p.shape != state.shapes[i]:
            raise ShapeError(
                f"param {i} shape {p.shape} does not match state {state.shapes[i]}"
            )
        if g.shape != p.shape:
            raise ShapeError(
                f"grad {i} shape {g.shape} does not match param {p.shape}"
            )
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient in tensor {i}")
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * g
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * (g * g)
        m_hat = state.m[i] / corr1
        v_hat = state.v[i] / corr2
        p -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return state


def layer_params(layers: list[DenseLayer]) -> list[np.ndarray]:
    """Flat parameter list (W, b per layer) sharing memory with the layers."""
    out: list[np.ndarray] = []
    for layer in layers:
        out.append(layer.W)
        out.append(layer.b)
    return out


def flatten_grads(grads) -> list[np.ndarray]:
    out: list[np.ndarray] = []
    for dw, db in grads:
        out.append(dw)
        out.append(db)
    return out
