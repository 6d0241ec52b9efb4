"""Small dense networks with hand-written backpropagation.

Covers what the guidance pipelines need: a softmax classifier with optional
hidden layers, a combined loss ``lambda_task * CE + w_i * lambda_guide * G``
with per-sample guide weights, and plain SGD with weight decay.

Checkpoint format (JSON, version 1)::

    {"format": "adacong.densenet", "version": 1,
     "activation": "relu" | "tanh" | "none",
     "dims": [d0, d1, ..., dL],
     "params": [W1 row-major (d0*d1 floats), b1 (d1), W2, b2, ...]}
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

CHECKPOINT_FORMAT = "adacong.densenet"
CHECKPOINT_VERSION = 1


class Activation(enum.Enum):
    RELU = "relu"
    TANH = "tanh"
    NONE = "none"


def softmax(z: np.ndarray, temperature: float = 1.0) -> np.ndarray:
    z = np.asarray(z, dtype=float) / temperature
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(z: np.ndarray, temperature: float = 1.0) -> np.ndarray:
    z = np.asarray(z, dtype=float) / temperature
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


class DenseNet:
    """Fully connected network; the activation is applied between layers only."""

    def __init__(self, layers: list[tuple[np.ndarray, np.ndarray]], activation: Activation = Activation.RELU):
        if not layers:
            raise ValueError("need at least one layer")
        for (w, b), (w_next, _) in zip(layers, layers[1:]):
            if w.shape[1] != w_next.shape[0]:
                raise ValueError(f"layer dims do not chain: {w.shape} -> {w_next.shape}")
        for w, b in layers:
            if b.shape != (w.shape[1],):
                raise ValueError(f"bias shape {b.shape} does not match weights {w.shape}")
        self.layers = [(np.array(w, dtype=float), np.array(b, dtype=float)) for w, b in layers]
        self.activation = Activation(activation)

    @classmethod
    def initialize(cls, dims: list[int], activation: Activation = Activation.RELU,
                   rng: np.random.Generator | int | None = None) -> "DenseNet":
        """Glorot-uniform weights, zero biases."""
        rng = np.random.default_rng(rng)
        layers = []
        for fan_in, fan_out in zip(dims, dims[1:]):
            a = np.sqrt(6.0 / (fan_in + fan_out))
            layers.append((rng.uniform(-a, a, size=(fan_in, fan_out)), np.zeros(fan_out)))
        return cls(layers, activation)

    @property
    def input_dim(self) -> int:
        return self.layers[0][0].shape[0]

    @property
    def output_dim(self) -> int:
        return self.layers[-1][0].shape[1]

    @property
    def dims(self) -> list[int]:
        return [self.input_dim] + [w.shape[1] for w, _ in self.layers]

    def copy(self) -> "DenseNet":
        return DenseNet([(w.copy(), b.copy()) for w, b in self.layers], self.activation)

    def _act(self, h):
        if self.activation is Activation.RELU:
            return np.maximum(h, 0.0)
        if self.activation is Activation.TANH:
            return np.tanh(h)
        return h

    def _act_grad(self, pre, post):
        if self.activation is Activation.RELU:
            return (pre > 0).astype(float)
        if self.activation is Activation.TANH:
            return 1.0 - post ** 2
        return np.ones_like(pre)

    def _trace(self, x: np.ndarray):
        x = np.asarray(x, dtype=float)
        if x.ndim != 2 or x.shape[1] != self.input_dim:
            raise ValueError(f"expected inputs of width {self.input_dim}, got shape {x.shape}")
        inputs, pres = [x], []
        h = x
        for i, (w, b) in enumerate(self.layers):
            pre = h @ w + b
            pres.append(pre)
            h = pre if i == len(self.layers) - 1 else self._act(pre)
            inputs.append(h)
        return inputs, pres

    def forward(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        inputs, _ = self._trace(x[None, :] if single else x)
        return inputs[-1][0] if single else inputs[-1]

    __call__ = forward

    def predict_proba(self, x, temperature: float = 1.0) -> np.ndarray:
        return softmax(self.forward(x), temperature)

    def accuracy(self, x, y) -> float:
        return float(np.mean(np.argmax(self.forward(x), axis=-1) == np.asarray(y)))

    # -- serialisation --------------------------------------------------
    def to_dict(self) -> dict:
        params: list[float] = []
        for w, b in self.layers:
            params.extend(w.ravel().tolist())
            params.extend(b.tolist())
        return {"format": CHECKPOINT_FORMAT, "version": CHECKPOINT_VERSION,
                "activation": self.activation.value, "dims": self.dims, "params": params}

    @classmethod
    def from_dict(cls, data: dict) -> "DenseNet":
        if data.get("format") != CHECKPOINT_FORMAT or data.get("version") != CHECKPOINT_VERSION:
            raise ValueError("unrecognised checkpoint header")
        dims = [int(d) for d in data["dims"]]
        flat = np.asarray(data["params"], dtype=float)
        expected = sum(a * b + b for a, b in zip(dims, dims[1:]))
        if flat.size != expected:
            raise ValueError(f"checkpoint holds {flat.size} parameters, dims imply {expected}")
        layers, pos = [], 0
        for a, b in zip(dims, dims[1:]):
            w = flat[pos:pos + a * b].reshape(a, b)
            pos += a * b
            layers.append((w, flat[pos:pos + b]))
            pos += b
        return cls(layers, Activation(data["activation"]))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path: str | Path) -> "DenseNet":
        return cls.from_dict(json.loads(Path(path).read_text()))


class GuideKind(enum.Enum):
    KL = "kl"
    MSE_LOGITS = "mse_logits"
    CE_HARD = "ce_hard"


@dataclass(frozen=True)
class LossSpec:
    """Weighted combined loss.

    The batch loss is the mean over samples of
    ``lambda_task * CE(z, y) + w_i * lambda_guide * G(z, target)``.
    KL guidance is ``T^2 * KL(softmax(t/T) || softmax(z/T))``; MSE guidance is
    the per-class mean squared difference of raw logits; CE_HARD is
    cross-entropy against integer guide labels.
    """

    guide: GuideKind | None = None
    temperature: float = 4.0
    lambda_task: float = 1.0
    lambda_guide: float = 1.0

    def __post_init__(self):
        if self.lambda_task < 0 or self.lambda_guide < 0:
            raise ValueError("loss coefficients must be non-negative")
        if self.lambda_task == 0 and (self.guide is None or self.lambda_guide == 0):
            raise ValueError("loss has no active term")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")

    @property
    def uses_guide(self) -> bool:
        return self.guide is not None and self.lambda_guide > 0


def _cross_entropy(z, y):
    logp = log_softmax(z)
    return -logp[np.arange(len(y)), y], np.exp(logp)


def loss_and_grads(net: DenseNet, x, y=None, spec: LossSpec = LossSpec(), guide_target=None, weights=None):
    """Return ``(loss, grads)`` where grads mirror ``net.layers``.

    Args:
        y: integer labels for the task term (ignored when lambda_task is 0).
        guide_target: teacher logits (KL, MSE) or integer labels (CE_HARD).
        weights: per-sample guide weights in [0, 1]; defaults to all ones.
    """
    inputs, pres = net._trace(np.asarray(x, dtype=float))
    z = inputs[-1]
    B, K = z.shape
    per_sample = np.zeros(B)
    dz = np.zeros_like(z)

    if spec.lambda_task > 0:
        if y is None:
            raise ValueError("task loss needs labels")
        y = np.asarray(y, dtype=int)
        ce, p = _cross_entropy(z, y)
        per_sample += spec.lambda_task * ce
        g = p.copy()
        g[np.arange(B), y] -= 1.0
        dz += spec.lambda_task * g

    if spec.uses_guide:
        if guide_target is None:
            raise ValueError("guide loss enabled but no guide target given")
        w = np.ones(B) if weights is None else np.asarray(weights, dtype=float)
        if w.shape != (B,) or np.any(w < 0) or np.any(w > 1):
            raise ValueError("per-sample weights must be a length-B vector in [0, 1]")
        T = spec.temperature
        if spec.guide is GuideKind.KL:
            t = np.asarray(guide_target, dtype=float)
            log_pt = log_softmax(t, T)
            log_ps = log_softmax(z, T)
            g_loss = T * T * np.sum(np.exp(log_pt) * (log_pt - log_ps), axis=1)
            g_grad = T * (np.exp(log_ps) - np.exp(log_pt))
        elif spec.guide is GuideKind.MSE_LOGITS:
            diff = z - np.asarray(guide_target, dtype=float)
            g_loss = np.mean(diff ** 2, axis=1)
            g_grad = 2.0 * diff / K
        else:
            labels = np.asarray(guide_target, dtype=int)
            g_loss, p = _cross_entropy(z, labels)
            g_grad = p.copy()
            g_grad[np.arange(B), labels] -= 1.0
        coef = spec.lambda_guide * w
        per_sample += coef * g_loss
        dz += coef[:, None] * g_grad

    loss = float(per_sample.mean())
    if not np.isfinite(loss):
        bad = np.flatnonzero(~np.isfinite(per_sample))
        raise FloatingPointError(
            f"non-finite loss on {bad.size}/{B} samples (first rows {bad[:5].tolist()}); "
            f"max |logit| = {np.nanmax(np.abs(z)):.3g}")

    delta = dz / B
    grads = [None] * len(net.layers)
    for i in range(len(net.layers) - 1, -1, -1):
        w, _ = net.layers[i]
        grads[i] = (inputs[i].T @ delta, delta.sum(axis=0))
        if i > 0:
            delta = (delta @ w.T) * net._act_grad(pres[i - 1], inputs[i])
    return loss, grads


def backward(net: DenseNet, x, y=None, spec: LossSpec = LossSpec(), guide_target=None, weights=None):
    return loss_and_grads(net, x, y, spec, guide_target, weights)[1]


def add_grads(a, b, scale: float = 1.0):
    return [(wa + scale * wb, ba + scale * bb) for (wa, ba), (wb, bb) in zip(a, b)]


def sgd_step(net: DenseNet, grads, learning_rate: float, weight_decay: float = 0.0) -> DenseNet:
    """In place: theta <- theta - lr * (g + wd * theta)."""
    if learning_rate <= 0:
        raise ValueError("learning rate must be positive")
    for (w, b), (gw, gb) in zip(net.layers, grads):
        w -= learning_rate * (gw + weight_decay * w)
        b -= learning_rate * (gb + weight_decay * b)
    return net


def train_classifier(net: DenseNet, x, y, epochs: int, learning_rate: float, batch_size: int = 64,
                     weight_decay: float = 0.0, rng: np.random.Generator | None = None) -> DenseNet:
    """Plain cross-entropy minibatch SGD; used for teachers and sanity checks."""
    rng = np.random.default_rng(rng)
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=int)
    spec = LossSpec()
    for _ in range(epochs):
        order = rng.permutation(len(y))
        for start in range(0, len(y), batch_size):
            idx = order[start:start + batch_size]
            sgd_step(net, backward(net, x[idx], y[idx], spec), learning_rate, weight_decay)
    return net
