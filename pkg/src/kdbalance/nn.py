"""Dense feed-forward classifier with hand-written backpropagation.

Parameters are float64 throughout. Layer ``l`` maps ``h @ W[l] + b[l]`` with
``W[l]`` of shape ``(n_in, n_out)``; hidden layers apply tanh or relu, the
output layer is left linear (logits).

Flat parameter order: layer by layer, each layer's weights (row-major)
followed by its biases. Every flat gradient uses the same order.

Checkpoint text layout (UTF-8, ``\\n`` line endings)::

    # optional comment lines
    kdbalance-checkpoint 1
    {"activation": "tanh", "layer_sizes": [2, 8, 3], "temperature": 1.0}
    <one parameter per line, Python float repr, flat order>

``repr`` of a float round-trips exactly, so save/load is lossless.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .csvio import atomic_write_text

ACTIVATIONS = ("tanh", "relu", "identity")
CHECKPOINT_MAGIC = "kdbalance-checkpoint 1"


class ShapeError(ValueError):
    pass


@dataclass
class Network:
    layer_sizes: Tuple[int, ...]
    activation: str
    weights: List[np.ndarray]
    biases: List[np.ndarray]

    def __post_init__(self):
        self.layer_sizes = tuple(int(n) for n in self.layer_sizes)
        if len(self.layer_sizes) < 2 or min(self.layer_sizes) < 1:
            raise ShapeError(f"need >= 2 layers of size >= 1, got {self.layer_sizes}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}")
        if len(self.weights) != len(self.layer_sizes) - 1 or len(self.biases) != len(self.weights):
            raise ShapeError("one weight matrix and one bias vector per layer transition")
        for (n_in, n_out), w, b in zip(self._pairs(), self.weights, self.biases):
            if w.shape != (n_in, n_out) or b.shape != (n_out,):
                raise ShapeError(f"layer {n_in}->{n_out} has W{w.shape}, b{b.shape}")

    def _pairs(self):
        return list(zip(self.layer_sizes[:-1], self.layer_sizes[1:]))

    @property
    def n_params(self) -> int:
        return sum(n_in * n_out + n_out for n_in, n_out in self._pairs())

    @property
    def n_outputs(self) -> int:
        return self.layer_sizes[-1]

    def flatten(self) -> np.ndarray:
        parts = []
        for w, b in zip(self.weights, self.biases):
            parts.append(w.ravel())
            parts.append(b)
        return np.concatenate(parts)

    def with_params(self, flat) -> "Network":
        """A new network with this architecture and the given flat parameters."""
        return Network(self.layer_sizes, self.activation, *_unflatten(self.layer_sizes, flat))

    def copy(self) -> "Network":
        return self.with_params(self.flatten())


def _unflatten(layer_sizes: Sequence[int], flat) -> Tuple[List[np.ndarray], List[np.ndarray]]:
    flat = np.asarray(flat, dtype=np.float64)
    expected = sum(a * b + b for a, b in zip(layer_sizes[:-1], layer_sizes[1:]))
    if flat.shape != (expected,):
        raise ShapeError(f"expected {expected} parameters, got {flat.shape}")
    weights, biases, i = [], [], 0
    for n_in, n_out in zip(layer_sizes[:-1], layer_sizes[1:]):
        weights.append(flat[i : i + n_in * n_out].reshape(n_in, n_out).copy())
        i += n_in * n_out
        biases.append(flat[i : i + n_out].copy())
        i += n_out
    return weights, biases


@dataclass(frozen=True)
class FlatGrad:
    values: np.ndarray
    origin: str  # "dist" | "cls" | "combined"

    def __post_init__(self):
        if self.origin not in ("dist", "cls", "combined"):
            raise ValueError(f"unknown gradient origin {self.origin!r}")

    def __len__(self):
        return self.values.shape[0]


@dataclass(frozen=True)
class Batch:
    inputs: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        if self.inputs.ndim != 2 or self.labels.ndim != 1:
            raise ShapeError("inputs must be 2-D and labels 1-D")
        if self.inputs.shape[0] != self.labels.shape[0]:
            raise ShapeError("inputs and labels disagree on sample count")

    def __len__(self):
        return self.labels.shape[0]

    def take(self, idx) -> "Batch":
        return Batch(self.inputs[idx], self.labels[idx])


@dataclass(frozen=True)
class LossBreakdown:
    loss_dist: float
    loss_cls: float
    loss_total: float
    lam: float
    temperature: float


@dataclass
class ForwardCache:
    """Layer inputs and pre-activations saved by :func:`forward`."""

    weights: Tuple[np.ndarray, ...]
    inputs: List[np.ndarray] = field(default_factory=list)
    preacts: List[np.ndarray] = field(default_factory=list)


def init_network(layer_sizes: Sequence[int], activation: str = "tanh", seed: int = 0) -> Network:
    """Uniform(-1/sqrt(n_in), 1/sqrt(n_in)) weights from PCG64(seed), zero biases."""
    sizes = tuple(int(n) for n in layer_sizes)
    if len(sizes) < 2 or min(sizes) < 1:
        raise ShapeError(f"need >= 2 layers of size >= 1, got {sizes}")
    rng = np.random.Generator(np.random.PCG64(seed))
    weights, biases = [], []
    for n_in, n_out in zip(sizes[:-1], sizes[1:]):
        scale = 1.0 / math.sqrt(n_in)
        weights.append(rng.uniform(-scale, scale, size=(n_in, n_out)))
        biases.append(np.zeros(n_out))
    return Network(sizes, activation, weights, biases)


def _act(name: str, z: np.ndarray) -> np.ndarray:
    if name == "tanh":
        return np.tanh(z)
    if name == "relu":
        return np.maximum(z, 0.0)
    return z


def _act_grad(name: str, z: np.ndarray) -> np.ndarray:
    if name == "tanh":
        t = np.tanh(z)
        return 1.0 - t * t
    if name == "relu":
        return (z > 0).astype(np.float64)
    return np.ones_like(z)


def forward(net: Network, inputs) -> Tuple[np.ndarray, ForwardCache]:
    """Logits for ``inputs`` (a :class:`Batch` or a 2-D array) plus a backprop cache."""
    x = inputs.inputs if isinstance(inputs, Batch) else np.asarray(inputs, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != net.layer_sizes[0]:
        raise ShapeError(f"expected (n, {net.layer_sizes[0]}) inputs, got {x.shape}")
    cache = ForwardCache(tuple(net.weights))
    h = x
    last = len(net.weights) - 1
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        z = h @ w + b
        cache.inputs.append(h)
        cache.preacts.append(z)
        h = z if i == last else _act(net.activation, z)
    return h, cache


def predict(net: Network, inputs) -> np.ndarray:
    return np.argmax(forward(net, inputs)[0], axis=1)


def accuracy(net: Network, batch: Batch) -> float:
    return float(np.mean(predict(net, batch) == batch.labels))


def log_softmax(logits, temperature: float = 1.0) -> np.ndarray:
    if not temperature > 0:
        raise ValueError(f"temperature must be > 0, got {temperature}")
    z = np.asarray(logits, dtype=np.float64) / temperature
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def softmax_temp(logits, temperature: float = 1.0) -> np.ndarray:
    """Row-wise softmax of ``logits / temperature`` with max subtraction."""
    if not temperature > 0:
        raise ValueError(f"temperature must be > 0, got {temperature}")
    z = np.asarray(logits, dtype=np.float64) / temperature
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def loss_cls(logits: np.ndarray, labels) -> Tuple[float, np.ndarray]:
    """Mean cross-entropy against hard labels and its gradient w.r.t. logits."""
    labels = np.asarray(labels)
    n, k = logits.shape
    if labels.shape != (n,):
        raise ShapeError("one label per row expected")
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise ValueError(f"labels must lie in [0, {k})")
    logp = log_softmax(logits)
    rows = np.arange(n)
    loss = -float(logp[rows, labels].mean())
    grad = np.exp(logp)
    grad[rows, labels] -= 1.0
    return loss, grad / n


def loss_dist(student_logits: np.ndarray, teacher_logits: np.ndarray, temperature: float = 1.0) -> Tuple[float, np.ndarray]:
    """``T^2 * KL(p_teacher || p_student)`` at temperature T, averaged over rows.

    The teacher is a constant; the returned gradient is w.r.t. the student
    logits and equals ``T * (p_student - p_teacher) / n``.
    """
    if student_logits.shape != teacher_logits.shape:
        raise ShapeError(f"logit shapes differ: {student_logits.shape} vs {teacher_logits.shape}")
    T = float(temperature)
    n = student_logits.shape[0]
    log_ps = log_softmax(student_logits, T)
    log_pt = log_softmax(teacher_logits, T)
    pt = np.exp(log_pt)
    kl = (pt * (log_pt - log_ps)).sum(axis=1)
    # per-row KL can round to a tiny negative; the divergence itself cannot be
    loss = max(0.0, T * T * float(kl.mean()))
    grad = T * (np.exp(log_ps) - pt) / n
    return loss, grad


def combine_losses(l_dist: float, l_cls: float, lam: float, temperature: float = 1.0) -> LossBreakdown:
    return LossBreakdown(l_dist, l_cls, lam * l_dist + (1.0 - lam) * l_cls, lam, temperature)


def backward(net: Network, cache: ForwardCache, logit_grad: np.ndarray, origin: str = "combined") -> FlatGrad:
    """Gradient of a scalar loss w.r.t. all parameters, in flat order."""
    if len(cache.weights) != len(net.weights) or any(a is not b for a, b in zip(cache.weights, net.weights)):
        raise ShapeError("cache does not belong to this network")
    n = cache.inputs[0].shape[0]
    if logit_grad.shape != (n, net.n_outputs):
        raise ShapeError(f"logit gradient shape {logit_grad.shape} != {(n, net.n_outputs)}")
    parts: List[np.ndarray] = []
    delta = logit_grad
    for i in range(len(net.weights) - 1, -1, -1):
        if i != len(net.weights) - 1:
            delta = delta * _act_grad(net.activation, cache.preacts[i])
        gw = cache.inputs[i].T @ delta
        gb = delta.sum(axis=0)
        parts.append(gb)
        parts.append(gw.ravel())
        if i:
            delta = delta @ net.weights[i].T
    return FlatGrad(np.concatenate(parts[::-1]), origin)


def combine_grads(g_dist: FlatGrad, g_cls: FlatGrad, lam: float) -> FlatGrad:
    """``lam * g_dist + (1 - lam) * g_cls``."""
    if len(g_dist) != len(g_cls):
        raise ShapeError("gradient lengths differ")
    return FlatGrad(lam * g_dist.values + (1.0 - lam) * g_cls.values, "combined")


def sgd_step(net: Network, combined: FlatGrad, eta: float) -> Network:
    """``theta - eta * combined`` as a new network; ``net`` is left untouched."""
    if combined.origin != "combined":
        raise ValueError("sgd_step expects a combined gradient")
    if eta < 0:
        raise ValueError(f"eta must be >= 0, got {eta}")
    if len(combined) != net.n_params:
        raise ShapeError(f"gradient has {len(combined)} entries, network has {net.n_params}")
    return net.with_params(net.flatten() - eta * combined.values)


def checkpoint_text(net: Network, temperature: float = 1.0, comment: Optional[str] = None) -> str:
    header = json.dumps(
        {"activation": net.activation, "layer_sizes": list(net.layer_sizes), "temperature": float(temperature)},
        sort_keys=True,
    )
    lines = []
    if comment is not None:
        lines.extend("# " + c for c in comment.splitlines())
    lines += [CHECKPOINT_MAGIC, header]
    lines += [repr(float(v)) for v in net.flatten()]
    return "\n".join(lines) + "\n"


def parse_checkpoint(text: str) -> Tuple[Network, float]:
    lines = [ln for ln in text.splitlines() if not ln.startswith("#")]
    if len(lines) < 2 or lines[0] != CHECKPOINT_MAGIC:
        raise ValueError("not a kdbalance checkpoint")
    header = json.loads(lines[1])
    sizes = header["layer_sizes"]
    weights, biases = _unflatten(sizes, [float(v) for v in lines[2:]])
    return Network(tuple(sizes), header["activation"], weights, biases), float(header["temperature"])


def save_checkpoint(path, net: Network, temperature: float = 1.0, comment: Optional[str] = None) -> None:
    atomic_write_text(path, checkpoint_text(net, temperature, comment))


def load_checkpoint(path) -> Tuple[Network, float]:
    return parse_checkpoint(Path(path).read_text(encoding="utf-8"))
