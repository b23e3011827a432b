"""Small numpy multilayer perceptrons with hand-written backprop.

Used for both the per-node discriminators (softmax classification) and the
intra-skill Q-networks (regression on the selected action).
"""
from __future__ import annotations

import copy
import struct
from dataclasses import dataclass

import numpy as np

from .errors import ElsimError


def softmax(logits: np.ndarray) -> np.ndarray:
    """Numerically stable softmax along the last axis."""
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def logsumexp(x: np.ndarray, axis: int = -1) -> np.ndarray:
    m = x.max(axis=axis, keepdims=True)
    return (m + np.log(np.exp(x - m).sum(axis=axis, keepdims=True))).squeeze(axis)


class Adam:
    def __init__(self, beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m: np.ndarray | None = None
        self.v: np.ndarray | None = None
        self.t = 0

    def step(self, p: np.ndarray, g: np.ndarray, lr: float) -> None:
        if self.m is None:
            self.m = np.zeros_like(p)
            self.v = np.zeros_like(p)
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        self.m *= self.beta1
        self.m += (1.0 - self.beta1) * g
        self.v *= self.beta2
        self.v += (1.0 - self.beta2) * g * g
        p -= (lr / c1) * self.m / (np.sqrt(self.v / c2) + self.eps)


class Sgd:
    def step(self, p: np.ndarray, g: np.ndarray, lr: float) -> None:
        p -= lr * g


_OPTIMIZERS = {"adam": Adam, "sgd": Sgd}


class Mlp:
    """Fully connected network: tanh hidden layers, linear output.

    Weights are stored input-major (``W[i]`` has shape ``(fan_in, fan_out)``)
    so a batch ``x`` of shape ``(n, fan_in)`` maps through ``x @ W + b``.
    """

    def __init__(self, layer_sizes, rng: np.random.Generator | None = None,
                 zero: bool = False, optimizer: str = "adam"):
        sizes = tuple(int(s) for s in layer_sizes)
        if len(sizes) < 2 or any(s <= 0 for s in sizes):
            raise ElsimError(f"invalid layer sizes {layer_sizes!r}")
        if optimizer not in _OPTIMIZERS:
            raise ElsimError(f"unknown optimizer {optimizer!r}")
        if rng is None and not zero:
            rng = np.random.default_rng()
        self.layer_sizes = sizes
        self.optimizer = optimizer
        n_total = sum(i * o + o for i, o in zip(sizes[:-1], sizes[1:]))
        # every layer is a view into one flat vector so optimizers and polyak
        # averaging run as single vector operations
        self.flat = np.zeros(n_total)
        self.weights, self.biases = self._views(self.flat)
        if not zero:
            for w, b in zip(self.weights, self.biases):
                bound = 1.0 / np.sqrt(w.shape[0])
                w[...] = rng.uniform(-bound, bound, size=w.shape)
                b[...] = rng.uniform(-bound, bound, size=b.shape)
        self._opt = None

    def _views(self, flat: np.ndarray):
        weights, biases = [], []
        pos = 0
        for fan_in, fan_out in zip(self.layer_sizes[:-1], self.layer_sizes[1:]):
            weights.append(flat[pos:pos + fan_in * fan_out].reshape(fan_in, fan_out))
            pos += fan_in * fan_out
            biases.append(flat[pos:pos + fan_out])
            pos += fan_out
        return weights, biases

    def __deepcopy__(self, memo):
        new = copy.copy(self)
        new.flat = self.flat.copy()
        new.weights, new.biases = new._views(new.flat)
        new._opt = copy.deepcopy(self._opt, memo)
        return new

    @property
    def params(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    @property
    def n_params(self) -> int:
        return self.flat.size

    def clone(self) -> "Mlp":
        return copy.deepcopy(self)

    def _check_input(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim not in (1, 2) or x.shape[-1] != self.layer_sizes[0]:
            raise ElsimError(
                f"input of shape {x.shape} does not match input size {self.layer_sizes[0]}")
        return x

    def __call__(self, x) -> np.ndarray:
        return forward(self, x)

    def activations(self, x: np.ndarray) -> list[np.ndarray]:
        """Forward pass on a 2-D batch keeping every layer's output."""
        acts = [x]
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = acts[-1] @ w + b
            acts.append(z if i == last else np.tanh(z))
        return acts

    def backward(self, acts: list[np.ndarray], grad_out: np.ndarray) -> np.ndarray:
        """Gradient of ``sum(grad_out * output)`` as a flat vector aligned with ``flat``."""
        flat = np.empty_like(self.flat)
        gw, gb = self._views(flat)
        delta = grad_out
        for i in range(len(self.weights) - 1, -1, -1):
            np.dot(acts[i].T, delta, out=gw[i])
            delta.sum(axis=0, out=gb[i])
            if i > 0:
                delta = (delta @ self.weights[i].T) * (1.0 - acts[i] ** 2)
        return flat

    def apply_gradients(self, grad: np.ndarray, lr: float) -> None:
        if self._opt is None:
            self._opt = _OPTIMIZERS[self.optimizer]()
        self._opt.step(self.flat, grad, lr)

    def to_bytes(self) -> bytes:
        """Layer-size header (little-endian uint32 count + sizes) then float64 params."""
        head = struct.pack(f"<I{len(self.layer_sizes)}I", len(self.layer_sizes), *self.layer_sizes)
        return head + self.flat.astype("<f8").tobytes()

    @classmethod
    def from_bytes(cls, data: bytes, optimizer: str = "adam") -> "Mlp":
        (n,) = struct.unpack_from("<I", data, 0)
        sizes = struct.unpack_from(f"<{n}I", data, 4)
        net = cls(sizes, zero=True, optimizer=optimizer)
        flat = np.frombuffer(data, dtype="<f8", offset=4 + 4 * n)
        if flat.size != net.n_params:
            raise ElsimError("parameter payload does not match layer-size header")
        net.flat[...] = flat
        return net


@dataclass
class TrainBatch:
    """Inputs plus class labels, or regression targets for ``output_index``."""
    inputs: np.ndarray
    targets: np.ndarray
    output_index: np.ndarray | None = None

    def __post_init__(self):
        self.inputs = np.atleast_2d(np.asarray(self.inputs, dtype=np.float64))
        self.targets = np.asarray(self.targets)
        if len(self.inputs) < 1 or len(self.inputs) != len(self.targets):
            raise ElsimError("a batch needs at least one input and one target per input")
        if self.output_index is not None:
            self.output_index = np.asarray(self.output_index, dtype=np.int64)
            if len(self.output_index) != len(self.targets):
                raise ElsimError("output_index length must match targets")


def forward(net: Mlp, x) -> np.ndarray:
    x = net._check_input(x)
    if x.ndim == 1:
        return net.activations(x[None, :])[-1][0]
    return net.activations(x)[-1]


def classifier_loss_and_grads(net: Mlp, inputs: np.ndarray, labels: np.ndarray):
    """Mean cross-entropy of ``softmax(net(inputs))`` against integer labels."""
    inputs = net._check_input(np.atleast_2d(inputs))
    labels = np.asarray(labels, dtype=np.int64)
    n_out = net.layer_sizes[-1]
    if labels.size and (labels.min() < 0 or labels.max() >= n_out):
        raise ElsimError(f"labels must lie in [0, {n_out})")
    acts = net.activations(inputs)
    logp = log_softmax(acts[-1])
    rows = np.arange(len(labels))
    loss = -logp[rows, labels].mean()
    grad = np.exp(logp)
    grad[rows, labels] -= 1.0
    grad /= len(labels)
    return float(loss), net.backward(acts, grad)


def regression_loss_and_grads(net: Mlp, inputs: np.ndarray, targets: np.ndarray,
                              output_index: np.ndarray):
    """Mean squared error between ``net(inputs)[i, output_index[i]]`` and targets."""
    inputs = net._check_input(np.atleast_2d(inputs))
    acts = net.activations(inputs)
    rows = np.arange(len(targets))
    diff = acts[-1][rows, output_index] - targets
    grad = np.zeros_like(acts[-1])
    grad[rows, output_index] = 2.0 * diff / len(targets)
    return float(np.mean(diff * diff)), net.backward(acts, grad)


def train_classifier_step(net: Mlp, batch: TrainBatch, lr: float) -> float:
    """One optimizer step on cross-entropy; returns the pre-step loss."""
    loss, grads = classifier_loss_and_grads(net, batch.inputs, batch.targets)
    net.apply_gradients(grads, lr)
    return loss


def train_regression_step(net: Mlp, batch: TrainBatch, lr: float) -> float:
    index = batch.output_index
    if index is None:
        if net.layer_sizes[-1] != 1:
            raise ElsimError("regression on a multi-output net needs output_index")
        index = np.zeros(len(batch.targets), dtype=np.int64)
    loss, grads = regression_loss_and_grads(
        net, batch.inputs, batch.targets.astype(np.float64), index)
    net.apply_gradients(grads, lr)
    return loss


def polyak_update(target: Mlp, online: Mlp, tau: float) -> None:
    if target.layer_sizes != online.layer_sizes:
        raise ElsimError("polyak update between networks of different shapes")
    if not 0.0 <= tau <= 1.0:
        raise ElsimError(f"tau must lie in [0, 1], got {tau}")
    target.flat *= 1.0 - tau
    target.flat += tau * online.flat
