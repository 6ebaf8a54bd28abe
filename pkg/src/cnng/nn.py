"""Dense feedforward network: forward pass, cross-entropy backprop, mini-batch SGD.

Everything is float64 and seeded so that two runs with the same inputs give
bit-identical parameters.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np


class Activation(str, Enum):
    RELU = "relu"
    SOFTMAX = "softmax"


class ShapeError(ValueError):
    """Layer chain or input dimension does not line up."""


@dataclass(frozen=True)
class LayerSpec:
    input_dim: int
    output_dim: int
    activation: Activation = Activation.RELU

    def __post_init__(self):
        if self.input_dim < 1 or self.output_dim < 1:
            raise ShapeError(f"layer dimensions must be >= 1, got {self.input_dim}->{self.output_dim}")
        object.__setattr__(self, "activation", Activation(self.activation))


@dataclass
class Layer:
    weights: np.ndarray  # (output_dim, input_dim)
    bias: np.ndarray  # (output_dim,)
    activation: Activation

    @property
    def input_dim(self) -> int:
        return self.weights.shape[1]

    @property
    def output_dim(self) -> int:
        return self.weights.shape[0]


@dataclass
class FeedforwardNetwork:
    layers: list[Layer]

    def __post_init__(self):
        _check_chain([LayerSpec(l.input_dim, l.output_dim, l.activation) for l in self.layers])
        for layer in self.layers:
            if layer.bias.shape != (layer.output_dim,):
                raise ShapeError(f"bias shape {layer.bias.shape} != ({layer.output_dim},)")

    @property
    def input_dim(self) -> int:
        return self.layers[0].input_dim

    @property
    def num_classes(self) -> int:
        return self.layers[-1].output_dim

    @property
    def specs(self) -> list[LayerSpec]:
        return [LayerSpec(l.input_dim, l.output_dim, l.activation) for l in self.layers]

    def num_parameters(self) -> int:
        return sum(l.weights.size + l.bias.size for l in self.layers)

    def copy(self) -> "FeedforwardNetwork":
        return FeedforwardNetwork(
            [Layer(l.weights.copy(), l.bias.copy(), l.activation) for l in self.layers]
        )


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.1
    batch_size: int = 32
    epochs: int = 1
    seed: int = 42
    shuffle: bool = True

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must fit in an unsigned 64-bit integer")


@dataclass
class Gradients:
    weights: list[np.ndarray] = field(default_factory=list)
    biases: list[np.ndarray] = field(default_factory=list)


def _check_chain(specs: Sequence[LayerSpec]) -> None:
    if not specs:
        raise ShapeError("a network needs at least one layer")
    for i, (a, b) in enumerate(zip(specs, specs[1:])):
        if a.output_dim != b.input_dim:
            raise ShapeError(
                f"layer {i} outputs {a.output_dim} but layer {i + 1} expects {b.input_dim}"
            )
    for spec in specs[:-1]:
        if spec.activation is Activation.SOFTMAX:
            raise ShapeError("softmax is only allowed on the final layer")
    if specs[-1].activation is not Activation.SOFTMAX:
        raise ShapeError("the final layer must use softmax")


def mlp_specs(input_dim: int, hidden: Sequence[int], num_classes: int) -> list[LayerSpec]:
    """ReLU hidden layers followed by a softmax output layer."""
    dims = [input_dim, *hidden, num_classes]
    specs = [LayerSpec(a, b, Activation.RELU) for a, b in zip(dims[:-2], dims[1:-1])]
    specs.append(LayerSpec(dims[-2], dims[-1], Activation.SOFTMAX))
    return specs


def init_network(layer_specs: Sequence[LayerSpec], seed: int) -> FeedforwardNetwork:
    """Uniform(-b, b) weights with b = sqrt(6 / fan_in), zero biases."""
    specs = list(layer_specs)
    _check_chain(specs)
    rng = np.random.default_rng(seed)
    layers = []
    for spec in specs:
        bound = np.sqrt(6.0 / spec.input_dim)
        w = rng.uniform(-bound, bound, size=(spec.output_dim, spec.input_dim))
        layers.append(Layer(w, np.zeros(spec.output_dim), spec.activation))
    return FeedforwardNetwork(layers)


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _as_batch(net: FeedforwardNetwork, x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != net.input_dim:
        raise ShapeError(f"expected inputs of length {net.input_dim}, got shape {x.shape}")
    return x, single


def _forward_cache(net: FeedforwardNetwork, x: np.ndarray):
    # pre-activations and activations per layer; activations[0] is the input
    activations = [x]
    pre = []
    a = x
    for layer in net.layers:
        z = a @ layer.weights.T + layer.bias
        pre.append(z)
        a = softmax(z) if layer.activation is Activation.SOFTMAX else np.maximum(z, 0.0)
        activations.append(a)
    return pre, activations


def forward(net: FeedforwardNetwork, x) -> np.ndarray:
    """Class probabilities for one input (1-D) or a batch (2-D, one row per input)."""
    batch, single = _as_batch(net, x)
    probs = _forward_cache(net, batch)[1][-1]
    return probs[0] if single else probs


def predict(net: FeedforwardNetwork, x):
    """Argmax class id; np.argmax already resolves ties to the lowest index."""
    probs = forward(net, x)
    if probs.ndim == 1:
        return int(np.argmax(probs))
    return np.argmax(probs, axis=1)


def accuracy(net: FeedforwardNetwork, inputs, labels) -> float:
    labels = np.asarray(labels)
    return float(np.mean(predict(net, inputs) == labels))


def _check_labels(net: FeedforwardNetwork, labels) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= net.num_classes):
        raise ValueError(f"labels must lie in [0, {net.num_classes})")
    return labels


def loss_and_gradient(net: FeedforwardNetwork, inputs, labels) -> tuple[float, Gradients]:
    """Mean cross-entropy over the batch and its gradient w.r.t. every parameter."""
    x, _ = _as_batch(net, inputs)
    y = _check_labels(net, labels).reshape(-1)
    if x.shape[0] == 0:
        raise ValueError("empty batch")
    if y.shape[0] != x.shape[0]:
        raise ValueError(f"{x.shape[0]} inputs but {y.shape[0]} labels")
    n = x.shape[0]
    pre, acts = _forward_cache(net, x)
    probs = acts[-1]
    rows = np.arange(n)
    loss = float(-np.mean(np.log(probs[rows, y])))

    delta = probs.copy()
    delta[rows, y] -= 1.0
    delta /= n
    grads = Gradients()
    for i in range(len(net.layers) - 1, -1, -1):
        grads.weights.append(delta.T @ acts[i])
        grads.biases.append(delta.sum(axis=0))
        if i > 0:
            delta = (delta @ net.layers[i].weights) * (pre[i - 1] > 0)
    grads.weights.reverse()
    grads.biases.reverse()
    return loss, grads


def sgd_step(net: FeedforwardNetwork, grads: Gradients, learning_rate: float) -> None:
    for layer, gw, gb in zip(net.layers, grads.weights, grads.biases):
        layer.weights -= learning_rate * gw
        layer.bias -= learning_rate * gb


def shuffle_order(n: int, seed: int, epochs: int) -> list[np.ndarray]:
    """Per-epoch visiting orders; a function of (seed, n) only."""
    rng = np.random.default_rng(seed)
    return [rng.permutation(n) for _ in range(epochs)]


def train(net: FeedforwardNetwork, inputs, labels, config: TrainConfig) -> tuple[FeedforwardNetwork, list[float]]:
    """Plain mini-batch SGD on a copy of ``net``.

    Returns the trained copy and the mean batch loss of each epoch. The last
    batch of an epoch may be smaller than ``config.batch_size``.
    """
    x, _ = _as_batch(net, inputs)
    y = _check_labels(net, labels).reshape(-1)
    n = x.shape[0]
    if n == 0:
        raise ValueError("cannot train on an empty dataset")
    if y.shape[0] != n:
        raise ValueError(f"{n} inputs but {y.shape[0]} labels")

    trained = net.copy()
    if config.shuffle:
        orders = shuffle_order(n, config.seed, config.epochs)
    else:
        orders = [np.arange(n)] * config.epochs
    epoch_losses = []
    for order in orders:
        total = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            loss, grads = loss_and_gradient(trained, x[idx], y[idx])
            sgd_step(trained, grads, config.learning_rate)
            total += loss * len(idx)
        epoch_losses.append(total / n)
    return trained, epoch_losses


def sgd_steps(n: int, config: TrainConfig) -> int:
    return config.epochs * -(-n // config.batch_size)
