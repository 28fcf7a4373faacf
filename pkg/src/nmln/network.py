"""Dense feed-forward nets with hand-written reverse-mode gradients.

Potentials need exact parameter and input gradients, and models here are
small, so the forward pass records a tape and the backward pass replays it.
All evaluation is batched: inputs of shape (N, in) produce (N, out).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

ACTIVATIONS = ("relu", "sigmoid", "identity")


class NumericError(FloatingPointError):
    """Raised when a computation produces non-finite values."""


@dataclass
class Layer:
    weights: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)
    activation: str

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weights.ndim != 2 or self.bias.shape != (self.weights.shape[0],):
            raise ValueError("layer weights must be (out, in) with bias (out,)")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if not (np.isfinite(self.weights).all() and np.isfinite(self.bias).all()):
            raise NumericError("layer parameters must be finite")


@dataclass
class DenseNet:
    layers: list[Layer]

    def __post_init__(self):
        if not self.layers:
            raise ValueError("net needs at least one layer")
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if nxt.weights.shape[1] != prev.weights.shape[0]:
                raise ValueError("adjacent layer widths do not match")
        if self.layers[-1].activation != "identity":
            raise ValueError("final activation must be identity")

    @property
    def in_width(self) -> int:
        return self.layers[0].weights.shape[1]

    @property
    def out_width(self) -> int:
        return self.layers[-1].weights.shape[0]

    def parameters(self) -> list[np.ndarray]:
        params = []
        for layer in self.layers:
            params.append(layer.weights)
            params.append(layer.bias)
        return params

    def copy(self) -> "DenseNet":
        return DenseNet(
            [Layer(l.weights.copy(), l.bias.copy(), l.activation) for l in self.layers]
        )


def init_net(
    in_width: int,
    hidden: tuple[int, ...],
    out_width: int,
    activation: str = "relu",
    rng: np.random.Generator | None = None,
) -> DenseNet:
    """Uniform init in [-s, s] with s = fan_in**-0.5; identity output layer."""
    rng = rng if rng is not None else np.random.default_rng()
    widths = [in_width, *hidden, out_width]
    layers = []
    for i, (fan_in, fan_out) in enumerate(zip(widths, widths[1:])):
        s = fan_in**-0.5
        act = "identity" if i == len(widths) - 2 else activation
        layers.append(
            Layer(
                rng.uniform(-s, s, size=(fan_out, fan_in)),
                rng.uniform(-s, s, size=fan_out),
                act,
            )
        )
    return DenseNet(layers)


def _apply(activation: str, z: np.ndarray) -> np.ndarray:
    if activation == "relu":
        return np.maximum(z, 0.0)
    if activation == "sigmoid":
        return 1.0 / (1.0 + np.exp(-z))
    return z


def _derivative(activation: str, z: np.ndarray, a: np.ndarray) -> np.ndarray:
    if activation == "relu":
        return (z > 0).astype(np.float64)
    if activation == "sigmoid":
        return a * (1.0 - a)
    return np.ones_like(z)


@dataclass
class Tape:
    """Activation cache from one forward pass, tied to its net."""

    net: DenseNet
    inputs: list[np.ndarray] = field(default_factory=list)
    preacts: list[np.ndarray] = field(default_factory=list)
    acts: list[np.ndarray] = field(default_factory=list)
    squeezed: bool = False


def net_forward(net: DenseNet, x: np.ndarray) -> tuple[np.ndarray, Tape]:
    """Forward pass; returns per-head outputs and the tape for backward."""
    x = np.asarray(x, dtype=np.float64)
    squeezed = x.ndim == 1
    if squeezed:
        x = x[None, :]
    if x.shape[-1] != net.in_width:
        raise ValueError(f"input width {x.shape[-1]} != net width {net.in_width}")
    tape = Tape(net, squeezed=squeezed)
    a = x
    for layer in net.layers:
        tape.inputs.append(a)
        z = a @ layer.weights.T + layer.bias
        a = _apply(layer.activation, z)
        tape.preacts.append(z)
        tape.acts.append(a)
    if not np.isfinite(a).all():
        raise NumericError("non-finite network output")
    return (a[0] if squeezed else a), tape


def net_backward(
    net: DenseNet, tape: Tape, cotangent: np.ndarray
) -> tuple[list[tuple[np.ndarray, np.ndarray]], np.ndarray]:
    """Gradients of <cotangent, outputs> for all parameters and the input.

    ``cotangent`` is (out,) or (N, out) matching the taped batch; when (N, out),
    parameter gradients accumulate over rows.  Returns ([(dW, db), ...] in
    layer order, input gradient).
    """
    if tape.net is not net:
        raise ValueError("tape does not belong to this net (stale tape)")
    dy = np.asarray(cotangent, dtype=np.float64)
    if dy.ndim == 1:
        dy = np.broadcast_to(dy, (tape.inputs[0].shape[0], dy.shape[0]))
    if dy.shape != (tape.inputs[0].shape[0], net.out_width):
        raise ValueError("cotangent shape does not match the taped forward pass")
    grads: list[tuple[np.ndarray, np.ndarray]] = [None] * len(net.layers)
    for i in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[i]
        dz = dy * _derivative(layer.activation, tape.preacts[i], tape.acts[i])
        grads[i] = (dz.T @ tape.inputs[i], dz.sum(axis=0))
        dy = dz @ layer.weights
    return grads, (dy[0] if tape.squeezed else dy)
