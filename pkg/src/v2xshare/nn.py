"""Minimal dense network engine in float64 numpy.

Layers act on row batches: ``y = act(x @ W.T + b)`` with ``W`` stored out x in.
A :class:`SignSTE` layer outputs sign(x) in {-1, +1} (sign(0) = +1) and passes
gradients straight through in the backward pass.

Parameter file format (text, one token group per line)::

    v2xshare-params 1
    layers <count>
    dense <out> <in> <activation>
    <out*in weights, row-major, space separated>
    <out biases>
    sign

Floats are written with ``repr`` so a save/load round trip is exact.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

ACTIVATIONS = ("relu", "tanh", "linear")


class ShapeError(ValueError):
    pass


def relu_act(x):
    return np.maximum(x, 0.0)


def tanh_act(x):
    # equals 2 / (1 + exp(-2x)) - 1 without overflow for large negative x
    return np.tanh(x)


def sign_act(x):
    return np.where(np.asarray(x) >= 0, 1.0, -1.0)


class DenseLayer:
    def __init__(self, weights: np.ndarray, bias: np.ndarray, activation: str = "relu"):
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        self.weights = np.asarray(weights, dtype=np.float64)
        self.bias = np.asarray(bias, dtype=np.float64)
        if self.weights.ndim != 2 or self.bias.shape != (self.weights.shape[0],):
            raise ShapeError(f"bad layer shapes {self.weights.shape}, {self.bias.shape}")
        self.activation = activation

    @classmethod
    def init(cls, n_in: int, n_out: int, activation: str, rng: np.random.Generator) -> "DenseLayer":
        limit = np.sqrt(6.0 / (n_in + n_out))
        return cls(rng.uniform(-limit, limit, (n_out, n_in)), np.zeros(n_out), activation)

    @property
    def n_in(self) -> int:
        return self.weights.shape[1]

    @property
    def n_out(self) -> int:
        return self.weights.shape[0]

    def parameters(self) -> list[np.ndarray]:
        return [self.weights, self.bias]

    def forward(self, x):
        z = x @ self.weights.T + self.bias
        if self.activation == "relu":
            y = relu_act(z)
        elif self.activation == "tanh":
            y = tanh_act(z)
        else:
            y = z
        return y, (x, z, y)

    def backward(self, cache, grad_y):
        x, z, y = cache
        if self.activation == "relu":
            grad_z = grad_y * (z > 0)
        elif self.activation == "tanh":
            grad_z = grad_y * (1.0 - y * y)
        else:
            grad_z = grad_y
        grads = [grad_z.T @ x, grad_z.sum(axis=0)]
        return grads, grad_z @ self.weights

    def __repr__(self):
        return f"DenseLayer({self.n_in}->{self.n_out}, {self.activation})"


class SignSTE:
    """Binarizing layer; the backward pass is the identity (straight-through)."""

    def parameters(self) -> list[np.ndarray]:
        return []

    def forward(self, x):
        return sign_act(x), None

    def backward(self, cache, grad_y):
        return [], grad_y

    def __repr__(self):
        return "SignSTE()"


class Identity:
    """Parameter-free pass-through; stands in for SignSTE in smooth surrogates."""

    def parameters(self) -> list[np.ndarray]:
        return []

    def forward(self, x):
        return x, None

    def backward(self, cache, grad_y):
        return [], grad_y


class Network:
    def __init__(self, layers):
        self.layers = list(layers)
        dense = [l for l in self.layers if isinstance(l, DenseLayer)]
        for a, b in zip(dense, dense[1:]):
            if a.n_out != b.n_in:
                raise ShapeError(f"layer mismatch: {a} feeds {b}")

    @classmethod
    def build(cls, sizes, activations, rng: np.random.Generator) -> "Network":
        """Dense stack with ``len(sizes) - 1`` layers."""
        if len(activations) != len(sizes) - 1:
            raise ValueError("need one activation per layer")
        return cls(DenseLayer.init(a, b, act, rng)
                   for a, b, act in zip(sizes[:-1], sizes[1:], activations))

    @property
    def n_in(self) -> int:
        return next(l.n_in for l in self.layers if isinstance(l, DenseLayer))

    @property
    def n_out(self) -> int:
        return next(l.n_out for l in reversed(self.layers) if isinstance(l, DenseLayer))

    def parameters(self) -> list[np.ndarray]:
        return [p for layer in self.layers for p in layer.parameters()]

    def forward(self, x):
        """Return the output and a cache for :meth:`backward`; ``x`` is (in,) or (B, in)."""
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        if single:
            x = x[None, :]
        if x.shape[-1] != self.n_in:
            raise ShapeError(f"input width {x.shape[-1]} != {self.n_in}")
        caches = []
        for layer in self.layers:
            x, c = layer.forward(x)
            caches.append(c)
        return (x[0] if single else x), (caches, single)

    def __call__(self, x):
        return self.forward(x)[0]

    def backward(self, cache, grad_out):
        """Gradients (aligned with :meth:`parameters`) and the input gradient."""
        caches, single = cache
        g = np.asarray(grad_out, dtype=np.float64)
        if single:
            g = g[None, :]
        grads = []
        for layer, c in zip(reversed(self.layers), reversed(caches)):
            layer_grads, g = layer.backward(c, g)
            grads = layer_grads + grads
        return grads, (g[0] if single else g)

    def copy(self) -> "Network":
        out = []
        for layer in self.layers:
            if isinstance(layer, DenseLayer):
                out.append(DenseLayer(layer.weights.copy(), layer.bias.copy(), layer.activation))
            else:
                out.append(type(layer)())
        return Network(out)

    def load_parameters_from(self, other: "Network") -> None:
        for dst, src in zip(self.parameters(), other.parameters(), strict=True):
            np.copyto(dst, src)

    def save(self, path) -> None:
        lines = ["v2xshare-params 1", f"layers {len(self.layers)}"]
        for layer in self.layers:
            if isinstance(layer, DenseLayer):
                lines.append(f"dense {layer.n_out} {layer.n_in} {layer.activation}")
                lines.append(" ".join(repr(float(v)) for v in layer.weights.ravel()))
                lines.append(" ".join(repr(float(v)) for v in layer.bias))
            elif isinstance(layer, SignSTE):
                lines.append("sign")
            else:
                raise TypeError(f"cannot save layer {layer!r}")
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def load(cls, path) -> "Network":
        lines = iter(Path(path).read_text().splitlines())
        if next(lines).split() != ["v2xshare-params", "1"]:
            raise ValueError(f"{path}: not a parameter file")
        count = int(next(lines).split()[1])
        layers = []
        for _ in range(count):
            head = next(lines).split()
            if head[0] == "sign":
                layers.append(SignSTE())
                continue
            n_out, n_in, act = int(head[1]), int(head[2]), head[3]
            w = np.array([float(t) for t in next(lines).split()]).reshape(n_out, n_in)
            b = np.array([float(t) for t in next(lines).split()]).reshape(n_out)
            layers.append(DenseLayer(w, b, act))
        return cls(layers)


def huber(prediction, target, delta: float = 1.0):
    """Elementwise Huber loss and its derivative w.r.t. ``prediction``."""
    if delta <= 0:
        raise ValueError("delta must be positive")
    e = np.asarray(prediction, dtype=np.float64) - np.asarray(target, dtype=np.float64)
    abs_e = np.abs(e)
    quad = abs_e <= delta
    loss = np.where(quad, 0.5 * e * e, delta * (abs_e - 0.5 * delta))
    grad = np.clip(e, -delta, delta)
    return loss, grad


@dataclass
class RMSPropState:
    accumulators: list[np.ndarray]
    learning_rate: float = 1e-3
    decay: float = 0.9
    epsilon: float = 1e-7

    @classmethod
    def zeros_like(cls, params, learning_rate=1e-3, decay=0.9, epsilon=1e-7) -> "RMSPropState":
        return cls([np.zeros_like(p) for p in params], learning_rate, decay, epsilon)


def rmsprop_step(params, grads, state: RMSPropState):
    """Pure RMSProp update returning ``(new_params, new_state)``."""
    new_params, new_acc = [], []
    for p, g, acc in zip(params, grads, state.accumulators, strict=True):
        if p.shape != g.shape:
            raise ShapeError(f"gradient shape {g.shape} != parameter shape {p.shape}")
        a = state.decay * acc + (1.0 - state.decay) * g * g
        new_acc.append(a)
        new_params.append(p - state.learning_rate * g / np.sqrt(a + state.epsilon))
    return new_params, RMSPropState(new_acc, state.learning_rate, state.decay, state.epsilon)


class RMSProp:
    """In-place RMSProp over a fixed parameter list (same arithmetic as :func:`rmsprop_step`)."""

    def __init__(self, params, learning_rate=1e-3, decay=0.9, epsilon=1e-7):
        self.params = list(params)
        self.state = RMSPropState.zeros_like(self.params, learning_rate, decay, epsilon)

    def step(self, grads) -> None:
        s = self.state
        for p, g, acc in zip(self.params, grads, s.accumulators, strict=True):
            acc *= s.decay
            acc += (1.0 - s.decay) * g * g
            p -= s.learning_rate * g / np.sqrt(acc + s.epsilon)
