"""Feedforward plastic network with per-layer activation history.

Every array carries an optional leading *batch* shape so that a whole
population of independent networks can be stepped with one set of numpy
calls.  With ``batch_shape=()`` the arrays have their textbook shapes.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ConfigurationError, InputError

ACTIVATIONS = {
    "tanh": np.tanh,
    # only used for the linear-neuron Oja check
    "identity": lambda x: x,
}


@dataclass(frozen=True)
class NetworkShape:
    """Layer widths, input first and output last."""

    layer_sizes: tuple[int, ...]

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        if len(sizes) < 2:
            raise ConfigurationError("a network needs at least an input and an output layer")
        if any(s < 1 for s in sizes):
            raise ConfigurationError(f"layer sizes must be positive, got {sizes}")
        object.__setattr__(self, "layer_sizes", sizes)

    @classmethod
    def with_hidden(cls, n_in: int, n_out: int, hidden: Sequence[int] = (16,)) -> "NetworkShape":
        return cls((n_in, *hidden, n_out))

    @property
    def n_layers(self) -> int:
        """Number of weight matrices."""
        return len(self.layer_sizes) - 1

    @property
    def weight_shapes(self) -> list[tuple[int, int]]:
        s = self.layer_sizes
        return [(s[k + 1], s[k]) for k in range(self.n_layers)]

    @property
    def n_connections(self) -> int:
        return sum(r * c for r, c in self.weight_shapes)


class ActivationTrace:
    """Ring buffer holding the last ``window`` activation vectors of one layer.

    The buffer starts as zeros, so before ``window`` pushes the mean is taken
    over a zero-padded window.
    """

    def __init__(self, size: int, window: int, batch_shape: tuple[int, ...] = ()):
        if window < 1:
            raise ConfigurationError(f"window length must be >= 1, got {window}")
        self.size = size
        self.window = window
        self.batch_shape = tuple(batch_shape)
        self.buffer = np.zeros((window, *self.batch_shape, size))
        self.cursor = 0
        self.pushes = 0

    def push(self, x: np.ndarray) -> None:
        self.buffer[self.cursor] = x
        self.cursor = (self.cursor + 1) % self.window
        self.pushes += 1

    def mean(self) -> np.ndarray:
        return self.buffer.sum(axis=0) / self.window

    def last(self) -> np.ndarray:
        return self.buffer[(self.cursor - 1) % self.window].copy()

    def clear(self) -> None:
        self.buffer[...] = 0.0
        self.cursor = 0
        self.pushes = 0


@dataclass
class NetworkSnapshot:
    step: int
    weights: np.ndarray  # flattened, layer-major then row-major; leading batch axes kept

    def layer_views(self, shape: NetworkShape) -> list[np.ndarray]:
        return unflatten_weights(self.weights, shape)


def flatten_weights(weights: Sequence[np.ndarray]) -> np.ndarray:
    """Concatenate layer matrices into one vector per batch element."""
    batch = weights[0].shape[:-2]
    return np.concatenate([w.reshape(*batch, -1) for w in weights], axis=-1)


def unflatten_weights(flat: np.ndarray, shape: NetworkShape) -> list[np.ndarray]:
    flat = np.asarray(flat)
    if flat.shape[-1] != shape.n_connections:
        raise ConfigurationError(
            f"flat weight vector has length {flat.shape[-1]}, expected {shape.n_connections}"
        )
    batch = flat.shape[:-1]
    out, start = [], 0
    for r, c in shape.weight_shapes:
        out.append(flat[..., start:start + r * c].reshape(*batch, r, c))
        start += r * c
    return out


def matvec(w: np.ndarray, x: np.ndarray) -> np.ndarray:
    # Elementwise product + last-axis sum rather than BLAS: each batch row is
    # reduced identically regardless of how many rows share the call.
    return (w * x[..., None, :]).sum(axis=-1)


class PlasticNetwork:
    """Bias-free tanh MLP whose weights are mutated in place by a plasticity rule.

    Parameters
    ----------
    shape : NetworkShape
    window : int
        Length M of the activation moving average.
    batch_shape : tuple of int
        Leading shape shared by all weight and activation arrays.
    activation : {"tanh", "identity"}
    weights : list of arrays, optional
        Initial weights; zeros if omitted.
    """

    def __init__(
        self,
        shape: NetworkShape,
        window: int = 1,
        batch_shape: tuple[int, ...] = (),
        activation: str = "tanh",
        weights: Sequence[np.ndarray] | None = None,
    ):
        if activation not in ACTIVATIONS:
            raise ConfigurationError(f"unknown activation {activation!r}")
        self.shape = shape
        self.window = int(window)
        self.batch_shape = tuple(batch_shape)
        self.activation = activation
        self._phi = ACTIVATIONS[activation]
        if weights is None:
            self.weights = [np.zeros((*self.batch_shape, r, c)) for r, c in shape.weight_shapes]
        else:
            self.set_weights(weights)
        self.traces = [ActivationTrace(n, self.window, self.batch_shape) for n in shape.layer_sizes]
        self.diverged = np.zeros(self.batch_shape, dtype=bool)

    def set_weights(self, weights: Sequence[np.ndarray]) -> None:
        if len(weights) != self.shape.n_layers:
            raise ConfigurationError(f"expected {self.shape.n_layers} weight matrices, got {len(weights)}")
        new = []
        for w, (r, c) in zip(weights, self.shape.weight_shapes):
            w = np.array(w, dtype=float)
            target = (*self.batch_shape, r, c)
            if w.shape != target:
                try:
                    w = np.broadcast_to(w, target).copy()
                except ValueError:
                    raise ConfigurationError(f"weight shape {w.shape} incompatible with {target}") from None
            new.append(w)
        self.weights = new

    def randomize(self, rng: np.random.Generator, low: float = -0.1, high: float = 0.1) -> None:
        self.weights = [rng.uniform(low, high, size=(*self.batch_shape, r, c))
                        for r, c in self.shape.weight_shapes]

    def reset_traces(self) -> None:
        for tr in self.traces:
            tr.clear()

    def forward(self, state: np.ndarray) -> np.ndarray:
        """Propagate one observation and record every layer's activations."""
        x = np.asarray(state, dtype=float)
        if x.shape[-1:] != (self.shape.layer_sizes[0],):
            raise ConfigurationError(
                f"state has trailing size {x.shape[-1:]}, network expects {self.shape.layer_sizes[0]}"
            )
        if not np.all(np.isfinite(x)):
            raise InputError("state contains non-finite values")
        x = np.broadcast_to(x, (*self.batch_shape, x.shape[-1]))
        self.traces[0].push(x)
        for k, w in enumerate(self.weights, start=1):
            x = self._phi(matvec(w, x))
            self.traces[k].push(x)
        return x

    __call__ = forward

    def averaged_activations(self, layer: int) -> np.ndarray:
        if not 0 <= layer < len(self.traces):
            raise ConfigurationError(f"layer index {layer} out of range 0..{len(self.traces) - 1}")
        return self.traces[layer].mean()

    def snapshot(self, step: int = 0) -> NetworkSnapshot:
        return NetworkSnapshot(step=step, weights=flatten_weights(self.weights).copy())

    def flat_weights(self) -> np.ndarray:
        return flatten_weights(self.weights)
