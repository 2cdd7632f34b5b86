"""Small feed-forward networks evaluated from a flat parameter vector.

The whole point of the flat layout is that the parameters can live
inside a filter state, so there is no training code and no autodiff:
just deterministic evaluation, plus pack/unpack helpers that fix the
parameter ordering (per layer: weight matrix row-major, then bias).
Hidden layers are ReLU, the output layer is linear, which makes the
zero parameter vector evaluate to the zero function.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DimensionMismatch


@dataclass(frozen=True)
class MlpSpec:
    """Layer sizes [d_in, h1, ..., d_out]."""

    layer_sizes: tuple[int, ...]

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        if len(sizes) < 2 or any(s <= 0 for s in sizes):
            raise DimensionMismatch(f"invalid layer sizes {sizes}")
        object.__setattr__(self, "layer_sizes", sizes)

    @property
    def in_dim(self) -> int:
        return self.layer_sizes[0]

    @property
    def out_dim(self) -> int:
        return self.layer_sizes[-1]


@dataclass(frozen=True)
class MlpParams:
    """Flat parameter vector theta; length must match its spec."""

    theta: np.ndarray

    def __post_init__(self):
        theta = np.asarray(self.theta, dtype=float)
        if theta.ndim != 1:
            raise DimensionMismatch("theta must be a flat vector")
        object.__setattr__(self, "theta", theta)


def param_count(spec: MlpSpec) -> int:
    """Total number of weights and biases."""
    sizes = spec.layer_sizes
    return sum(a * b + b for a, b in zip(sizes[:-1], sizes[1:]))


def _theta_of(params) -> np.ndarray:
    if isinstance(params, MlpParams):
        return params.theta
    return np.asarray(params, dtype=float)


def unpack(spec: MlpSpec, params) -> list[tuple[np.ndarray, np.ndarray]]:
    """Split theta into per-layer (weight, bias) pairs."""
    theta = _theta_of(params)
    if theta.shape != (param_count(spec),):
        raise DimensionMismatch(
            f"theta has length {theta.size}, spec {spec.layer_sizes} needs {param_count(spec)}"
        )
    layers = []
    offset = 0
    for a, b in zip(spec.layer_sizes[:-1], spec.layer_sizes[1:]):
        w = theta[offset : offset + a * b].reshape(b, a)
        offset += a * b
        bias = theta[offset : offset + b]
        offset += b
        layers.append((w, bias))
    return layers


def pack(layers: Sequence[tuple[np.ndarray, np.ndarray]]) -> np.ndarray:
    """Flatten (weight, bias) pairs, inverse of :func:`unpack`."""
    chunks = []
    for w, bias in layers:
        w = np.asarray(w, dtype=float)
        bias = np.asarray(bias, dtype=float)
        if w.ndim != 2 or bias.shape != (w.shape[0],):
            raise DimensionMismatch("each layer needs a matrix and a matching bias vector")
        chunks.append(w.reshape(-1))
        chunks.append(bias)
    return np.concatenate(chunks)


def forward(spec: MlpSpec, params, x: np.ndarray) -> np.ndarray:
    """Evaluate the network on a single input vector."""
    x = np.asarray(x, dtype=float)
    if x.shape != (spec.in_dim,):
        raise DimensionMismatch(f"input must have length {spec.in_dim}")
    h = x
    layers = unpack(spec, params)
    for i, (w, bias) in enumerate(layers):
        h = w @ h + bias
        if i < len(layers) - 1:
            h = np.maximum(h, 0.0)
    return h


def forward_batch(spec: MlpSpec, thetas: np.ndarray, xs: np.ndarray) -> np.ndarray:
    """Evaluate k networks on k inputs at once.

    thetas has shape (k, P) and xs shape (k, d_in); row i of the output
    is forward(spec, thetas[i], xs[i]).  This is the hot path when the
    parameters are part of a cubature point set, where every point
    carries its own theta.
    """
    thetas = np.asarray(thetas, dtype=float)
    xs = np.asarray(xs, dtype=float)
    k = xs.shape[0]
    if thetas.shape != (k, param_count(spec)) or xs.shape != (k, spec.in_dim):
        raise DimensionMismatch("batch shapes do not match spec")
    h = xs
    offset = 0
    n_layers = len(spec.layer_sizes) - 1
    for i, (a, b) in enumerate(zip(spec.layer_sizes[:-1], spec.layer_sizes[1:])):
        w = thetas[:, offset : offset + a * b].reshape(k, b, a)
        offset += a * b
        bias = thetas[:, offset : offset + b]
        offset += b
        h = np.einsum("kba,ka->kb", w, h) + bias
        if i < n_layers - 1:
            h = np.maximum(h, 0.0)
    return h
