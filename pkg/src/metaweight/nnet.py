"""Dense feed-forward networks with manual forward/backward passes.

Everything here is plain float64 numpy. A network is a list of layer
specs plus one flat parameter vector; the flattening order is part of
the contract shared by every gradient in the package:

    for each layer k:  W_k.ravel() (C order, shape (input_dim, output_dim)),
                       then b_k (length output_dim)

Per-sample gradients are first-class: `per_sample_gradients` returns one
row per sample so callers can weight, dot or normalize them individually.
Reductions use numpy's fixed summation order, so identical inputs give
bit-identical results across runs.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

RELU = "relu"
SIGMOID = "sigmoid"
IDENTITY = "identity"
ACTIVATIONS = (RELU, SIGMOID, IDENTITY)


@dataclass(frozen=True)
class LayerSpec:
    """One affine layer followed by an activation."""

    input_dim: int
    output_dim: int
    activation: str = RELU

    def __post_init__(self):
        if self.input_dim < 1 or self.output_dim < 1:
            raise ValueError(f"layer dims must be >= 1, got {self.input_dim}->{self.output_dim}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}, expected one of {ACTIVATIONS}")

    @property
    def param_count(self) -> int:
        return self.input_dim * self.output_dim + self.output_dim


def _check_chain(specs: Sequence[LayerSpec]) -> tuple[LayerSpec, ...]:
    specs = tuple(specs)
    if not specs:
        raise ValueError("network needs at least one layer")
    for a, b in zip(specs, specs[1:]):
        if a.output_dim != b.input_dim:
            raise ValueError(f"adjacent layer dims mismatch: {a.output_dim} != {b.input_dim}")
    return specs


@dataclass
class DenseNet:
    """Layer specs plus one flat parameter vector (see module docstring for layout)."""

    layers: tuple[LayerSpec, ...]
    params: np.ndarray

    def __post_init__(self):
        self.layers = _check_chain(self.layers)
        self.params = np.asarray(self.params, dtype=np.float64)
        expected = sum(s.param_count for s in self.layers)
        if self.params.shape != (expected,):
            raise ValueError(f"params must have shape ({expected},), got {self.params.shape}")
        if not np.all(np.isfinite(self.params)):
            raise ValueError("non-finite parameter entries")

    @property
    def param_count(self) -> int:
        return self.params.size

    @property
    def input_dim(self) -> int:
        return self.layers[0].input_dim

    @property
    def output_dim(self) -> int:
        return self.layers[-1].output_dim

    def layer_params(self):
        """Yield (W, b) views into the flat vector, layer by layer."""
        off = 0
        for spec in self.layers:
            nw = spec.input_dim * spec.output_dim
            w = self.params[off:off + nw].reshape(spec.input_dim, spec.output_dim)
            b = self.params[off + nw:off + nw + spec.output_dim]
            off += nw + spec.output_dim
            yield w, b

    def with_params(self, params: np.ndarray) -> "DenseNet":
        return DenseNet(self.layers, np.array(params, dtype=np.float64))


@dataclass
class ForwardCache:
    """Intermediates of one forward pass: acts[0] is the input batch,
    preacts[k]/acts[k+1] belong to layer k."""

    preacts: list[np.ndarray]
    acts: list[np.ndarray]

    @property
    def batch_size(self) -> int:
        return self.acts[0].shape[0]


def init_net(specs: Sequence[LayerSpec], seed: int) -> DenseNet:
    """Build a network with Gaussian weights and zero biases.

    Weight std is sqrt(2/input_dim) for ReLU layers (He) and
    sqrt(1/input_dim) otherwise; deterministic in (specs, seed).
    """
    specs = _check_chain(specs)
    rng = np.random.Generator(np.random.Philox(seed))
    chunks = []
    for spec in specs:
        scale = np.sqrt(2.0 / spec.input_dim) if spec.activation == RELU else np.sqrt(1.0 / spec.input_dim)
        w = rng.normal(0.0, scale, size=(spec.input_dim, spec.output_dim))
        chunks.append(w.ravel())
        chunks.append(np.zeros(spec.output_dim))
    return DenseNet(specs, np.concatenate(chunks))


def _activate(z: np.ndarray, kind: str) -> np.ndarray:
    if kind == RELU:
        return np.maximum(z, 0.0)
    if kind == SIGMOID:
        out = np.empty_like(z)
        pos = z >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
        ez = np.exp(z[~pos])
        out[~pos] = ez / (1.0 + ez)
        return out
    return z


def _activation_grad(preact: np.ndarray, act: np.ndarray, kind: str) -> np.ndarray:
    # ReLU subgradient at 0 is defined as 0.
    if kind == RELU:
        return (preact > 0.0).astype(np.float64)
    if kind == SIGMOID:
        return act * (1.0 - act)
    return np.ones_like(preact)


def forward(net: DenseNet, batch: np.ndarray) -> tuple[np.ndarray, ForwardCache]:
    """Run the network on a (batch_size, input_dim) matrix.

    Returns the final activations and a cache of every intermediate.
    """
    x = np.atleast_2d(np.asarray(batch, dtype=np.float64))
    if x.shape[1] != net.input_dim:
        raise ValueError(f"batch has {x.shape[1]} columns, network expects {net.input_dim}")
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite input batch")
    preacts, acts = [], [x]
    for spec, (w, b) in zip(net.layers, net.layer_params()):
        z = acts[-1] @ w + b
        preacts.append(z)
        acts.append(_activate(z, spec.activation))
    return acts[-1], ForwardCache(preacts, acts)


def per_sample_gradients(net: DenseNet, cache: ForwardCache, upstream: np.ndarray) -> np.ndarray:
    """Backprop one scalar loss per sample; row i is d(loss_i)/d(params).

    `upstream` is the (batch_size, output_dim) matrix of per-sample loss
    gradients with respect to the network outputs. The mean of the rows
    equals the gradient of the mean loss.
    """
    upstream = np.asarray(upstream, dtype=np.float64)
    bsz = cache.batch_size
    if upstream.shape != (bsz, net.output_dim):
        raise ValueError(f"upstream must have shape ({bsz}, {net.output_dim}), got {upstream.shape}")
    grads = np.empty((bsz, net.param_count))
    weights = list(net.layer_params())
    delta = upstream
    off = net.param_count
    for k in range(len(net.layers) - 1, -1, -1):
        spec = net.layers[k]
        delta = delta * _activation_grad(cache.preacts[k], cache.acts[k + 1], spec.activation)
        a_prev = cache.acts[k]
        nw = spec.input_dim * spec.output_dim
        off -= spec.param_count
        # dL_i/dW = a_prev_i (outer) delta_i, C-order ravel matches the layout
        grads[:, off:off + nw] = np.einsum("bi,bo->bio", a_prev, delta).reshape(bsz, nw)
        grads[:, off + nw:off + nw + spec.output_dim] = delta
        if k > 0:
            delta = delta @ weights[k][0].T
    if not np.all(np.isfinite(grads)):
        raise ValueError("non-finite gradients")
    return grads


def fd_gradient(loss_fn: Callable[[np.ndarray], float], params: np.ndarray, eps: float) -> np.ndarray:
    """Central-difference gradient estimate, one coordinate at a time."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    params = np.asarray(params, dtype=np.float64)
    grad = np.empty_like(params)
    probe = params.copy()
    for k in range(params.size):
        probe[k] = params[k] + eps
        hi = float(loss_fn(probe))
        probe[k] = params[k] - eps
        lo = float(loss_fn(probe))
        probe[k] = params[k]
        if not (np.isfinite(hi) and np.isfinite(lo)):
            raise ValueError(f"non-finite loss evaluation at coordinate {k}")
        grad[k] = (hi - lo) / (2.0 * eps)
    return grad


def sgd_step(
    params: np.ndarray,
    grad: np.ndarray,
    lr: float,
    momentum: float = 0.0,
    weight_decay: float = 0.0,
    state: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Momentum SGD: v' = momentum*v + grad + weight_decay*params; params' = params - lr*v'."""
    params = np.asarray(params, dtype=np.float64)
    grad = np.asarray(grad, dtype=np.float64)
    if lr < 0:
        raise ValueError("lr must be >= 0")
    if not 0.0 <= momentum < 1.0:
        raise ValueError("momentum must be in [0, 1)")
    if weight_decay < 0:
        raise ValueError("weight_decay must be >= 0")
    if grad.shape != params.shape:
        raise ValueError(f"shape mismatch: params {params.shape} vs grad {grad.shape}")
    if state is None:
        state = np.zeros_like(params)
    elif state.shape != params.shape:
        raise ValueError(f"shape mismatch: params {params.shape} vs state {state.shape}")
    velocity = momentum * state + grad + weight_decay * params
    return params - lr * velocity, velocity


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-sample softmax cross-entropy and its gradient w.r.t. the logits.

    Returns (losses, grad) with losses shape (batch,) and grad shape
    (batch, classes) = softmax(logits) - onehot(labels).
    """
    logits = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    labels = np.asarray(labels, dtype=np.int64)
    shifted = logits - logits.max(axis=1, keepdims=True)
    expz = np.exp(shifted)
    norm = expz.sum(axis=1, keepdims=True)
    probs = expz / norm
    idx = np.arange(logits.shape[0])
    losses = np.log(norm[:, 0]) - shifted[idx, labels]
    grad = probs.copy()
    grad[idx, labels] -= 1.0
    return losses, grad
