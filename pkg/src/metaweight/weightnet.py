"""The weighting network: a tiny MLP mapping a scalar loss to a weight.

Architecture is 1 -> hidden (ReLU, possibly several layers) -> 1 with a
sigmoid head, so every weight lands in (0, 1). `mw_jacobian` returns the
exact per-input parameter Jacobian that the meta update consumes, and
`normalize` rescales a weight vector to sum to one with a guard for the
all-zero case.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from metaweight.nnet import DenseNet, LayerSpec, forward, init_net, per_sample_gradients

INIT_SCALE = 0.1
ZERO_SUM_GUARD = 1e-8


@dataclass
class MWNet:
    """Wrapper pinning the 1-in / 1-out sigmoid-head shape."""

    net: DenseNet

    def __post_init__(self):
        specs = self.net.layers
        if specs[0].input_dim != 1:
            raise ValueError("weight net takes a single scalar input")
        if specs[-1].output_dim != 1 or specs[-1].activation != "sigmoid":
            raise ValueError("weight net head must be a single sigmoid unit")
        for spec in specs[:-1]:
            if spec.activation != "relu":
                raise ValueError("weight net hidden layers must be relu")

    @property
    def theta(self) -> np.ndarray:
        return self.net.params

    @property
    def param_count(self) -> int:
        return self.net.param_count

    def with_theta(self, theta: np.ndarray) -> "MWNet":
        return MWNet(self.net.with_params(theta))


def init_mwnet(hidden: tuple[int, ...] = (100,), seed: int = 0) -> MWNet:
    """Initialize with weights shrunk well below the usual scale.

    The small weights keep the sigmoid near its linear midpoint, so an
    untrained net maps every loss to roughly 0.5 instead of an arbitrary
    steep curve.
    """
    if not hidden or any(h < 1 for h in hidden):
        raise ValueError("hidden layer sizes must be positive")
    dims = (1,) + tuple(hidden)
    specs = [LayerSpec(dims[i], dims[i + 1], "relu") for i in range(len(hidden))]
    specs.append(LayerSpec(dims[-1], 1, "sigmoid"))
    net = init_net(specs, seed)
    return MWNet(net.with_params(net.params * INIT_SCALE))


def mw_forward(mwnet: MWNet, losses: np.ndarray) -> np.ndarray:
    """Map a vector of losses to a vector of weights in (0, 1)."""
    losses = np.asarray(losses, dtype=np.float64)
    if losses.ndim != 1:
        raise ValueError(f"losses must be a 1-d vector, got shape {losses.shape}")
    out, _ = forward(mwnet.net, losses.reshape(-1, 1))
    return out[:, 0]


def mw_jacobian(mwnet: MWNet, losses: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Weights plus the exact Jacobian d(weight_i)/d(theta).

    Returns (weights, jac) with jac shape (len(losses), param_count).
    """
    losses = np.asarray(losses, dtype=np.float64)
    if losses.ndim != 1:
        raise ValueError(f"losses must be a 1-d vector, got shape {losses.shape}")
    out, cache = forward(mwnet.net, losses.reshape(-1, 1))
    upstream = np.ones((losses.size, 1))
    jac = per_sample_gradients(mwnet.net, cache, upstream)
    return out[:, 0], jac


def normalize(weights: np.ndarray, guard: float = ZERO_SUM_GUARD) -> np.ndarray:
    """Rescale nonnegative weights to sum to 1; an all-zero vector maps
    to all zeros (the guard only replaces the denominator)."""
    weights = np.asarray(weights, dtype=np.float64)
    if np.any(weights < 0) or not np.all(np.isfinite(weights)):
        raise ValueError("weights must be finite and nonnegative")
    total = float(weights.sum())
    denom = total if total > 0.0 else guard
    return weights / denom


def probe_curve(mwnet: MWNet, lo: float, hi: float, steps: int) -> tuple[np.ndarray, np.ndarray]:
    """Evaluate the loss->weight mapping on an even grid over [lo, hi]."""
    if steps < 2:
        raise ValueError("steps must be >= 2")
    if not hi > lo:
        raise ValueError("need hi > lo")
    grid = np.linspace(lo, hi, steps)
    return grid, mw_forward(mwnet, grid)


def save_mwnet(mwnet: MWNet, path) -> None:
    payload = {
        "layers": [
            {"input_dim": s.input_dim, "output_dim": s.output_dim, "activation": s.activation}
            for s in mwnet.net.layers
        ],
        "params": mwnet.net.params.tolist(),
    }
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")


def load_mwnet(path) -> MWNet:
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    specs = tuple(
        LayerSpec(d["input_dim"], d["output_dim"], d["activation"]) for d in payload["layers"]
    )
    return MWNet(DenseNet(specs, np.array(payload["params"], dtype=np.float64)))
