"""Feed-forward state-action value approximator, built from scratch.

A fixed topology (ReLU hidden layers, linear output) over a flat float64
parameter vector: forward pass, backpropagation of a single output row,
plain SGD, and the normalized state encoding.  Double precision
throughout; no autodiff framework.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .model import ModelConfig, SystemState, space_for

CHECKPOINT_FILE_VERSION = 1

DEFAULT_HIDDEN = (64, 32, 16)


@dataclass(frozen=True)
class NetworkShape:
    input_dim: int
    hidden: tuple[int, ...] = DEFAULT_HIDDEN
    output_dim: int = 2

    def __post_init__(self):
        if self.input_dim < 1 or self.output_dim < 1 or any(d < 1 for d in self.hidden):
            raise ValueError("all layer sizes must be positive")
        object.__setattr__(self, "hidden", tuple(int(d) for d in self.hidden))

    @classmethod
    def for_model(cls, config: ModelConfig, hidden: tuple[int, ...] = DEFAULT_HIDDEN):
        return cls(
            input_dim=config.num_contents * (config.window + 2),
            hidden=hidden,
            output_dim=config.num_actions,
        )

    @property
    def dims(self) -> tuple[int, ...]:
        return (self.input_dim, *self.hidden, self.output_dim)

    @property
    def param_count(self) -> int:
        dims = self.dims
        return sum((fan_in + 1) * fan_out for fan_in, fan_out in zip(dims[:-1], dims[1:]))


def parameter_views(shape: NetworkShape, theta: np.ndarray):
    """Per-layer (W, b) views into the flat vector (layout: W then b)."""
    if theta.shape != (shape.param_count,):
        raise ValueError(f"expected {shape.param_count} parameters, got {theta.shape}")
    views = []
    off = 0
    dims = shape.dims
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        w = theta[off : off + fan_in * fan_out].reshape(fan_in, fan_out)
        off += fan_in * fan_out
        b = theta[off : off + fan_out]
        off += fan_out
        views.append((w, b))
    return views


def init_uniform(shape: NetworkShape, rng: np.random.Generator) -> np.ndarray:
    """Weights uniform on (-1/sqrt(fan_in), +1/sqrt(fan_in)); biases zero."""
    theta = np.zeros(shape.param_count, dtype=np.float64)
    for w, _ in parameter_views(shape, theta):
        bound = 1.0 / math.sqrt(w.shape[0])
        w[:] = rng.uniform(-bound, bound, size=w.shape)
    return theta


def forward(shape: NetworkShape, theta: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Value vector (one entry per action) for a single feature vector."""
    a = x
    views = parameter_views(shape, theta)
    for w, b in views[:-1]:
        a = np.maximum(a @ w + b, 0.0)
    w, b = views[-1]
    return a @ w + b


def forward_batch(shape: NetworkShape, theta: np.ndarray, feats: np.ndarray) -> np.ndarray:
    """(B, output_dim) values for a batch of feature rows."""
    a = feats
    views = parameter_views(shape, theta)
    for w, b in views[:-1]:
        a = np.maximum(a @ w + b, 0.0)
    w, b = views[-1]
    return a @ w + b


def backward(
    shape: NetworkShape,
    theta: np.ndarray,
    x: np.ndarray,
    action_index: int,
    upstream: float,
) -> np.ndarray:
    """Gradient of ``upstream * output[action_index]`` w.r.t. all parameters."""
    if not 0 <= action_index < shape.output_dim:
        raise ValueError(f"action index {action_index} outside [0, {shape.output_dim})")
    views = parameter_views(shape, theta)
    acts = [x]
    pres = []
    for layer, (w, b) in enumerate(views):
        z = acts[-1] @ w + b
        pres.append(z)
        acts.append(np.maximum(z, 0.0) if layer < len(views) - 1 else z)

    grad = np.zeros_like(theta)
    grad_views = parameter_views(shape, grad)
    delta = np.zeros(shape.output_dim, dtype=np.float64)
    delta[action_index] = upstream
    for layer in range(len(views) - 1, -1, -1):
        gw, gb = grad_views[layer]
        gw[:] = np.outer(acts[layer], delta)
        gb[:] = delta
        if layer > 0:
            delta = views[layer][0] @ delta
            delta[pres[layer - 1] <= 0.0] = 0.0
    return grad


def sgd_apply(theta: np.ndarray, grad: np.ndarray, beta: float) -> np.ndarray:
    """theta - beta * grad, as a fresh vector."""
    return theta - beta * grad


def copy_parameters(theta: np.ndarray) -> np.ndarray:
    return theta.copy()


def state_features(state: SystemState, config: ModelConfig) -> np.ndarray:
    """Normalized encoding: per content (age/cap, queues/users, arrivals/users)."""
    out = np.empty(config.num_contents * (config.window + 2), dtype=np.float64)
    k = config.window + 2
    for f, comp in enumerate(state.per_content):
        users = config.users[f]
        out[f * k] = comp.age / config.aoi_cap
        for d, q in enumerate(comp.queues):
            out[f * k + 1 + d] = q / users
        out[f * k + k - 1] = comp.arrivals / users
    return out


def features_matrix(config: ModelConfig) -> np.ndarray:
    """Feature rows for every state index (vectorized over the space)."""
    space = space_for(config)
    k = space.digits_per_content
    cols = []
    for f in range(config.num_contents):
        users = config.users[f]
        cols.append((space.digit_column(f * k) + 1) / config.aoi_cap)
        for d in range(1, k):
            cols.append(space.digit_column(f * k + d) / users)
    return np.ascontiguousarray(np.stack(cols, axis=1))


def save_checkpoint(path, shape: NetworkShape, theta: np.ndarray, metadata: dict) -> None:
    """Versioned binary checkpoint with a shape header."""
    np.savez(
        path,
        format_version=CHECKPOINT_FILE_VERSION,
        dims=np.asarray(shape.dims, dtype=np.int64),
        theta=np.asarray(theta, dtype=np.float64),
        metadata_json=json.dumps(metadata, sort_keys=True),
    )


def load_checkpoint(path) -> tuple[NetworkShape, np.ndarray, dict]:
    with np.load(path, allow_pickle=False) as data:
        version = int(data["format_version"])
        if version != CHECKPOINT_FILE_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        dims = [int(d) for d in data["dims"]]
        shape = NetworkShape(
            input_dim=dims[0], hidden=tuple(dims[1:-1]), output_dim=dims[-1]
        )
        theta = data["theta"].astype(np.float64)
        metadata = json.loads(str(data["metadata_json"]))
    if theta.shape != (shape.param_count,):
        raise ValueError("checkpoint parameter vector does not match its shape header")
    return shape, theta, metadata
