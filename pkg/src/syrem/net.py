"""Multi-head endpoint regressor with hand-written backprop over a flat parameter vector.

Parameters live in one 1-D float64 array. The layout is layer-major with each
layer's weight matrix (fan_in x fan_out, row-major) stored before its bias.
The last layer emits ``2 * n_heads`` values which are read as ``n_heads``
(x, y) endpoints.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

ACTIVATIONS = ("tanh", "relu")


@dataclass(frozen=True)
class NetConfig:
    input_dim: int
    hidden_dims: tuple[int, ...] = (64, 64)
    n_heads: int = 6
    activation: str = "relu"
    # Fixed multiplier on the raw head outputs (meters per output unit).
    output_scale: float = 1.0
    # Fixed head mixing: endpoint_k = (1 - c) * head_k + c * mean(heads). 0 keeps heads independent.
    head_coupling: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        if self.input_dim < 1:
            raise ValueError(f"input_dim must be >= 1, got {self.input_dim}")
        if any(h < 1 for h in self.hidden_dims):
            raise ValueError(f"hidden_dims must all be >= 1, got {self.hidden_dims}")
        if self.n_heads < 1:
            raise ValueError(f"n_heads must be >= 1, got {self.n_heads}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}, got {self.activation!r}")
        if not self.output_scale > 0:
            raise ValueError("output_scale must be positive")
        if not 0.0 <= self.head_coupling < 1.0:
            raise ValueError("head_coupling must lie in [0, 1)")

    @property
    def layer_sizes(self) -> tuple[int, ...]:
        return (self.input_dim, *self.hidden_dims, 2 * self.n_heads)


@dataclass(frozen=True)
class ParamLayout:
    """Offsets of every (layer, weight|bias) block inside the flat vector."""

    shapes: tuple[tuple[tuple[int, int], tuple[int]], ...]
    offsets: tuple[tuple[int, int], ...]
    size: int

    @classmethod
    def from_config(cls, config: NetConfig) -> "ParamLayout":
        sizes = config.layer_sizes
        shapes, offsets = [], []
        pos = 0
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            shapes.append(((fan_in, fan_out), (fan_out,)))
            offsets.append((pos, pos + fan_in * fan_out))
            pos += fan_in * fan_out + fan_out
        return cls(tuple(shapes), tuple(offsets), pos)

    @property
    def n_layers(self) -> int:
        return len(self.shapes)

    def unflatten(self, flat: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
        """Views (no copies) of each layer's (W, b) inside ``flat``."""
        flat = np.asarray(flat)
        if flat.shape != (self.size,):
            raise ValueError(f"expected flat vector of length {self.size}, got shape {flat.shape}")
        out = []
        for (wshape, bshape), (w0, b0) in zip(self.shapes, self.offsets):
            w = flat[w0:b0].reshape(wshape)
            b = flat[b0:b0 + bshape[0]]
            out.append((w, b))
        return out

    def flatten(self, layers: Sequence[tuple[np.ndarray, np.ndarray]]) -> np.ndarray:
        if len(layers) != self.n_layers:
            raise ValueError(f"expected {self.n_layers} layers, got {len(layers)}")
        flat = np.empty(self.size)
        for (w, b), (wshape, bshape), (w0, b0) in zip(layers, self.shapes, self.offsets):
            if np.shape(w) != wshape or np.shape(b) != bshape:
                raise ValueError(f"layer shape mismatch: {np.shape(w)}/{np.shape(b)} vs {wshape}/{bshape}")
            flat[w0:b0] = np.ravel(w)
            flat[b0:b0 + bshape[0]] = b
        return flat


def _act(z, kind):
    if kind == "tanh":
        return np.tanh(z)
    return np.maximum(z, 0.0)


def _act_grad(z, a, kind):
    if kind == "tanh":
        return 1.0 - a * a
    return (z > 0).astype(z.dtype)


class EndpointMLP:
    """Stateless network definition; parameters are always passed in explicitly."""

    def __init__(self, config: NetConfig):
        self.config = config
        self.layout = ParamLayout.from_config(config)

    @property
    def n_params(self) -> int:
        return self.layout.size

    def init_params(self, seed: int) -> np.ndarray:
        """Glorot-uniform weights, zero biases."""
        rng = np.random.default_rng(seed)
        flat = np.zeros(self.layout.size)
        for (w, b) in self.layout.unflatten(flat):
            fan_in, fan_out = w.shape
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            w[...] = rng.uniform(-limit, limit, size=w.shape)
        return flat

    def _check_features(self, X):
        X = np.asarray(X, dtype=float)
        squeeze = X.ndim == 1
        X = np.atleast_2d(X)
        if X.ndim != 2 or X.shape[1] != self.config.input_dim:
            raise ValueError(
                f"feature dimension mismatch: expected {self.config.input_dim}, got {X.shape[-1]}")
        return X, squeeze

    def _forward_cache(self, params, X):
        layers = self.layout.unflatten(params)
        acts, pre = [X], []
        a = X
        for i, (w, b) in enumerate(layers):
            z = a @ w + b
            pre.append(z)
            a = z if i == len(layers) - 1 else _act(z, self.config.activation)
            acts.append(a)
        out = (acts[-1] * self.config.output_scale).reshape(len(X), self.config.n_heads, 2)
        c = self.config.head_coupling
        if c:
            out = (1.0 - c) * out + c * out.mean(axis=1, keepdims=True)
        return layers, pre, acts, out

    def forward(self, params: np.ndarray, X) -> np.ndarray:
        """Endpoints of shape (n, W, 2), or (W, 2) for a single feature vector."""
        X, squeeze = self._check_features(X)
        out = self._forward_cache(params, X)[-1]
        return out[0] if squeeze else out

    def _backward(self, layers, pre, acts, d_out):
        """Backprop ``d_out`` (n, 2W) through the layers.

        Returns per layer the (input activation, output delta) pair, both (n, .), so callers can
        either contract over the batch or form per-sample outer products.
        """
        n = d_out.shape[0]
        c = self.config.head_coupling
        if c:
            heads = d_out.reshape(n, self.config.n_heads, 2)
            d_out = ((1.0 - c) * heads + c * heads.mean(axis=1, keepdims=True)).reshape(n, -1)
        delta = d_out * self.config.output_scale
        grads = [None] * len(layers)
        for i in range(len(layers) - 1, -1, -1):
            w, _ = layers[i]
            grads[i] = (acts[i], delta)
            if i > 0:
                delta = (delta @ w.T) * _act_grad(pre[i - 1], acts[i], self.config.activation)
        return grads, n

    def loss_and_grad(self, params: np.ndarray, X, Y) -> tuple[float, np.ndarray]:
        """Mean winner-takes-all loss over the batch and its gradient."""
        X, _ = self._check_features(X)
        Y = np.asarray(Y, dtype=float).reshape(-1, 2)
        if len(X) == 0:
            raise ValueError("loss_and_grad needs a non-empty batch")
        if len(Y) != len(X):
            raise ValueError(f"got {len(X)} feature rows but {len(Y)} targets")
        layers, pre, acts, out = self._forward_cache(params, X)
        losses, d_out = _wta_terms(out, Y)
        n = len(X)
        grads, _ = self._backward(layers, pre, acts, d_out / n)
        flat = np.empty(self.layout.size)
        for (a, delta), (w0, b0), ((fi, fo), _) in zip(grads, self.layout.offsets, self.layout.shapes):
            flat[w0:b0] = (a.T @ delta).ravel()
            flat[b0:b0 + fo] = delta.sum(axis=0)
        return float(losses.mean()), flat

    def per_sample_grads(self, params: np.ndarray, X, Y) -> tuple[np.ndarray, np.ndarray]:
        """Per-sample losses (n,) and gradients (n, n_params), each of that sample's own loss."""
        X, _ = self._check_features(X)
        Y = np.asarray(Y, dtype=float).reshape(-1, 2)
        if len(X) == 0:
            raise ValueError("per_sample_grads needs a non-empty batch")
        layers, pre, acts, out = self._forward_cache(params, X)
        losses, d_out = _wta_terms(out, Y)
        grads, n = self._backward(layers, pre, acts, d_out)
        flat = np.empty((n, self.layout.size))
        for (a, delta), (w0, b0), ((fi, fo), _) in zip(grads, self.layout.offsets, self.layout.shapes):
            flat[:, w0:b0] = np.einsum("ni,nj->nij", a, delta).reshape(n, -1)
            flat[:, b0:b0 + fo] = delta
        return losses, flat


def _wta_terms(out, Y):
    """Per-sample WTA loss and its gradient w.r.t. the flattened head outputs.

    Only the argmin head receives gradient; ``np.argmin`` picks the lowest index on ties.
    """
    n, w, _ = out.shape
    sq = ((out - Y[:, None, :]) ** 2).sum(axis=2)
    best = np.argmin(sq, axis=1)
    rows = np.arange(n)
    losses = sq[rows, best]
    d_out = np.zeros_like(out)
    d_out[rows, best] = 2.0 * (out[rows, best] - Y)
    return losses, d_out.reshape(n, 2 * w)


def wta_loss(pred, gt) -> float:
    """min over heads of the squared distance to ``gt``."""
    pred = np.asarray(pred, dtype=float).reshape(-1, 2)
    gt = np.asarray(gt, dtype=float)
    return float(((pred - gt) ** 2).sum(axis=1).min())


def init_network(config: NetConfig, seed: int) -> np.ndarray:
    return EndpointMLP(config).init_params(seed)


# -- Adam ---------------------------------------------------------------------

@dataclass(frozen=True)
class OptimizerState:
    first_moment: np.ndarray
    second_moment: np.ndarray
    step: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps_adam: float = 1e-8

    @classmethod
    def zeros(cls, n_params: int, **hyper) -> "OptimizerState":
        return cls(np.zeros(n_params), np.zeros(n_params), **hyper)


def optimizer_step(params: np.ndarray, grad: np.ndarray,
                   state: OptimizerState) -> tuple[np.ndarray, OptimizerState]:
    """One bias-corrected Adam update. Returns new arrays; inputs are not modified."""
    grad = np.asarray(grad, dtype=float)
    if grad.shape != params.shape or state.first_moment.shape != params.shape:
        raise ValueError(f"gradient shape {grad.shape} does not match parameters {params.shape}")
    t = state.step + 1
    m = state.beta1 * state.first_moment + (1.0 - state.beta1) * grad
    v = state.beta2 * state.second_moment + (1.0 - state.beta2) * grad * grad
    m_hat = m / (1.0 - state.beta1 ** t)
    v_hat = v / (1.0 - state.beta2 ** t)
    new_params = params - state.lr * m_hat / (np.sqrt(v_hat) + state.eps_adam)
    return new_params, replace(state, first_moment=m, second_moment=v, step=t)
