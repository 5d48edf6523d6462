"""Small dense tanh networks with hand-written reverse mode and Adam.

Weights are stored as ``(fan_in, fan_out)`` matrices so a batch ``X`` of shape
``(n, fan_in)`` maps to ``X @ W + b``. Hidden layers use ``tanh``; the output
layer is affine.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from numpy.typing import NDArray

Array = NDArray[np.float64]


class ArchitectureError(ValueError):
    pass


class ShapeError(ValueError):
    pass


class NumericError(FloatingPointError):
    pass


@dataclass(frozen=True)
class Mlp:
    layer_dims: tuple[int, ...]
    weights: tuple[Array, ...]
    biases: tuple[Array, ...]

    def __post_init__(self):
        _check_dims(self.layer_dims)
        if len(self.weights) != len(self.layer_dims) - 1 or len(self.biases) != len(self.weights):
            raise ShapeError("need one weight matrix and bias per layer")
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            shape = (self.layer_dims[k], self.layer_dims[k + 1])
            if w.shape != shape or b.shape != (shape[1],):
                raise ShapeError(f"layer {k}: weight {w.shape}/bias {b.shape}, expected {shape}")

    @property
    def input_dim(self) -> int:
        return self.layer_dims[0]

    @property
    def output_dim(self) -> int:
        return self.layer_dims[-1]

    @property
    def n_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def parameters(self) -> list[Array]:
        """Flat list ``[W0, b0, W1, b1, ...]``."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def flat(self) -> Array:
        return np.concatenate([p.ravel() for p in self.parameters()])

    def with_parameters(self, params: Sequence[Array]) -> "Mlp":
        params = [np.asarray(p, dtype=np.float64) for p in params]
        return Mlp(self.layer_dims, tuple(params[0::2]), tuple(params[1::2]))

    def __call__(self, x) -> Array:
        return mlp_forward(self, x)

    def to_dict(self) -> dict:
        return {
            "layer_dims": list(self.layer_dims),
            "weights": [w.tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Mlp":
        dims = tuple(int(n) for n in d["layer_dims"])
        ws = tuple(np.array(w, dtype=np.float64).reshape(dims[k], dims[k + 1]) for k, w in enumerate(d["weights"]))
        bs = tuple(np.array(b, dtype=np.float64).reshape(dims[k + 1]) for k, b in enumerate(d["biases"]))
        return cls(dims, ws, bs)

    def dumps(self) -> str:
        # json writes floats with repr(), which round-trips exactly
        return json.dumps(self.to_dict())

    @classmethod
    def loads(cls, text: str) -> "Mlp":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class GradientSet:
    weights: tuple[Array, ...]
    biases: tuple[Array, ...]

    def parameters(self) -> list[Array]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def __add__(self, other: "GradientSet") -> "GradientSet":
        return GradientSet(
            tuple(a + b for a, b in zip(self.weights, other.weights)),
            tuple(a + b for a, b in zip(self.biases, other.biases)),
        )


@dataclass
class AdamState:
    first_moment: list[Array]
    second_moment: list[Array]
    step_count: int = 0
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def for_mlp(cls, mlp: Mlp, learning_rate: float = 1e-3, **kwargs) -> "AdamState":
        zeros = [np.zeros_like(p) for p in mlp.parameters()]
        return cls([z.copy() for z in zeros], zeros, 0, learning_rate, **kwargs)


def _check_dims(layer_dims) -> None:
    if len(layer_dims) < 2 or any(int(n) != n or n <= 0 for n in layer_dims):
        raise ArchitectureError(f"invalid architecture {list(layer_dims)!r}")


def mlp_init(layer_dims: Sequence[int], seed: int) -> Mlp:
    """Glorot-uniform weights, zero biases."""
    _check_dims(layer_dims)
    dims = tuple(int(n) for n in layer_dims)
    rng = np.random.default_rng(seed)
    ws, bs = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        ws.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        bs.append(np.zeros(fan_out))
    return Mlp(dims, tuple(ws), tuple(bs))


def _as_batch(mlp: Mlp, x) -> tuple[Array, bool]:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim <= 1
    if x.ndim == 0:
        x = x.reshape(1, 1)
    elif x.ndim == 1:
        x = x.reshape(1, -1)
    if x.ndim != 2 or x.shape[1] != mlp.input_dim:
        raise ShapeError(f"expected input dimension {mlp.input_dim}, got shape {x.shape}")
    return x, single


def forward_cached(mlp: Mlp, x: Array) -> tuple[Array, list[Array]]:
    """Batch forward pass keeping each layer's input for the backward sweep."""
    acts = [x]
    h = x
    last = len(mlp.weights) - 1
    for k, (w, b) in enumerate(zip(mlp.weights, mlp.biases)):
        h = h @ w + b
        if k < last:
            h = np.tanh(h)
        acts.append(h)
    return h, acts


def mlp_forward(mlp: Mlp, x) -> Array:
    """Evaluate the network on one input vector or a batch of rows."""
    xb, single = _as_batch(mlp, x)
    out, _ = forward_cached(mlp, xb)
    return out[0] if single else out


def backward_cached(mlp: Mlp, acts: list[Array], upstream: Array) -> tuple[GradientSet, Array]:
    """Vector-Jacobian product through a cached forward pass.

    Returns parameter gradients of ``sum(outputs * upstream)`` and the
    cotangent with respect to the inputs.
    """
    g = upstream
    gw: list[Array] = [None] * len(mlp.weights)  # type: ignore[list-item]
    gb: list[Array] = [None] * len(mlp.weights)  # type: ignore[list-item]
    for k in range(len(mlp.weights) - 1, -1, -1):
        if k < len(mlp.weights) - 1:
            # acts[k + 1] holds tanh output of layer k
            g = g * (1.0 - acts[k + 1] ** 2)
        gw[k] = acts[k].T @ g
        gb[k] = g.sum(axis=0)
        g = g @ mlp.weights[k].T
    return GradientSet(tuple(gw), tuple(gb)), g


def mlp_vjp(mlp: Mlp, x_batch, upstream) -> tuple[GradientSet, Array]:
    xb, _ = _as_batch(mlp, x_batch)
    up = np.asarray(upstream, dtype=np.float64).reshape(xb.shape[0], -1)
    if up.shape[1] != mlp.output_dim:
        raise ShapeError(f"upstream has shape {up.shape}, outputs are ({xb.shape[0]}, {mlp.output_dim})")
    _, acts = forward_cached(mlp, xb)
    return backward_cached(mlp, acts, up)


def mlp_backward(mlp: Mlp, x_batch, upstream) -> GradientSet:
    """Gradient of ``sum_n <mlp(x_n), upstream_n>`` with respect to all parameters."""
    xb, _ = _as_batch(mlp, x_batch)
    if xb.shape[0] == 0:
        raise ShapeError("empty batch")
    grads, _ = mlp_vjp(mlp, xb, upstream)
    return grads


def adam_step(mlp: Mlp, grads: GradientSet, state: AdamState) -> tuple[Mlp, AdamState]:
    params = mlp.parameters()
    gparams = grads.parameters()
    if len(gparams) != len(params):
        raise ShapeError("gradient set does not match network")
    for k, (p, g) in enumerate(zip(params, gparams)):
        if g.shape != p.shape:
            raise ShapeError(f"gradient {k} has shape {g.shape}, parameter {p.shape}")
        if not np.all(np.isfinite(g)):
            kind = "weights" if k % 2 == 0 else "biases"
            raise NumericError(f"nonfinite gradient in layer {k // 2} {kind}")

    t = state.step_count + 1
    b1, b2 = state.beta1, state.beta2
    m_new, v_new, p_new = [], [], []
    for p, g, m, v in zip(params, gparams, state.first_moment, state.second_moment):
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        m_hat = m / (1.0 - b1**t)
        v_hat = v / (1.0 - b2**t)
        p_new.append(p - state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon))
        m_new.append(m)
        v_new.append(v)
    new_state = AdamState(m_new, v_new, t, state.learning_rate, b1, b2, state.epsilon)
    return mlp.with_parameters(p_new), new_state
