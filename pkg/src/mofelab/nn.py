"""Dense rectifier networks with hand-derived reverse-mode gradients and Adam.

Everything runs in float64. Parameters are held in plain numpy arrays;
``Mlp`` objects are treated as values, so the optimizer returns fresh
copies instead of mutating in place.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence

import numpy as np

from .errors import InvalidArchitectureError, NumericError, ShapeError


@dataclass
class Mlp:
    """Fully connected net: ReLU on hidden layers, identity on the output.

    ``weights[l]`` has shape ``(dims[l+1], dims[l])``.
    """

    dims: List[int]
    weights: List[np.ndarray]
    biases: List[np.ndarray]

    def __post_init__(self):
        if len(self.dims) < 2:
            raise InvalidArchitectureError("an Mlp needs at least one layer")
        if len(self.weights) != len(self.dims) - 1 or len(self.biases) != len(self.weights):
            raise ShapeError("parameter list length does not match dims")
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (self.dims[l + 1], self.dims[l]) or b.shape != (self.dims[l + 1],):
                raise ShapeError(f"layer {l}: expected W{(self.dims[l + 1], self.dims[l])}, "
                                 f"got W{w.shape} b{b.shape}")

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    @property
    def in_dim(self) -> int:
        return self.dims[0]

    @property
    def out_dim(self) -> int:
        return self.dims[-1]

    @property
    def n_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def copy(self) -> "Mlp":
        return Mlp(list(self.dims), [w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def flat(self) -> np.ndarray:
        """Parameters as one vector, layer by layer, W (row-major) then b."""
        parts = []
        for w, b in zip(self.weights, self.biases):
            parts.append(w.ravel())
            parts.append(b)
        return np.concatenate(parts)

    def with_flat(self, theta: np.ndarray) -> "Mlp":
        theta = np.asarray(theta, dtype=np.float64)
        if theta.shape != (self.n_params,):
            raise ShapeError(f"expected {self.n_params} parameters, got {theta.shape}")
        weights, biases, pos = [], [], 0
        for w, b in zip(self.weights, self.biases):
            weights.append(theta[pos:pos + w.size].reshape(w.shape).copy())
            pos += w.size
            biases.append(theta[pos:pos + b.size].copy())
            pos += b.size
        return Mlp(list(self.dims), weights, biases)

    def param_paths(self) -> List[str]:
        """Human-readable name for every entry of :meth:`flat`."""
        names = []
        for l, w in enumerate(self.weights):
            names.extend(f"W{l}[{i},{j}]" for i in range(w.shape[0]) for j in range(w.shape[1]))
            names.extend(f"b{l}[{i}]" for i in range(w.shape[0]))
        return names


@dataclass
class GradientSet:
    weights: List[np.ndarray]
    biases: List[np.ndarray]

    @classmethod
    def zeros_like(cls, model: Mlp) -> "GradientSet":
        return cls([np.zeros_like(w) for w in model.weights], [np.zeros_like(b) for b in model.biases])

    def flat(self) -> np.ndarray:
        parts = []
        for w, b in zip(self.weights, self.biases):
            parts.append(w.ravel())
            parts.append(b)
        return np.concatenate(parts)

    def __iadd__(self, other: "GradientSet") -> "GradientSet":
        for a, b in zip(self.weights, other.weights):
            a += b
        for a, b in zip(self.biases, other.biases):
            a += b
        return self

    def scale(self, c: float) -> "GradientSet":
        return GradientSet([w * c for w in self.weights], [b * c for b in self.biases])


def mlp_init(layer_dims: Sequence[int], seed: int) -> Mlp:
    """Uniform(+-sqrt(6/fan_in)) weights, zero biases."""
    dims = [int(d) for d in layer_dims]
    if len(dims) < 2 or any(d < 1 for d in dims):
        raise InvalidArchitectureError(f"invalid layer dims {list(layer_dims)!r}")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        bound = np.sqrt(6.0 / fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return Mlp(dims, weights, biases)


@dataclass
class ForwardCache:
    # activations[l] is the input to layer l; pre[l] its pre-activation
    activations: List[np.ndarray] = field(default_factory=list)
    pre: List[np.ndarray] = field(default_factory=list)


def mlp_forward_batch(model: Mlp, x: np.ndarray, name: str = "mlp"):
    """Forward a batch ``x`` of shape (N, dims[0]); returns (logits, cache)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != model.in_dim:
        raise ShapeError(f"{name}: expected input (N, {model.in_dim}), got {x.shape}")
    cache = ForwardCache()
    h = x
    last = model.n_layers - 1
    for l, (w, b) in enumerate(zip(model.weights, model.biases)):
        cache.activations.append(h)
        z = h @ w.T + b
        if not np.all(np.isfinite(z)):
            raise NumericError(f"non-finite value in {name} layer {l}")
        cache.pre.append(z)
        h = z if l == last else np.maximum(z, 0.0)
    return h, cache


def mlp_forward(model: Mlp, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ShapeError(f"expected a vector, got shape {x.shape}")
    out, _ = mlp_forward_batch(model, x[None, :])
    return out[0]


def mlp_backward(model: Mlp, cache: ForwardCache, grad_out: np.ndarray, need_input_grad: bool = False):
    """Backpropagate ``grad_out`` (N, out_dim); returns (GradientSet, grad wrt input or None)."""
    g = grad_out
    gw: List[Optional[np.ndarray]] = [None] * model.n_layers
    gb: List[Optional[np.ndarray]] = [None] * model.n_layers
    for l in range(model.n_layers - 1, -1, -1):
        if l != model.n_layers - 1:
            # subgradient of the rectifier at exactly 0 is 0
            g = g * (cache.pre[l] > 0.0)
        gw[l] = g.T @ cache.activations[l]
        gb[l] = g.sum(axis=0)
        if l > 0 or need_input_grad:
            g = g @ model.weights[l]
    return GradientSet(gw, gb), (g if need_input_grad else None)


@dataclass
class AdamState:
    m: List[np.ndarray]
    v: List[np.ndarray]
    step: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def fresh(cls, model: Mlp, lr: float = 1e-3, beta1=0.9, beta2=0.999, eps=1e-8) -> "AdamState":
        zeros = [np.zeros_like(p) for p in _params(model)]
        return cls([z.copy() for z in zeros], zeros, 0, lr, beta1, beta2, eps)


def _params(model: Mlp) -> List[np.ndarray]:
    out = []
    for w, b in zip(model.weights, model.biases):
        out += [w, b]
    return out


def _grads(grads: GradientSet) -> List[np.ndarray]:
    out = []
    for w, b in zip(grads.weights, grads.biases):
        out += [w, b]
    return out


def adam_step(model: Mlp, grads: GradientSet, state: AdamState):
    """One bias-corrected Adam update; returns (new model, new state)."""
    params, gs = _params(model), _grads(grads)
    if len(gs) != len(params) or any(g.shape != p.shape for g, p in zip(gs, params)):
        raise ShapeError("gradient shapes do not match model parameters")
    t = state.step + 1
    b1, b2 = state.beta1, state.beta2
    new_m, new_v, new_p = [], [], []
    for p, g, m, v in zip(params, gs, state.m, state.v):
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * (g * g)
        m_hat = m / (1.0 - b1 ** t)
        v_hat = v / (1.0 - b2 ** t)
        new_p.append(p - state.lr * m_hat / (np.sqrt(v_hat) + state.eps))
        new_m.append(m)
        new_v.append(v)
    new_model = Mlp(list(model.dims), new_p[0::2], new_p[1::2])
    return new_model, AdamState(new_m, new_v, t, state.lr, b1, b2, state.eps)


def central_difference(f: Callable[[np.ndarray], float], theta, step: float) -> np.ndarray:
    """(f(theta + h e_i) - f(theta - h e_i)) / 2h for every coordinate i."""
    if not step > 0:
        raise ValueError(f"finite-difference step must be positive, got {step}")
    theta = np.array(theta, dtype=np.float64, ndmin=1)
    grad = np.empty_like(theta)
    for i in range(theta.size):
        orig = theta[i]
        theta[i] = orig + step
        f_plus = f(theta)
        theta[i] = orig - step
        f_minus = f(theta)
        theta[i] = orig
        grad[i] = (f_plus - f_minus) / (2.0 * step)
    return grad
