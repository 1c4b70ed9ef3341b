"""Dense networks in plain numpy: forward, reverse-mode gradients, SGD/Adam.

Weights are stored as ``(fan_in, fan_out)`` so a batch ``X`` of shape
``(B, fan_in)`` maps to ``X @ W + b``. All math is float64.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

ACTIVATIONS = ("relu", "tanh", "identity")


def _act(name: str, z: np.ndarray) -> np.ndarray:
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "tanh":
        return np.tanh(z)
    return z


def _act_grad(name: str, z: np.ndarray, a: np.ndarray) -> np.ndarray:
    if name == "relu":
        return (z > 0.0).astype(z.dtype)
    if name == "tanh":
        return 1.0 - a * a
    return np.ones_like(z)


@dataclass
class Mlp:
    layer_dims: list[int]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    hidden_activation: str = "relu"
    output_activation: str = "identity"

    def __post_init__(self):
        self.layer_dims = [int(d) for d in self.layer_dims]
        if len(self.layer_dims) < 2:
            raise ValueError("need at least an input and an output dimension")
        if len(self.weights) != len(self.layer_dims) - 1 or len(self.biases) != len(self.weights):
            raise ValueError("one weight matrix and bias per layer")
        for k, (W, b) in enumerate(zip(self.weights, self.biases)):
            if W.shape != (self.layer_dims[k], self.layer_dims[k + 1]) or b.shape != (self.layer_dims[k + 1],):
                raise ValueError(f"layer {k} has shapes {W.shape}, {b.shape}")
        for name in (self.hidden_activation, self.output_activation):
            if name not in ACTIVATIONS:
                raise ValueError(f"unknown activation {name!r}")

    @classmethod
    def init(cls, layer_dims, rng: np.random.Generator, hidden_activation="relu",
             output_activation="identity") -> "Mlp":
        """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights and biases."""
        weights, biases = [], []
        for n_in, n_out in zip(layer_dims[:-1], layer_dims[1:]):
            bound = 1.0 / np.sqrt(n_in)
            weights.append(rng.uniform(-bound, bound, size=(n_in, n_out)))
            biases.append(rng.uniform(-bound, bound, size=n_out))
        return cls(list(layer_dims), weights, biases, hidden_activation, output_activation)

    @classmethod
    def zeros(cls, layer_dims, hidden_activation="relu", output_activation="identity") -> "Mlp":
        weights = [np.zeros((a, b)) for a, b in zip(layer_dims[:-1], layer_dims[1:])]
        biases = [np.zeros(b) for b in layer_dims[1:]]
        return cls(list(layer_dims), weights, biases, hidden_activation, output_activation)

    @property
    def params(self) -> list[np.ndarray]:
        """Parameter arrays in canonical order: W0, b0, W1, b1, ..."""
        out = []
        for W, b in zip(self.weights, self.biases):
            out += [W, b]
        return out

    @property
    def n_params(self) -> int:
        return sum(p.size for p in self.params)

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def activation(self, k: int) -> str:
        return self.output_activation if k == self.n_layers - 1 else self.hidden_activation

    def clone(self) -> "Mlp":
        return Mlp(list(self.layer_dims), [W.copy() for W in self.weights], [b.copy() for b in self.biases],
                   self.hidden_activation, self.output_activation)

    def flatten(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.params])

    def unflatten(self, vec: np.ndarray) -> "Mlp":
        """New network with this one's shapes and parameters taken from ``vec``."""
        vec = np.asarray(vec, dtype=float)
        if vec.shape != (self.n_params,):
            raise ValueError(f"expected {self.n_params} parameters, got {vec.shape}")
        out = self.clone()
        pos = 0
        for p in out.params:
            p[...] = vec[pos:pos + p.size].reshape(p.shape)
            pos += p.size
        return out

    def load_flat(self, vec: np.ndarray) -> None:
        """In-place counterpart of :meth:`unflatten`."""
        pos = 0
        for p in self.params:
            p[...] = vec[pos:pos + p.size].reshape(p.shape)
            pos += p.size

    def same_shape(self, other: "Mlp") -> bool:
        return self.layer_dims == other.layer_dims

    def __call__(self, x):
        return forward(self, x)

    def forward_cached(self, X: np.ndarray):
        return forward_cached(self, X)

    def backward_cached(self, cache, upstream: np.ndarray, need_input: bool = True) -> "GradientBundle":
        return backward_cached(self, cache, upstream, need_input)


@dataclass
class GradientBundle:
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    input: np.ndarray | None = None

    @property
    def params(self) -> list[np.ndarray]:
        out = []
        for W, b in zip(self.weights, self.biases):
            out += [W, b]
        return out

    def flatten(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.params])

    def scaled(self, c: float) -> "GradientBundle":
        return GradientBundle([c * g for g in self.weights], [c * g for g in self.biases],
                              None if self.input is None else c * self.input)


def _as_batch(net: Mlp, x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    X = x[None, :] if single else x
    if X.ndim != 2 or X.shape[1] != net.layer_dims[0]:
        raise ValueError(f"input has shape {x.shape}, network expects {net.layer_dims[0]} features")
    return X, single


def forward_cached(net: Mlp, X: np.ndarray):
    """Forward pass on a batch, keeping pre- and post-activations for :func:`backward_cached`."""
    acts = [X]
    pre = []
    a = X
    for k, (W, b) in enumerate(zip(net.weights, net.biases)):
        z = a @ W + b
        a = _act(net.activation(k), z)
        pre.append(z)
        acts.append(a)
    return a, (pre, acts)


def backward_cached(net: Mlp, cache, upstream: np.ndarray, need_input: bool = True) -> GradientBundle:
    pre, acts = cache
    gW = [None] * net.n_layers
    gb = [None] * net.n_layers
    delta = upstream
    for k in range(net.n_layers - 1, -1, -1):
        delta = delta * _act_grad(net.activation(k), pre[k], acts[k + 1])
        gW[k] = acts[k].T @ delta
        gb[k] = delta.sum(axis=0)
        if k > 0 or need_input:
            delta = delta @ net.weights[k].T
    return GradientBundle(gW, gb, delta if need_input else None)


def forward(net: Mlp, x) -> np.ndarray:
    """Evaluate ``net`` on one input vector or a batch of row vectors."""
    X, single = _as_batch(net, x)
    out, _ = forward_cached(net, X)
    return out[0] if single else out


def backward(net: Mlp, x, upstream) -> GradientBundle:
    """Gradients of ``sum(upstream * net(x))`` w.r.t. every parameter and the input.

    For a batch, parameter gradients are summed over rows and the input
    gradient keeps one row per sample.
    """
    X, single = _as_batch(net, x)
    U = np.asarray(upstream, dtype=float)
    U = U[None, :] if U.ndim == 1 else U
    if U.shape != (X.shape[0], net.layer_dims[-1]):
        raise ValueError(f"upstream has shape {np.shape(upstream)}, expected output dim {net.layer_dims[-1]}")
    _, cache = forward_cached(net, X)
    g = backward_cached(net, cache, U)
    if single:
        g.input = g.input[0]
    return g


@dataclass
class OptimizerState:
    method: str = "adam"
    step_size: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        if self.method not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.method!r}")
        if not self.step_size > 0:
            raise ValueError("step_size must be > 0")


def apply_update(net: Mlp, grads: GradientBundle, opt: OptimizerState, direction: str = "descent") -> None:
    """One in-place optimizer step; ``direction="ascent"`` climbs the gradient instead."""
    if direction not in ("descent", "ascent"):
        raise ValueError(f"direction must be 'descent' or 'ascent', got {direction!r}")
    sign = -1.0 if direction == "descent" else 1.0
    params = net.params
    gs = grads.params
    if len(gs) != len(params) or any(g.shape != p.shape for g, p in zip(gs, params)):
        raise ValueError("gradient shapes do not match the network")

    if opt.method == "sgd":
        for p, g in zip(params, gs):
            p += sign * opt.step_size * g
        return

    if not opt.m:
        opt.m = [np.zeros_like(p) for p in params]
        opt.v = [np.zeros_like(p) for p in params]
    opt.t += 1
    c1 = 1.0 - opt.beta1 ** opt.t
    c2 = 1.0 - opt.beta2 ** opt.t
    for p, g, m, v in zip(params, gs, opt.m, opt.v):
        m *= opt.beta1
        m += (1.0 - opt.beta1) * g
        v *= opt.beta2
        v += (1.0 - opt.beta2) * g * g
        p += sign * opt.step_size * (m / c1) / (np.sqrt(v / c2) + opt.eps)


def numeric_gradient(f, theta: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central differences of scalar ``f`` at ``theta``."""
    theta = np.array(theta, dtype=float)
    g = np.empty_like(theta)
    for i in range(theta.size):
        old = theta[i]
        theta[i] = old + h
        fp = f(theta)
        theta[i] = old - h
        fm = f(theta)
        theta[i] = old
        g[i] = (fp - fm) / (2.0 * h)
    return g


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    return float(np.max(np.abs(analytic - numeric) / np.maximum(1e-8, np.abs(numeric))))


def finite_difference_check(net: Mlp, x, upstream, h: float = 1e-5, grad_fn=None) -> float:
    """Max relative error between analytic parameter gradients and central differences.

    ``grad_fn(net, x, upstream)`` defaults to :func:`backward`; pass a broken
    one to confirm the check catches it.
    """
    grad_fn = grad_fn or backward
    U = np.asarray(upstream, dtype=float)
    analytic = grad_fn(net, x, U).flatten()
    probe = net.clone()

    def f(theta):
        probe.load_flat(theta)
        return float(np.sum(U * forward(probe, x)))

    numeric = numeric_gradient(f, net.flatten(), h)
    return relative_error(analytic, numeric)
