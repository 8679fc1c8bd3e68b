"""Feedforward networks with hand-written backprop and Adam.

Weights are stored as ``(fan_in, fan_out)`` matrices so a batch ``X`` of
shape ``(n, fan_in)`` maps through ``X @ W + b``. Hidden layers use ReLU;
the output activation is one of ``identity``, ``tanh``, ``sigmoid`` or
``relu`` (the last one is used for shared bodies).
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass

import numpy as np

from .errors import NumericError, ShapeError

ACTIVATIONS = ("identity", "tanh", "sigmoid", "relu")


def _sigmoid(z):
    # clipping keeps the output strictly inside (0, 1) in float64
    return 1.0 / (1.0 + np.exp(-np.clip(z, -30.0, 30.0)))


def _activate(z, kind):
    if kind == "relu":
        return np.maximum(z, 0.0)
    if kind == "tanh":
        return np.tanh(z)
    if kind == "sigmoid":
        return _sigmoid(z)
    return z


def _backprop_activation(g, z, a, kind):
    if kind == "relu":
        return g * (z > 0)
    if kind == "tanh":
        return g * (1.0 - a * a)
    if kind == "sigmoid":
        return g * (a * (1.0 - a))
    return g


@dataclass
class MLP:
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    output: str = "identity"

    def __post_init__(self):
        if self.output not in ACTIVATIONS:
            raise ValueError(f"unknown output activation {self.output!r}")
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ShapeError("need matching, non-empty weight and bias lists")
        for k, (W, b) in enumerate(zip(self.weights, self.biases)):
            if W.ndim != 2 or b.shape != (W.shape[1],):
                raise ShapeError(f"layer {k}: weight {W.shape} / bias {b.shape} mismatch")
            if k and W.shape[0] != self.weights[k - 1].shape[1]:
                raise ShapeError(
                    f"layer {k} expects {W.shape[0]} inputs, "
                    f"layer {k - 1} produces {self.weights[k - 1].shape[1]}")

    @property
    def sizes(self) -> list[int]:
        return [self.weights[0].shape[0]] + [W.shape[1] for W in self.weights]

    @property
    def in_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def out_dim(self) -> int:
        return self.weights[-1].shape[1]

    def params(self) -> list[np.ndarray]:
        """Flat ``[W0, b0, W1, b1, ...]`` view (same array objects)."""
        out = []
        for W, b in zip(self.weights, self.biases):
            out += [W, b]
        return out

    def copy(self) -> "MLP":
        return copy.deepcopy(self)

    def activation(self, k: int) -> str:
        return self.output if k == len(self.weights) - 1 else "relu"

    def _as_batch(self, x):
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        X = x[None, :] if single else x
        if X.ndim != 2 or X.shape[1] != self.in_dim:
            raise ShapeError(f"expected input dim {self.in_dim}, got shape {x.shape}")
        return X, single

    def forward(self, x) -> np.ndarray:
        X, single = self._as_batch(x)
        a = X
        for k, (W, b) in enumerate(zip(self.weights, self.biases)):
            a = _activate(a @ W + b, self.activation(k))
        return a[0] if single else a

    __call__ = forward

    def forward_cache(self, x):
        X, _ = self._as_batch(x)
        acts, pre = [X], []
        a = X
        for k, (W, b) in enumerate(zip(self.weights, self.biases)):
            z = a @ W + b
            a = _activate(z, self.activation(k))
            pre.append(z)
            acts.append(a)
        return a, (acts, pre)

    def backward_cache(self, cache, grad_out, input_grad=True):
        """Gradients of ``sum(output * grad_out)`` given a forward cache.

        Returns ``(param_grads, input_grad)``; the latter is None when
        ``input_grad`` is false.
        """
        acts, pre = cache
        g = np.asarray(grad_out, dtype=float)
        if g.ndim == 1:
            g = g[None, :]
        if g.shape != acts[-1].shape:
            raise ShapeError(f"upstream grad {g.shape} vs output {acts[-1].shape}")
        grads = [None] * (2 * len(self.weights))
        for k in range(len(self.weights) - 1, -1, -1):
            dz = _backprop_activation(g, pre[k], acts[k + 1], self.activation(k))
            grads[2 * k] = acts[k].T @ dz
            grads[2 * k + 1] = dz.sum(axis=0)
            if k or input_grad:
                g = dz @ self.weights[k].T
            else:
                g = None
        return grads, g


def init_mlp(sizes, rng: np.random.Generator, output="identity",
             final_scale: float | None = None) -> MLP:
    """Uniform fan-in initialisation, U(-1/sqrt(fan_in), 1/sqrt(fan_in)).

    ``final_scale`` overrides the bound of the last layer (small values keep
    initial outputs near zero).
    """
    weights, biases = [], []
    n = len(sizes) - 1
    for k in range(n):
        bound = 1.0 / np.sqrt(sizes[k])
        if k == n - 1 and final_scale is not None:
            bound = final_scale
        weights.append(rng.uniform(-bound, bound, size=(sizes[k], sizes[k + 1])))
        biases.append(rng.uniform(-bound, bound, size=sizes[k + 1]))
    return MLP(weights, biases, output)


def forward(params: MLP, x) -> np.ndarray:
    return params.forward(x)


def backward(params: MLP, x, upstream_grad):
    """Returns ``(param_grads, input_grad)`` for ``sum(params(x) * upstream_grad)``."""
    x = np.asarray(x, dtype=float)
    out, cache = params.forward_cache(x)
    up = np.asarray(upstream_grad, dtype=float)
    if up.shape != (out[0].shape if x.ndim == 1 else out.shape):
        raise ShapeError(f"upstream grad shape {up.shape} does not match output")
    grads, gin = params.backward_cache(cache, up)
    return grads, (gin[0] if x.ndim == 1 else gin)


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0

    @classmethod
    def for_params(cls, params, lr=3e-4, **kw) -> "AdamState":
        return cls([np.zeros_like(p) for p in params],
                   [np.zeros_like(p) for p in params], lr=lr, **kw)


def adam_step(params: list[np.ndarray], grads: list[np.ndarray], opt: AdamState):
    """In-place Adam update with bias correction.

    Raises NumericError, leaving parameters and moments untouched, when any
    gradient entry is non-finite.
    """
    if len(params) != len(grads) or len(params) != len(opt.m):
        raise ShapeError("params, grads and optimizer state lengths differ")
    total = 0.0
    for p, g in zip(params, grads):
        if p.shape != g.shape:
            raise ShapeError(f"grad shape {g.shape} vs param shape {p.shape}")
        total += float(np.sum(g))
    # any nan/inf entry makes the sum non-finite
    if not math.isfinite(total):
        raise NumericError("non-finite gradient; update skipped")
    opt.step += 1
    b1, b2 = opt.beta1, opt.beta2
    c1 = 1.0 - b1 ** opt.step
    c2 = 1.0 - b2 ** opt.step
    for p, g, m, v in zip(params, grads, opt.m, opt.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= opt.lr * (m / c1) / (np.sqrt(v / c2) + opt.eps)
    return params


class TwoHeadModel:
    """Shared ReLU body feeding a linear reward head and a sigmoid discount head."""

    def __init__(self, body: MLP, reward_head: MLP, discount_head: MLP):
        if body.output != "relu":
            raise ValueError("body output must be relu")
        if reward_head.in_dim != body.out_dim or discount_head.in_dim != body.out_dim:
            raise ShapeError("heads must consume the body output")
        if discount_head.output != "sigmoid":
            raise ValueError("discount head must use a sigmoid output")
        self.body = body
        self.reward_head = reward_head
        self.discount_head = discount_head

    @classmethod
    def create(cls, in_dim, rng, hidden=(64, 64)) -> "TwoHeadModel":
        body = init_mlp([in_dim, *hidden], rng, output="relu")
        return cls(body,
                   init_mlp([hidden[-1], 1], rng, output="identity"),
                   init_mlp([hidden[-1], 1], rng, output="sigmoid"))

    def params(self) -> list[np.ndarray]:
        return self.body.params() + self.reward_head.params() + self.discount_head.params()

    def copy(self) -> "TwoHeadModel":
        return copy.deepcopy(self)

    @property
    def in_dim(self):
        return self.body.in_dim

    def forward(self, x):
        """Returns ``(discounted_return, discount)`` as 1-D arrays (or floats)."""
        single = np.asarray(x).ndim == 1
        h = self.body.forward(x)
        r = self.reward_head.forward(h)[..., 0]
        g = self.discount_head.forward(h)[..., 0]
        if single:
            return float(r), float(g)
        return r, g

    __call__ = forward

    def loss_and_grads(self, X, r_target, g_target):
        """Mean over the batch of squared errors on both heads."""
        X = np.asarray(X, dtype=float)
        n = X.shape[0]
        h, body_cache = self.body.forward_cache(X)
        r, r_cache = self.reward_head.forward_cache(h)
        g, g_cache = self.discount_head.forward_cache(h)
        er = r[:, 0] - np.asarray(r_target, dtype=float)
        eg = g[:, 0] - np.asarray(g_target, dtype=float)
        loss = float(np.mean(er * er) + np.mean(eg * eg))
        gr, dh_r = self.reward_head.backward_cache(r_cache, (2.0 / n) * er[:, None])
        gg, dh_g = self.discount_head.backward_cache(g_cache, (2.0 / n) * eg[:, None])
        gb, _ = self.body.backward_cache(body_cache, dh_r + dh_g, input_grad=False)
        return loss, gb + gr + gg


def _relative_error(a, n, floor=1e-6):
    return np.abs(a - n) / np.maximum(np.abs(a) + np.abs(n), floor)


def _coords(shape, n_coords, rng):
    """All indices of ``shape``, or ``n_coords`` of them drawn without replacement."""
    total = int(np.prod(shape))
    if n_coords is None or n_coords >= total:
        return list(np.ndindex(shape))
    flat = rng.choice(total, size=n_coords, replace=False)
    return [np.unravel_index(i, shape) for i in flat]


def _relu_masks(net: MLP, X):
    _, (_, pre) = net.forward_cache(X)
    return [z > 0 for k, z in enumerate(pre) if net.activation(k) == "relu"]


def gradient_check(net: MLP, x, upstream=None, step=1e-5, rng=None,
                   n_coords: int | None = None) -> float:
    """Max relative error between backward() and central differences.

    The scalar objective is ``sum(net(x) * upstream)``. Coordinates whose
    perturbation flips any ReLU unit (a kink) are excluded. Input gradients
    are checked alongside parameter gradients. With ``n_coords`` only that
    many random coordinates of each parameter tensor are checked.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    X = np.atleast_2d(np.asarray(x, dtype=float))
    if upstream is None:
        upstream = rng.normal(size=(X.shape[0], net.out_dim))
    upstream = np.asarray(upstream, dtype=float).reshape(X.shape[0], net.out_dim)

    grads, gin = backward(net, X, upstream)
    base_masks = _relu_masks(net, X)

    def objective():
        return float(np.sum(net.forward(X) * upstream))

    def kink_crossed():
        return any(np.any(m != b) for m, b in zip(_relu_masks(net, X), base_masks))

    worst = 0.0
    for p, g in zip(net.params(), grads):
        for idx in _coords(p.shape, n_coords, rng):
            orig = p[idx]
            p[idx] = orig + step
            fp, kp = objective(), kink_crossed()
            p[idx] = orig - step
            fm, km = objective(), kink_crossed()
            p[idx] = orig
            if kp or km:
                continue
            worst = max(worst, float(_relative_error(g[idx], (fp - fm) / (2 * step))))
    for idx in np.ndindex(X.shape):
        orig = X[idx]
        X[idx] = orig + step
        fp, kp = objective(), kink_crossed()
        X[idx] = orig - step
        fm, km = objective(), kink_crossed()
        X[idx] = orig
        if kp or km:
            continue
        worst = max(worst, float(_relative_error(gin[idx], (fp - fm) / (2 * step))))
    return worst


def gradient_check_two_head(model: TwoHeadModel, X, r_target, g_target, step=1e-5,
                            rng=None, n_coords: int | None = None) -> float:
    """Same check as :func:`gradient_check`, on the two-head regression loss."""
    rng = rng if rng is not None else np.random.default_rng(0)
    X = np.atleast_2d(np.asarray(X, dtype=float))
    _, grads = model.loss_and_grads(X, r_target, g_target)
    base = _relu_masks(model.body, X)

    def crossed():
        return any(np.any(m != b) for m, b in zip(_relu_masks(model.body, X), base))

    worst = 0.0
    for p, g in zip(model.params(), grads):
        for idx in _coords(p.shape, n_coords, rng):
            orig = p[idx]
            p[idx] = orig + step
            fp, kp = model.loss_and_grads(X, r_target, g_target)[0], crossed()
            p[idx] = orig - step
            fm, km = model.loss_and_grads(X, r_target, g_target)[0], crossed()
            p[idx] = orig
            if kp or km:
                continue
            worst = max(worst, float(_relative_error(g[idx], (fp - fm) / (2 * step))))
    return worst


# -- checkpoint (de)serialisation -------------------------------------------------

def mlp_to_arrays(net: MLP, prefix: str) -> dict[str, np.ndarray]:
    out = {f"{prefix}/output": np.array(net.output),
           f"{prefix}/sizes": np.array(net.sizes, dtype=np.int64)}
    for k, (W, b) in enumerate(zip(net.weights, net.biases)):
        out[f"{prefix}/W{k}"] = np.ascontiguousarray(W)
        out[f"{prefix}/b{k}"] = np.ascontiguousarray(b)
    return out


def mlp_from_arrays(arrays, prefix: str) -> MLP:
    sizes = [int(s) for s in arrays[f"{prefix}/sizes"]]
    n = len(sizes) - 1
    weights = [np.array(arrays[f"{prefix}/W{k}"], dtype=float) for k in range(n)]
    biases = [np.array(arrays[f"{prefix}/b{k}"], dtype=float) for k in range(n)]
    return MLP(weights, biases, str(arrays[f"{prefix}/output"]))


def adam_to_arrays(opt: AdamState, prefix: str) -> dict[str, np.ndarray]:
    out = {f"{prefix}/hyper": np.array([opt.lr, opt.beta1, opt.beta2, opt.eps, opt.step])}
    for k, (m, v) in enumerate(zip(opt.m, opt.v)):
        out[f"{prefix}/m{k}"] = m
        out[f"{prefix}/v{k}"] = v
    return out


def adam_from_arrays(arrays, prefix: str, n: int) -> AdamState:
    lr, b1, b2, eps, step = arrays[f"{prefix}/hyper"]
    return AdamState([np.array(arrays[f"{prefix}/m{k}"]) for k in range(n)],
                     [np.array(arrays[f"{prefix}/v{k}"]) for k in range(n)],
                     lr=float(lr), beta1=float(b1), beta2=float(b2), eps=float(eps),
                     step=int(step))
