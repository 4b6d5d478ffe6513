"""Minimal reverse-mode differentiation over dense float64 arrays.

A :class:`Tape` records primitive operations as they are evaluated.  Node
values are plain ``numpy`` arrays; nodes are referred to by integer ids that
index the tape, so inputs always precede the nodes that consume them.

    tape = Tape()
    w = tape.leaf(np.ones((3, 2)))
    x = tape.constant(np.arange(3.0))
    y = tape.sum(tape.relu(tape.matmul(x, w)))
    grads = gradient(tape, y)     # {w: array of shape (3, 2)}

Only leaves receive gradients.  Constants and everything downstream of a
``stop_gradient`` node are treated as fixed inputs.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, DomainError, ShapeError

PRIMITIVES = frozenset({
    "affine", "matmul", "add", "mul", "concat", "slice", "relu", "sigmoid",
    "exp", "log", "softplus", "square", "sum", "mean", "stop_gradient",
})


def sigmoid(a):
    out = np.empty_like(a, dtype=np.float64)
    pos = a >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a[pos]))
    ea = np.exp(a[~pos])
    out[~pos] = ea / (1.0 + ea)
    return out


def softplus(a):
    return np.logaddexp(0.0, a)


def _unbroadcast(g, shape):
    """Sum ``g`` down to ``shape`` (reverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _broadcast_shape(a, b, op):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: cannot combine shapes {a.shape} and {b.shape}") from None


# --- forward rules -----------------------------------------------------------

def _fwd_affine(vals, attrs):
    x, w, b = vals
    if w.ndim != 2 or x.shape[-1:] != w.shape[:1] or b.shape != w.shape[1:]:
        raise ShapeError(f"affine: x{x.shape} @ W{w.shape} + b{b.shape}")
    return x @ w + b


def _fwd_matmul(vals, attrs):
    a, b = vals
    if a.ndim == 0 or b.ndim == 0 or a.shape[-1] != b.shape[-2 if b.ndim > 1 else 0]:
        raise ShapeError(f"matmul: {a.shape} @ {b.shape}")
    return a @ b


def _fwd_add(vals, attrs):
    a, b = vals
    _broadcast_shape(a, b, "add")
    return a + b


def _fwd_mul(vals, attrs):
    a, b = vals
    _broadcast_shape(a, b, "mul")
    return a * b


def _fwd_concat(vals, attrs):
    try:
        return np.concatenate(vals, axis=attrs["axis"])
    except ValueError as exc:
        raise ShapeError(f"concat: {exc}") from None


def _fwd_slice(vals, attrs):
    return np.array(vals[0][attrs["index"]], dtype=np.float64)


def _fwd_sum(vals, attrs):
    return np.asarray(vals[0].sum(axis=attrs.get("axis")), dtype=np.float64)


def _fwd_mean(vals, attrs):
    return np.asarray(vals[0].mean(axis=attrs.get("axis")), dtype=np.float64)


_FORWARD = {
    "affine": _fwd_affine,
    "matmul": _fwd_matmul,
    "add": _fwd_add,
    "mul": _fwd_mul,
    "concat": _fwd_concat,
    "slice": _fwd_slice,
    "relu": lambda v, a: np.maximum(v[0], 0.0),
    "sigmoid": lambda v, a: sigmoid(v[0]),
    "exp": lambda v, a: np.exp(v[0]),
    "log": lambda v, a: np.log(v[0]),
    "softplus": lambda v, a: softplus(v[0]),
    "square": lambda v, a: v[0] * v[0],
    "sum": _fwd_sum,
    "mean": _fwd_mean,
    "stop_gradient": lambda v, a: v[0].copy(),
}


# --- backward rules: (upstream grad, input values, output value, attrs) -> input grads

def _bwd_affine(g, vals, out, attrs):
    x, w, b = vals
    gx = g @ w.T
    if x.ndim == 1:
        gw = np.outer(x, g)
        gb = g
    else:
        x2 = x.reshape(-1, x.shape[-1])
        g2 = g.reshape(-1, g.shape[-1])
        gw = x2.T @ g2
        gb = g2.sum(axis=0)
    return [gx, gw, gb]


def _bwd_matmul(g, vals, out, attrs):
    a, b = vals
    if a.ndim == 1 and b.ndim == 1:
        return [g * b, g * a]
    if a.ndim == 1:
        return [b @ g, np.outer(a, g)]
    if b.ndim == 1:
        return [np.outer(g, b), a.T @ g]
    return [g @ b.T, a.T @ g]


def _bwd_concat(g, vals, out, attrs):
    axis = attrs["axis"]
    splits = np.cumsum([v.shape[axis] for v in vals])[:-1]
    return np.split(g, splits, axis=axis)


def _bwd_slice(g, vals, out, attrs):
    full = np.zeros_like(vals[0])
    np.add.at(full, attrs["index"], g)
    return [full]


def _expand_reduced(g, shape, axis):
    if axis is None:
        return np.broadcast_to(g, shape)
    return np.broadcast_to(np.expand_dims(g, axis), shape)


def _bwd_sum(g, vals, out, attrs):
    return [np.array(_expand_reduced(g, vals[0].shape, attrs.get("axis")))]


def _bwd_mean(g, vals, out, attrs):
    x = vals[0]
    axis = attrs.get("axis")
    n = x.size if axis is None else x.shape[axis]
    return [np.array(_expand_reduced(g, x.shape, axis)) / n]


_BACKWARD = {
    "affine": _bwd_affine,
    "matmul": _bwd_matmul,
    "add": lambda g, v, o, a: [_unbroadcast(g, v[0].shape), _unbroadcast(g, v[1].shape)],
    "mul": lambda g, v, o, a: [_unbroadcast(g * v[1], v[0].shape),
                               _unbroadcast(g * v[0], v[1].shape)],
    "concat": _bwd_concat,
    "slice": _bwd_slice,
    "relu": lambda g, v, o, a: [g * (v[0] > 0)],
    "sigmoid": lambda g, v, o, a: [g * o * (1.0 - o)],
    "exp": lambda g, v, o, a: [g * o],
    "log": lambda g, v, o, a: [g / v[0]],
    "softplus": lambda g, v, o, a: [g * sigmoid(v[0])],
    "square": lambda g, v, o, a: [2.0 * g * v[0]],
    "sum": _bwd_sum,
    "mean": _bwd_mean,
    "stop_gradient": lambda g, v, o, a: [None],
}


class Tape:
    """Append-only record of a single forward evaluation.

    Build a fresh tape for every training step; nothing is retained across
    steps unless the caller keeps the tape alive on purpose.
    """

    def __init__(self):
        self._values: list[np.ndarray] = []
        self._nodes: list[tuple[str, tuple[int, ...], dict]] = []
        self._leaves: list[int] = []

    def __len__(self):
        return len(self._nodes)

    @property
    def leaves(self):
        return tuple(self._leaves)

    def value(self, node: int) -> np.ndarray:
        return self._values[node]

    def _append(self, op, inputs, attrs, value):
        self._nodes.append((op, tuple(inputs), attrs))
        self._values.append(value)
        return len(self._nodes) - 1

    def leaf(self, value) -> int:
        """Register a trainable array; NaN/Inf are rejected."""
        value = np.array(value, dtype=np.float64)
        if not np.all(np.isfinite(value)):
            raise DomainError("leaf tensors must be finite")
        node = self._append("leaf", (), {}, value)
        self._leaves.append(node)
        return node

    def constant(self, value) -> int:
        """Register a non-differentiable input."""
        return self._append("const", (), {}, np.array(value, dtype=np.float64))

    def record(self, op: str, inputs, **attrs) -> int:
        if op not in PRIMITIVES:
            raise ContractError(f"unknown primitive {op!r}")
        inputs = tuple(int(i) for i in inputs)
        n = len(self._nodes)
        if any(i < 0 or i >= n for i in inputs):
            raise ContractError(f"{op}: input ids must precede node {n}")
        value = _FORWARD[op]([self._values[i] for i in inputs], attrs)
        return self._append(op, inputs, attrs, value)

    # Thin wrappers so model code reads as algebra.
    def affine(self, x, w, b):
        return self.record("affine", (x, w, b))

    def matmul(self, a, b):
        return self.record("matmul", (a, b))

    def add(self, a, b):
        return self.record("add", (a, b))

    def mul(self, a, b):
        return self.record("mul", (a, b))

    def concat(self, nodes, axis=-1):
        return self.record("concat", nodes, axis=axis)

    def slice(self, x, index):
        return self.record("slice", (x,), index=index)

    def relu(self, x):
        return self.record("relu", (x,))

    def sigmoid(self, x):
        return self.record("sigmoid", (x,))

    def exp(self, x):
        return self.record("exp", (x,))

    def log(self, x):
        return self.record("log", (x,))

    def softplus(self, x):
        return self.record("softplus", (x,))

    def square(self, x):
        return self.record("square", (x,))

    def sum(self, x, axis=None):
        return self.record("sum", (x,), axis=axis)

    def mean(self, x, axis=None):
        return self.record("mean", (x,), axis=axis)

    def stop_gradient(self, x):
        return self.record("stop_gradient", (x,))

    # Composites built only from primitives.
    def scale(self, x, c: float):
        return self.mul(x, self.constant(c))

    def sub(self, a, b):
        return self.add(a, self.scale(b, -1.0))


def gradient(tape: Tape, output: int) -> dict[int, np.ndarray]:
    """Return d(output)/d(leaf) for every leaf on ``tape``."""
    out_val = tape.value(output)
    if out_val.size != 1:
        raise ContractError(f"gradient needs a scalar output, got shape {out_val.shape}")
    grads: dict[int, np.ndarray] = {output: np.ones_like(out_val)}
    for node in range(output, -1, -1):
        op, inputs, attrs = tape._nodes[node]
        if op in ("leaf", "const"):
            continue
        g = grads.pop(node, None)
        if g is None:
            continue
        vals = [tape._values[i] for i in inputs]
        for i, gi in zip(inputs, _BACKWARD[op](g, vals, tape._values[node], attrs)):
            if gi is None:
                continue
            if i in grads:
                grads[i] = grads[i] + gi
            else:
                grads[i] = gi
    return {leaf: np.asarray(grads.get(leaf, np.zeros_like(tape.value(leaf))), dtype=np.float64)
            for leaf in tape._leaves}


def reparam_sample(tape: Tape, mu: int, sigma: int, eps) -> int:
    """Pathwise sample ``mu + sigma * eps``; ``eps`` enters as a constant."""
    eps = np.asarray(eps, dtype=np.float64)
    mu_v, sigma_v = tape.value(mu), tape.value(sigma)
    if mu_v.shape != sigma_v.shape or mu_v.shape != eps.shape:
        raise ShapeError(f"reparam_sample: mu{mu_v.shape}, sigma{sigma_v.shape}, eps{eps.shape}")
    if np.any(sigma_v <= 0):
        raise DomainError("reparam_sample: sigma must be positive")
    return tape.add(mu, tape.mul(sigma, tape.constant(eps)))


@dataclass
class AdamState:
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)
    step: int = 0

    @classmethod
    def for_params(cls, params):
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params], 0)


def adam_step(params, grads, state: AdamState, lr=1e-3, betas=(0.9, 0.999), eps=1e-8):
    """One bias-corrected Adam update. Returns ``(new_params, new_state)``."""
    b1, b2 = betas
    if not (0.0 <= b1 < 1.0 and 0.0 <= b2 < 1.0):
        raise DomainError("Adam betas must lie in [0, 1)")
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ShapeError("adam_step: params, grads and state must align")
    step = state.step + 1
    new_params, new_m, new_v = [], [], []
    c1 = 1.0 - b1 ** step
    c2 = 1.0 - b2 ** step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape or p.shape != m.shape:
            raise ShapeError(f"adam_step: param {p.shape} vs grad {g.shape}")
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        new_params.append(p - lr * (m / c1) / (np.sqrt(v / c2) + eps))
        new_m.append(m)
        new_v.append(v)
    return new_params, AdamState(new_m, new_v, step)
