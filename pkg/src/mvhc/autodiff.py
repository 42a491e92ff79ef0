"""Dense reverse-mode automatic differentiation on float64 numpy arrays.

Graphs are built eagerly (define-by-run): every operation on a :class:`Var`
returns a new :class:`Var` remembering its parents and a closure that maps
the output gradient to parent gradients.  :class:`CompGraph` wraps a loss
function together with its named parameter slots and exposes
``evaluate`` / ``backward`` / ``finite_diff_check``.
"""

from __future__ import annotations

from typing import Callable, Mapping

import numpy as np

__all__ = [
    "ShapeError",
    "Var",
    "CompGraph",
    "as_var",
    "evaluate",
    "backward",
    "finite_diff_check",
    "glorot_uniform",
    "exp",
    "log",
    "tanh",
    "relu",
    "sqrt",
    "atanh",
    "where",
    "concat",
    "logsumexp",
    "value_and_grad",
]


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible for an operation."""


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    if grad.shape == shape:
        return grad
    ndim_extra = grad.ndim - len(shape)
    if ndim_extra > 0:
        grad = grad.sum(axis=tuple(range(ndim_extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _broadcast_shape(op: str, a: np.ndarray, b: np.ndarray) -> tuple:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(
            f"node '{op}': cannot broadcast shapes {a.shape} and {b.shape}"
        ) from None


class Var:
    """A node in the computation graph holding a float64 array value."""

    __slots__ = ("value", "parents", "grad_fn", "op", "name")
    __array_priority__ = 100.0

    def __init__(self, value, parents=(), grad_fn=None, op="const", name=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.parents = parents
        self.grad_fn = grad_fn
        self.op = op
        self.name = name

    def __repr__(self):
        label = self.name or self.op
        return f"Var({label}, shape={self.value.shape})"

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    # arithmetic -----------------------------------------------------------
    def __add__(self, other):
        other = as_var(other)
        _broadcast_shape("add", self.value, other.value)
        a, b = self, other
        return Var(
            a.value + b.value,
            (a, b),
            lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
            "add",
        )

    __radd__ = __add__

    def __sub__(self, other):
        other = as_var(other)
        _broadcast_shape("sub", self.value, other.value)
        a, b = self, other
        return Var(
            a.value - b.value,
            (a, b),
            lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
            "sub",
        )

    def __rsub__(self, other):
        return as_var(other) - self

    def __mul__(self, other):
        other = as_var(other)
        _broadcast_shape("mul", self.value, other.value)
        a, b = self, other
        return Var(
            a.value * b.value,
            (a, b),
            lambda g: (
                _unbroadcast(g * b.value, a.shape),
                _unbroadcast(g * a.value, b.shape),
            ),
            "mul",
        )

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = as_var(other)
        _broadcast_shape("div", self.value, other.value)
        a, b = self, other
        out = a.value / b.value
        return Var(
            out,
            (a, b),
            lambda g: (
                _unbroadcast(g / b.value, a.shape),
                _unbroadcast(-g * out / b.value, b.shape),
            ),
            "div",
        )

    def __rtruediv__(self, other):
        return as_var(other) / self

    def __neg__(self):
        return Var(-self.value, (self,), lambda g: (-g,), "neg")

    def __pow__(self, p):
        if isinstance(p, Var):
            raise TypeError("only constant exponents are supported")
        p = float(p)
        x = self
        return Var(
            x.value**p, (x,), lambda g: (g * p * x.value ** (p - 1.0),), "pow"
        )

    def __matmul__(self, other):
        other = as_var(other)
        a, b = self, other
        if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
            raise ShapeError(f"node 'matmul': {a.shape} @ {b.shape}")
        return Var(
            a.value @ b.value,
            (a, b),
            lambda g: (g @ b.value.T, a.value.T @ g),
            "matmul",
        )

    def __rmatmul__(self, other):
        return as_var(other) @ self

    def __getitem__(self, index):
        x = self

        def grad_fn(g):
            out = np.zeros_like(x.value)
            np.add.at(out, index, g)
            return (out,)

        return Var(x.value[index], (x,), grad_fn, "index")

    @property
    def T(self):
        return Var(self.value.T, (self,), lambda g: (g.T,), "transpose")

    def sum(self, axis=None, keepdims=False):
        x = self

        def grad_fn(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, x.shape).copy(),)

        return Var(x.value.sum(axis=axis, keepdims=keepdims), (x,), grad_fn, "sum")

    def mean(self, axis=None, keepdims=False):
        count = self.value.size if axis is None else self.value.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)

    def reshape(self, *shape):
        x = self
        return Var(
            x.value.reshape(*shape), (x,), lambda g: (g.reshape(x.shape),), "reshape"
        )


def as_var(x) -> Var:
    return x if isinstance(x, Var) else Var(x)


def _unary(op, fn, dfn):
    def apply(x):
        x = as_var(x)
        out = fn(x.value)
        return Var(out, (x,), lambda g: (g * dfn(x.value, out),), op)

    apply.__name__ = op
    return apply


exp = _unary("exp", np.exp, lambda x, y: y)
log = _unary("log", np.log, lambda x, y: 1.0 / x)
tanh = _unary("tanh", np.tanh, lambda x, y: 1.0 - y * y)
# subgradient 0 at the kink
relu = _unary("relu", lambda x: np.maximum(x, 0.0), lambda x, y: (x > 0.0).astype(float))
sqrt = _unary("sqrt", np.sqrt, lambda x, y: 0.5 / y)
atanh = _unary("atanh", np.arctanh, lambda x, y: 1.0 / (1.0 - x * x))


def where(mask, a, b) -> Var:
    """Select ``a`` where ``mask`` holds, else ``b``; mask is a constant."""
    mask = np.asarray(mask, dtype=bool)
    a, b = as_var(a), as_var(b)
    return Var(
        np.where(mask, a.value, b.value),
        (a, b),
        lambda g: (
            _unbroadcast(np.where(mask, g, 0.0), a.shape),
            _unbroadcast(np.where(mask, 0.0, g), b.shape),
        ),
        "where",
    )


def concat(xs, axis=0) -> Var:
    xs = [as_var(x) for x in xs]
    try:
        out = np.concatenate([x.value for x in xs], axis=axis)
    except ValueError as exc:
        shapes = [x.shape for x in xs]
        raise ShapeError(f"node 'concat': incompatible shapes {shapes}") from exc
    bounds = np.cumsum([x.shape[axis] for x in xs])[:-1]

    def grad_fn(g):
        return tuple(np.split(g, bounds, axis=axis))

    return Var(out, tuple(xs), grad_fn, "concat")


def logsumexp(x, axis=-1, mask=None) -> Var:
    """Max-shifted log-sum-exp along ``axis``; entries where ``mask`` is False
    are excluded from the sum."""
    x = as_var(x)
    v = x.value
    if mask is not None:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), v.shape)
        v = np.where(mask, v, -np.inf)
    m = np.max(v, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    e = np.exp(v - m)
    s = e.sum(axis=axis, keepdims=True)
    out = (np.log(s) + m).squeeze(axis)
    soft = e / s

    def grad_fn(g):
        return (np.expand_dims(g, axis) * soft,)

    return Var(out, (x,), grad_fn, "logsumexp")


# graph traversal --------------------------------------------------------


def _toposort(root: Var) -> list[Var]:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def grad(output: Var, wrt: Mapping[str, Var], seed: float = 1.0) -> dict[str, np.ndarray]:
    """Gradients of a scalar ``output`` w.r.t. each Var in ``wrt``."""
    if output.value.size != 1:
        raise ValueError(
            f"gradients are only defined for scalar outputs, got shape {output.shape}"
        )
    grads = {id(output): np.full(output.shape, seed, dtype=np.float64)}
    for node in reversed(_toposort(output)):
        g = grads.get(id(node))
        if g is None or node.grad_fn is None:
            continue
        for parent, pg in zip(node.parents, node.grad_fn(g)):
            if parent.grad_fn is None and parent.name is None:
                continue  # constant leaf
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
    return {
        name: grads.get(id(v), np.zeros_like(v.value)).reshape(v.shape)
        for name, v in wrt.items()
    }


LossFn = Callable[[dict, dict], Var]


class CompGraph:
    """A loss function bound to named parameter slots.

    ``fn(params, inputs)`` receives a dict of parameter Vars and a dict of
    input arrays and must return a Var.  ``input_shapes`` optionally declares
    the expected input names and shapes (``None`` entries are wildcards).
    """

    def __init__(self, fn: LossFn, params: Mapping[str, np.ndarray], input_shapes=None):
        self.fn = fn
        self.params = {k: np.asarray(v, dtype=np.float64) for k, v in params.items()}
        self.input_shapes = input_shapes

    def _check_inputs(self, inputs):
        inputs = dict(inputs or {})
        if self.input_shapes is None:
            return inputs
        missing = set(self.input_shapes) - set(inputs)
        extra = set(inputs) - set(self.input_shapes)
        if missing or extra:
            raise ShapeError(
                f"input names mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}"
            )
        for name, shape in self.input_shapes.items():
            got = np.shape(inputs[name])
            if len(got) != len(shape) or any(
                s is not None and s != g for s, g in zip(shape, got)
            ):
                raise ShapeError(f"input '{name}': expected shape {shape}, got {got}")
        return inputs

    def _forward(self, inputs, params=None):
        params = self.params if params is None else params
        pvars = {k: Var(v.copy(), op="param", name=k) for k, v in params.items()}
        out = self.fn(pvars, self._check_inputs(inputs))
        return as_var(out), pvars

    def evaluate(self, inputs=None, params=None):
        out, _ = self._forward(inputs, params)
        v = out.value
        return float(v) if v.size == 1 and v.ndim == 0 else v.copy()

    def backward(self, inputs=None, params=None, seed: float = 1.0) -> dict[str, np.ndarray]:
        out, pvars = self._forward(inputs, params)
        return grad(out, pvars, seed=seed)

    def value_and_grad(self, inputs=None, params=None):
        out, pvars = self._forward(inputs, params)
        return float(out.value), grad(out, pvars)


def evaluate(graph: CompGraph, inputs=None):
    return graph.evaluate(inputs)


def backward(graph: CompGraph, at=None) -> dict[str, np.ndarray]:
    return graph.backward(at)


def finite_diff_check(graph: CompGraph, at=None, step: float = 1e-5, grads=None) -> float:
    """Max over parameter entries of |analytic - central difference| / max(1, |central|).

    ``grads`` may be supplied to check a precomputed gradient set instead of
    the graph's own backward pass.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    analytic = graph.backward(at) if grads is None else grads
    worst = 0.0
    for name, value in graph.params.items():
        flat = value.reshape(-1)
        ga = np.asarray(analytic[name]).reshape(-1)
        for idx in range(flat.size):
            params = dict(graph.params)
            plus, minus = flat.copy(), flat.copy()
            plus[idx] += step
            minus[idx] -= step
            params[name] = plus.reshape(value.shape)
            f_plus = graph.evaluate(at, params)
            params[name] = minus.reshape(value.shape)
            f_minus = graph.evaluate(at, params)
            numeric = (f_plus - f_minus) / (2.0 * step)
            err = abs(ga[idx] - numeric) / max(1.0, abs(numeric))
            worst = max(worst, err)
    return worst


def value_and_grad(fn: LossFn, params: Mapping[str, np.ndarray], inputs=None):
    """One-shot helper used by the training loops."""
    pvars = {k: Var(v, op="param", name=k) for k, v in params.items()}
    out = as_var(fn(pvars, inputs or {}))
    return float(out.value), grad(out, pvars)


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))
