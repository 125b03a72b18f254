"""Dense float64 arrays with a reverse-mode tape.

Every differentiable op builds its output through :func:`_record`, which keeps
the parents and a closure mapping the output gradient to parent gradients.
:func:`backward` walks the recorded graph once in reverse topological order.

Broadcasting is deliberately narrow: binary elementwise ops accept equal shapes
or a scalar on either side. Anything wider goes through :func:`broadcast_to`.
"""

from __future__ import annotations

import contextlib
import threading
from typing import Callable, Iterable, Sequence

import numpy as np

from . import kernels

__all__ = [
    "Tensor",
    "ShapeError",
    "DomainError",
    "ContractError",
    "no_grad",
    "grad_enabled",
    "tensor",
    "constant",
    "add",
    "sub",
    "mul",
    "neg",
    "tanh",
    "sigmoid",
    "exp",
    "log",
    "elementwise",
    "matmul",
    "affine",
    "log_softmax",
    "sum",
    "reshape",
    "broadcast_to",
    "take",
    "concat",
    "stack",
    "cumsum",
    "logcumsumexp",
    "stop_gradient",
    "backward",
]


class ShapeError(ValueError):
    """Operand shapes are incompatible."""


class DomainError(ValueError):
    """Input lies outside the domain of the function."""


class ContractError(ValueError):
    """Caller violated a documented precondition."""


_state = threading.local()


def grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextlib.contextmanager
def no_grad():
    """Disable recording on the current thread."""
    prev = grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


class Tensor:
    __slots__ = ("data", "requires_grad", "_parents", "_grad_fn", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data, dtype=np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._grad_fn: Callable | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self._grad_fn is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"expected a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor({self.data!r}{flag})"

    def __len__(self) -> int:
        return len(self.data)

    __add__ = lambda self, other: add(self, other)  # noqa: E731
    __radd__ = lambda self, other: add(other, self)  # noqa: E731
    __sub__ = lambda self, other: sub(self, other)  # noqa: E731
    __rsub__ = lambda self, other: sub(other, self)  # noqa: E731
    __mul__ = lambda self, other: mul(self, other)  # noqa: E731
    __rmul__ = lambda self, other: mul(other, self)  # noqa: E731
    __neg__ = lambda self: neg(self)  # noqa: E731
    __matmul__ = lambda self, other: matmul(self, other)  # noqa: E731

    def __getitem__(self, index) -> Tensor:
        return take(self, index)

    def reshape(self, *shape) -> Tensor:
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis=None) -> Tensor:
        return sum(self, axis)


def tensor(data, requires_grad: bool = False, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, name=name)


def constant(data) -> Tensor:
    return data if isinstance(data, Tensor) else Tensor(data)


def _record(out: np.ndarray, parents: Sequence[Tensor], grad_fn: Callable) -> Tensor:
    result = Tensor(out)
    if grad_enabled() and any(p.requires_grad for p in parents):
        result.requires_grad = True
        result._parents = tuple(parents)
        result._grad_fn = grad_fn
    return result


# --- elementwise -----------------------------------------------------------


def _binary_shapes(a: Tensor, b: Tensor, opname: str) -> None:
    if a.shape == b.shape or a.size == 1 and a.data.ndim <= b.data.ndim or (
        b.size == 1 and b.data.ndim <= a.data.ndim
    ):
        return
    raise ShapeError(f"{opname}: cannot broadcast shapes {a.shape} and {b.shape}")


def _reduce_to(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    return np.asarray(g.sum()).reshape(shape)


def add(a, b) -> Tensor:
    a, b = constant(a), constant(b)
    _binary_shapes(a, b, "add")
    out = a.data + b.data

    def grad_fn(g):
        return _reduce_to(g, a.shape), _reduce_to(g, b.shape)

    return _record(out, (a, b), grad_fn)


def sub(a, b) -> Tensor:
    a, b = constant(a), constant(b)
    _binary_shapes(a, b, "sub")
    out = a.data - b.data

    def grad_fn(g):
        return _reduce_to(g, a.shape), _reduce_to(-g, b.shape)

    return _record(out, (a, b), grad_fn)


def mul(a, b) -> Tensor:
    a, b = constant(a), constant(b)
    _binary_shapes(a, b, "mul")
    out = a.data * b.data

    def grad_fn(g):
        return _reduce_to(g * b.data, a.shape), _reduce_to(g * a.data, b.shape)

    return _record(out, (a, b), grad_fn)


def neg(a) -> Tensor:
    a = constant(a)
    return _record(-a.data, (a,), lambda g: (-g,))


def tanh(a) -> Tensor:
    a = constant(a)
    out = np.tanh(a.data)
    return _record(out, (a,), lambda g: (g * (1.0 - out * out),))


def sigmoid(a) -> Tensor:
    a = constant(a)
    # split by sign so exp never overflows
    x = a.data
    ex = np.exp(-np.abs(x))
    out = np.where(x >= 0, 1.0 / (1.0 + ex), ex / (1.0 + ex))
    return _record(out, (a,), lambda g: (g * out * (1.0 - out),))


def exp(a) -> Tensor:
    a = constant(a)
    out = np.exp(a.data)
    return _record(out, (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    a = constant(a)
    if np.any(a.data <= 0):
        raise DomainError("log of non-positive value")
    out = np.log(a.data)
    return _record(out, (a,), lambda g: (g / a.data,))


_ELEMENTWISE = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "neg": neg,
    "tanh": tanh,
    "sigmoid": sigmoid,
    "exp": exp,
    "log": log,
}


def elementwise(op: str, *args) -> Tensor:
    """Dispatch by name, e.g. ``elementwise("tanh", x)``."""
    try:
        fn = _ELEMENTWISE[op]
    except KeyError:
        raise ContractError(f"unknown elementwise op {op!r}") from None
    return fn(*args)


# --- linear algebra --------------------------------------------------------


def _product(a: np.ndarray, b: np.ndarray, rowwise: bool) -> np.ndarray:
    if rowwise:
        # one product per row: bit-identical to evaluating that row alone
        return np.matmul(a[:, None, :], b)[:, 0, :]
    return a @ b


def matmul(a, b, rowwise: bool = False) -> Tensor:
    """2-D matrix product.

    With ``rowwise=True`` every output row is computed as its own vector-matrix
    product, so a row never depends on how many other rows are in the batch.
    """
    a, b = constant(a), constant(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: dimension mismatch between {a.shape} and {b.shape}")
    out = _product(a.data, b.data, rowwise)

    def grad_fn(g):
        ga = g @ b.data.T if a.requires_grad else None
        gb = a.data.T @ g if b.requires_grad else None
        return ga, gb

    return _record(out, (a, b), grad_fn)


def affine(x, w, b, rowwise: bool = False) -> Tensor:
    """``x @ w + b`` with the bias row added to every row of the product."""
    x, w, b = constant(x), constant(w), constant(b)
    if x.data.ndim != 2 or w.data.ndim != 2 or x.shape[1] != w.shape[0]:
        raise ShapeError(f"affine: dimension mismatch between {x.shape} and {w.shape}")
    if b.shape != (w.shape[1],):
        raise ShapeError(f"affine: bias shape {b.shape} does not match {w.shape}")
    out = _product(x.data, w.data, rowwise) + b.data

    def grad_fn(g):
        gx = g @ w.data.T if x.requires_grad else None
        gw = x.data.T @ g if w.requires_grad else None
        gb = g.sum(axis=0) if b.requires_grad else None
        return gx, gw, gb

    return _record(out, (x, w, b), grad_fn)


def log_softmax(x, axis: int = -1) -> Tensor:
    x = constant(x)
    if x.data.ndim == 0 or x.shape[axis] < 1:
        raise ShapeError(f"log_softmax: empty axis in shape {x.shape}")
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))

    def grad_fn(g):
        soft = np.exp(out)
        return (g - soft * g.sum(axis=axis, keepdims=True),)

    return _record(out, (x,), grad_fn)


# --- structure -------------------------------------------------------------


def sum(x, axis=None) -> Tensor:  # noqa: A001
    x = constant(x)
    out = np.asarray(x.data.sum(axis=axis))

    def grad_fn(g):
        if axis is None:
            return (np.broadcast_to(g, x.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), x.shape).copy(),)

    return _record(out, (x,), grad_fn)


def reshape(x, shape) -> Tensor:
    x = constant(x)
    out = x.data.reshape(shape)
    return _record(out, (x,), lambda g: (g.reshape(x.shape),))


def broadcast_to(x, shape) -> Tensor:
    """Expand size-1 axes (and prepend axes) to ``shape``."""
    x = constant(x)
    shape = tuple(shape)
    try:
        out = np.broadcast_to(x.data, shape)
    except ValueError:
        raise ShapeError(f"broadcast_to: cannot expand {x.shape} to {shape}") from None
    lead = len(shape) - x.data.ndim
    axes = tuple(range(lead)) + tuple(
        lead + i for i, n in enumerate(x.shape) if n == 1 and shape[lead + i] != 1
    )

    def grad_fn(g):
        return (g.sum(axis=axes, keepdims=True).reshape(x.shape) if axes else g,)

    return _record(out, (x,), grad_fn)


def take(x, index) -> Tensor:
    """NumPy indexing (basic or fancy); gradients scatter-add back."""
    x = constant(x)
    out = np.asarray(x.data[index])

    def grad_fn(g):
        gx = np.zeros(x.shape)
        np.add.at(gx, index, g)
        return (gx,)

    return _record(out, (x,), grad_fn)


def concat(tensors: Iterable, axis: int = 0) -> Tensor:
    ts = [constant(t) for t in tensors]
    out = np.concatenate([t.data for t in ts], axis=axis)
    bounds = np.cumsum([t.shape[axis] for t in ts])[:-1]

    def grad_fn(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _record(out, ts, grad_fn)


def stack(tensors: Iterable, axis: int = 0) -> Tensor:
    ts = [constant(t) for t in tensors]
    out = np.stack([t.data for t in ts], axis=axis)

    def grad_fn(g):
        return tuple(np.moveaxis(g, axis, 0))

    return _record(out, ts, grad_fn)


def cumsum(x, axis: int = -1) -> Tensor:
    x = constant(x)
    out = np.cumsum(x.data, axis=axis)

    def grad_fn(g):
        return (np.flip(np.cumsum(np.flip(g, axis), axis=axis), axis),)

    return _record(out, (x,), grad_fn)


def logcumsumexp(x) -> Tensor:
    """Running log-sum-exp along the last axis."""
    x = constant(x)
    out = np.logaddexp.accumulate(x.data, axis=-1)

    def grad_fn(g):
        flat = (-1, x.shape[-1])
        gx = kernels.logcumsumexp_backward(
            np.ascontiguousarray(x.data.reshape(flat)),
            np.ascontiguousarray(out.reshape(flat)),
            np.ascontiguousarray(g.reshape(flat)),
        )
        return (gx.reshape(x.shape),)

    return _record(out, (x,), grad_fn)


def stop_gradient(x) -> Tensor:
    """Same values, cut from the tape."""
    x = constant(x)
    return Tensor(x.data)


# --- reverse sweep ---------------------------------------------------------


def _topological(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack_: list[tuple[Tensor, bool]] = [(root, False)]
    while stack_:
        node, expanded = stack_.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack_.append((node, True))
        for p in reversed(node._parents):
            if p.requires_grad and id(p) not in seen:
                stack_.append((p, False))
    return order


def backward(output: Tensor, wrt: dict[str, Tensor] | None = None):
    """Gradients of a scalar ``output``.

    Without ``wrt`` returns ``{leaf: grad}`` for every reachable leaf that
    requires grad. With a name->tensor map returns ``{name: grad}``, zeros for
    tensors the output does not depend on.
    """
    if output.size != 1:
        raise ContractError(f"backward needs a scalar output, got shape {output.shape}")
    grads: dict[int, np.ndarray] = {}
    leaves: dict[int, Tensor] = {}
    if output.requires_grad:
        grads[id(output)] = np.ones(output.shape)
        for node in reversed(_topological(output)):
            g = grads.pop(id(node), None) if not node.is_leaf else grads.get(id(node))
            if node.is_leaf:
                leaves[id(node)] = node
                continue
            if g is None:
                continue
            for parent, pg in zip(node._parents, node._grad_fn(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = np.array(pg, dtype=np.float64, copy=True)
    if wrt is None:
        return {leaves[k]: grads[k] for k in leaves}
    return {
        name: grads.get(id(t), np.zeros(t.shape)).reshape(t.shape) for name, t in wrt.items()
    }
