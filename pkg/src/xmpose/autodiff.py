"""Minimal reverse-mode automatic differentiation over dense float64 tensors.

Graphs are built define-by-run: every operation returns a new :class:`Tensor`
holding its parents and a closure mapping the output adjoint to the parent
adjoints. There is no broadcasting; the only mixed-shape operation is
``scale`` by a Python constant.
"""

from __future__ import annotations

from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .errors import ContractError, DimensionError, NonFiniteError

Gradients = dict  # Tensor -> np.ndarray with the tensor's shape


class Tensor:
    """A dense float64 array with an optional node in a computation graph.

    Leaves have ``parents == ()`` and ``op == "leaf"``. Hashing and equality are
    by identity, so tensors can key the gradient map returned by :func:`backward`.
    """

    __slots__ = ("data", "parents", "op", "grad_fn", "name", "__weakref__")

    def __init__(self, data, parents: tuple = (), op: str = "leaf",
                 grad_fn: Callable | None = None, name: str | None = None):
        self.data = np.ascontiguousarray(data, dtype=np.float64)
        self.parents = parents
        self.op = op
        self.grad_fn = grad_fn
        self.name = name

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self):
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, op={self.op}{label})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self):
        return transpose(self)

    def sum(self):
        return reduce_sum(self)

    def mean(self):
        return reduce_mean(self)

    def relu(self):
        return relu(self)

    def tanh(self):
        return tanh(self)

    def exp(self):
        return exp(self)

    def square(self):
        return square(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _same_shape(a: Tensor, b: Tensor, opname: str):
    if a.shape != b.shape:
        raise DimensionError(f"{opname}: shape mismatch {a.shape} vs {b.shape}")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    ad, bd = a.data, b.data

    def grad_fn(g, needs=(True, True)):
        return (g @ bd.T if needs[0] else None), (ad.T @ g if needs[1] else None)

    return Tensor(ad @ bd, (a, b), "matmul", grad_fn)


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _same_shape(a, b, "add")
    return Tensor(a.data + b.data, (a, b), "add", lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _same_shape(a, b, "sub")
    return Tensor(a.data - b.data, (a, b), "sub", lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _same_shape(a, b, "mul")
    ad, bd = a.data, b.data
    return Tensor(ad * bd, (a, b), "mul",
                  lambda g, needs=(True, True): (g * bd if needs[0] else None,
                                                 g * ad if needs[1] else None))


def scale(a: Tensor, c: float) -> Tensor:
    a = as_tensor(a)
    c = float(c)
    return Tensor(a.data * c, (a,), "scale", lambda g: (g * c,))


def relu(a: Tensor) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0.0
    return Tensor(np.where(mask, a.data, 0.0), (a,), "relu", lambda g: (g * mask,))


def tanh(a: Tensor) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return Tensor(out, (a,), "tanh", lambda g: (g * (1.0 - out * out),))


def exp(a: Tensor) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return Tensor(out, (a,), "exp", lambda g: (g * out,))


def square(a: Tensor) -> Tensor:
    a = as_tensor(a)
    ad = a.data
    return Tensor(ad * ad, (a,), "square", lambda g: (2.0 * ad * g,))


def transpose(a: Tensor) -> Tensor:
    a = as_tensor(a)
    if a.data.ndim != 2:
        raise DimensionError(f"transpose expects a matrix, got shape {a.shape}")
    return Tensor(a.data.T, (a,), "transpose", lambda g: (g.T,))


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    a = as_tensor(a)
    old = a.shape
    out = a.data.reshape(shape)
    return Tensor(out, (a,), "reshape", lambda g: (g.reshape(old),))


def reduce_sum(a: Tensor) -> Tensor:
    a = as_tensor(a)
    if a.size == 0:
        raise ContractError("sum of an empty tensor")
    shape = a.shape
    return Tensor(np.array([a.data.sum()]), (a,), "sum",
                  lambda g: (np.full(shape, g[0]),))


def reduce_mean(a: Tensor) -> Tensor:
    a = as_tensor(a)
    if a.size == 0:
        raise ContractError("mean of an empty tensor")
    shape, n = a.shape, a.size
    return Tensor(np.array([a.data.sum() / n]), (a,), "mean",
                  lambda g: (np.full(shape, g[0] / n),))


ELEMENTWISE = {
    "add": add, "sub": sub, "mul": mul, "relu": relu, "tanh": tanh,
    "exp": exp, "square": square, "scale": scale,
}


def elementwise(op: str, a: Tensor, b=None) -> Tensor:
    """Dispatch by name; ``b`` is the second operand or, for ``scale``, the constant."""
    try:
        fn = ELEMENTWISE[op]
    except KeyError:
        raise ContractError(f"unknown elementwise op {op!r}") from None
    if op in ("add", "sub", "mul", "scale"):
        if b is None:
            raise ContractError(f"{op} needs a second operand")
        return fn(a, b)
    return fn(a)


def reduce(op: str, a: Tensor) -> Tensor:
    if op == "sum":
        return reduce_sum(a)
    if op == "mean":
        return reduce_mean(a)
    raise ContractError(f"unknown reduction {op!r}")


def topological_order(root: Tensor) -> list[Tensor]:
    """Nodes reachable from ``root``, parents before children."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
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


def backward(loss: Tensor, params: Iterable[Tensor]) -> Gradients:
    """Gradients of a scalar ``loss`` for every tensor in ``params``.

    Parameters the loss does not depend on get zero gradients.
    """
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not np.isfinite(loss.data).all():
        raise NonFiniteError(f"loss is not finite: {loss.data.reshape(-1)[0]}")
    params = list(params)
    order = topological_order(loss)
    # only nodes on a path from a requested parameter need adjoints
    live = {id(p) for p in params}
    for node in order:
        if node.parents and any(id(p) in live for p in node.parents):
            live.add(id(node))
    adj: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = adj.pop(id(node), None) if node.parents else adj.get(id(node))
        if g is None or node.grad_fn is None:
            continue
        needs = tuple(id(p) in live for p in node.parents)
        if not any(needs):
            continue
        if node.op in ("matmul", "mul"):
            pgrads = node.grad_fn(g, needs)
        else:
            pgrads = node.grad_fn(g)
        for parent, pg, need in zip(node.parents, pgrads, needs):
            if not need:
                continue
            key = id(parent)
            if key in adj:
                adj[key] = adj[key] + pg
            else:
                adj[key] = pg
    grads: Gradients = {}
    for p in params:
        g = adj.get(id(p))
        if g is None:
            g = np.zeros_like(p.data)
        if not np.isfinite(g).all():
            raise NonFiniteError(f"non-finite gradient for parameter {p.name or p!r}")
        grads[p] = g
    return grads


def finite_difference_grad(f: Callable[[], float], params: Iterable[Tensor],
                           eps: float = 1e-5,
                           coords: Mapping[Tensor, Sequence[int]] | None = None) -> Gradients:
    """Central differences of ``f`` (which reads the params' data) per coordinate.

    ``coords`` optionally restricts each parameter to a list of flat indices;
    unchecked coordinates are left as NaN so they cannot be mistaken for zeros.
    """
    if eps <= 0:
        raise ContractError("eps must be positive")
    grads: Gradients = {}
    for p in params:
        flat = p.data.reshape(-1)
        idx = range(flat.size) if coords is None or p not in coords else coords[p]
        out = np.full(flat.size, np.nan) if coords is not None and p in coords \
            else np.zeros(flat.size)
        for i in idx:
            orig = flat[i]
            flat[i] = orig + eps
            fp = float(f())
            flat[i] = orig - eps
            fm = float(f())
            flat[i] = orig
            out[i] = (fp - fm) / (2.0 * eps)
        grads[p] = out.reshape(p.shape)
    return grads


def relu_pattern(root: Tensor) -> bytes:
    """Sign pattern of every relu input in the graph; used to detect kink crossings."""
    parts = [(n.parents[0].data > 0).tobytes() for n in topological_order(root)
             if n.op == "relu"]
    return b"".join(parts)
