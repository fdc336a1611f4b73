"""Tape-based reverse-mode automatic differentiation over 2-D float64 arrays.

Values are plain numpy arrays of shape ``(rows, cols)``. A :class:`Tape`
records every operation applied to its :class:`Node` objects in creation
order, so node ids are already a topological order and ``backward`` is a
single reverse sweep.

The module-level functions (``cos``, ``sin``, ``tanh``, ``concat``, ...)
dispatch on their argument: given a :class:`Node` they record onto its tape,
given an array they fall through to numpy. Model code written against them
runs unchanged in a fast numpy-only forward pass and on a tape.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "ShapeError",
    "ContractError",
    "Tape",
    "Node",
    "GradientMap",
    "GradCheckReport",
    "record",
    "backward",
    "grad_check",
    "as_tensor",
    "value_of",
    "cos",
    "sin",
    "tanh",
    "absolute",
    "square",
    "total",
    "matmul",
    "concat",
]


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


class ContractError(ValueError):
    """A precondition of an autodiff routine was violated."""


def as_tensor(x) -> np.ndarray:
    """Coerce scalars, vectors and matrices to a 2-D float64 array."""
    a = np.asarray(x, dtype=np.float64)
    if a.ndim == 0:
        return a.reshape(1, 1)
    if a.ndim == 1:
        return a.reshape(1, -1)
    if a.ndim != 2:
        raise ShapeError(f"tensors are 2-D, got shape {a.shape}")
    return a


def value_of(x):
    return x.value if isinstance(x, Node) else x


# Vector-Jacobian product: maps the upstream gradient (shape of the node)
# to the contribution for one parent (shape of that parent).
Vjp = Callable[[np.ndarray], np.ndarray]


class Node:
    __slots__ = ("tape", "id", "op", "value", "parents")
    # make `ndarray <op> Node` defer to Node's reflected operators
    __array_ufunc__ = None

    def __init__(self, tape: "Tape", id: int, op: str, value: np.ndarray, parents):
        self.tape = tape
        self.id = id
        self.op = op
        self.value = value
        self.parents = parents

    @property
    def shape(self) -> tuple[int, int]:
        return self.value.shape

    def __repr__(self) -> str:
        return f"Node(id={self.id}, op={self.op!r}, shape={self.shape})"

    # operator sugar; constants (numbers/arrays) are lifted without gradient
    def __add__(self, other):
        return _add(self, other)

    def __radd__(self, other):
        return _add(other, self)

    def __sub__(self, other):
        return _sub(self, other)

    def __rsub__(self, other):
        return _sub(other, self)

    def __mul__(self, other):
        return _mul(self, other)

    def __rmul__(self, other):
        return _mul(other, self)

    def __neg__(self):
        return _mul(-1.0, self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, index):
        return _getitem(self, index)

    @property
    def T(self):
        return _transpose(self)


class Tape:
    """Append-only record of operations; one tape per loss evaluation."""

    def __init__(self):
        self.nodes: list[Node] = []

    def __len__(self) -> int:
        return len(self.nodes)

    def variable(self, value, op: str = "leaf") -> Node:
        return self._push(op, as_tensor(value).copy(), ())

    def _push(self, op: str, value: np.ndarray, parents) -> Node:
        node = Node(self, len(self.nodes), op, value, parents)
        self.nodes.append(node)
        return node


def record(op: str, inputs: Sequence[Node], value, vjps: Sequence[Vjp] | None = None) -> Node:
    """Append ``value`` to the tape shared by ``inputs``.

    ``vjps`` pairs each input with its vector-Jacobian product; when omitted
    the op is treated as a constant with respect to its inputs. Every input
    must already live on the same tape.
    """
    if not inputs:
        raise ContractError("record needs at least one input node")
    tape = inputs[0].tape
    for node in inputs:
        if node.tape is not tape:
            raise ContractError(f"node {node.id} belongs to a different tape")
    if vjps is None:
        vjps = [lambda g, shape=n.shape: np.zeros(shape) for n in inputs]
    if len(vjps) != len(inputs):
        raise ContractError("one vjp per input is required")
    return tape._push(op, as_tensor(value), tuple(zip(inputs, vjps)))


def _tape_of(*args) -> Tape:
    for a in args:
        if isinstance(a, Node):
            return a.tape
    raise ContractError("no node among operands")


def _broadcast_shape(op: str, a: np.ndarray, b: np.ndarray) -> tuple[int, int]:
    # equal shapes, scalar (1x1) operands, or a (1, c) row against (r, c)
    sa, sb = a.shape, b.shape
    if sa == sb:
        return sa
    if sa == (1, 1):
        return sb
    if sb == (1, 1):
        return sa
    if sa[1] == sb[1] and (sa[0] == 1 or sb[0] == 1):
        return (max(sa[0], sb[0]), sa[1])
    raise ShapeError(f"{op}: incompatible shapes {sa} and {sb}")


def _unbroadcast(g: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    if g.shape == shape:
        return g
    if shape == (1, 1):
        return g.sum().reshape(1, 1)
    return g.sum(axis=0, keepdims=True)


def _operand(x) -> np.ndarray:
    return x.value if isinstance(x, Node) else as_tensor(x)


def _binary(op, a, b, fwd, vjp_a, vjp_b) -> Node:
    tape = _tape_of(a, b)
    av = _operand(a)
    bv = _operand(b)
    same = av.shape == bv.shape
    if not same:
        _broadcast_shape(op, av, bv)
    out = fwd(av, bv)
    parents = []
    if isinstance(a, Node):
        if same:
            parents.append((a, lambda g: vjp_a(g, av, bv)))
        else:
            parents.append((a, lambda g: _unbroadcast(vjp_a(g, av, bv), av.shape)))
    if isinstance(b, Node):
        if same:
            parents.append((b, lambda g: vjp_b(g, av, bv)))
        else:
            parents.append((b, lambda g: _unbroadcast(vjp_b(g, av, bv), bv.shape)))
    return tape._push(op, out, tuple(parents))


def _add(a, b):
    return _binary("add", a, b, np.add, lambda g, x, y: g, lambda g, x, y: g)


def _sub(a, b):
    return _binary("sub", a, b, np.subtract, lambda g, x, y: g, lambda g, x, y: -g)


def _mul(a, b):
    if isinstance(a, float) and isinstance(b, Node):
        a, b = b, a
    if isinstance(b, float) and isinstance(a, Node):
        return a.tape._push("mul", a.value * b, ((a, lambda g: g * b),))
    return _binary("mul", a, b, np.multiply, lambda g, x, y: g * y, lambda g, x, y: g * x)


def matmul(a, b):
    if not isinstance(a, Node) and not isinstance(b, Node):
        return as_tensor(a) @ as_tensor(b)
    tape = _tape_of(a, b)
    av = as_tensor(value_of(a))
    bv = as_tensor(value_of(b))
    if av.shape[1] != bv.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {av.shape} and {bv.shape}")
    parents = []
    if isinstance(a, Node):
        parents.append((a, lambda g: g @ bv.T))
    if isinstance(b, Node):
        parents.append((b, lambda g: av.T @ g))
    return tape._push("matmul", av @ bv, tuple(parents))


def _unary(op: str, x: Node, value: np.ndarray, vjp: Vjp) -> Node:
    return x.tape._push(op, value, ((x, vjp),))


def tanh(x):
    if not isinstance(x, Node):
        return np.tanh(x)
    y = np.tanh(x.value)
    return _unary("tanh", x, y, lambda g: g * (1.0 - y * y))


def cos(x):
    if not isinstance(x, Node):
        return np.cos(x)
    xv = x.value
    return _unary("cos", x, np.cos(xv), lambda g: -g * np.sin(xv))


def sin(x):
    if not isinstance(x, Node):
        return np.sin(x)
    xv = x.value
    return _unary("sin", x, np.sin(xv), lambda g: g * np.cos(xv))


def absolute(x):
    """Elementwise |x|; the derivative at 0 is taken as 0."""
    if not isinstance(x, Node):
        return np.abs(x)
    xv = x.value
    return _unary("abs", x, np.abs(xv), lambda g: g * np.sign(xv))


def square(x):
    if not isinstance(x, Node):
        return np.square(x)
    xv = x.value
    return _unary("square", x, xv * xv, lambda g: 2.0 * g * xv)


def total(x):
    """Sum of all entries as a 1x1 tensor."""
    if not isinstance(x, Node):
        return np.sum(x).reshape(1, 1)
    shape = x.shape
    return _unary("sum", x, x.value.sum().reshape(1, 1), lambda g: np.full(shape, g[0, 0]))


def _transpose(x: Node) -> Node:
    return _unary("transpose", x, x.value.T, lambda g: g.T)


def _is_basic(index) -> bool:
    parts = index if isinstance(index, tuple) else (index,)
    return all(isinstance(i, (slice, int)) for i in parts)


def _getitem(x: Node, index) -> Node:
    shape = x.shape
    y = as_tensor(x.value[index])
    basic = _is_basic(index)

    def vjp(g):
        out = np.zeros(shape)
        if basic:
            out[index] = g.reshape(out[index].shape)
        else:
            np.add.at(out, index, g.reshape(out[index].shape))
        return out

    return _unary("index", x, y, vjp)


def concat(parts: Sequence, axis: int = 1):
    """Concatenate 2-D tensors along ``axis`` (columns by default)."""
    if not any(isinstance(p, Node) for p in parts):
        return np.concatenate([as_tensor(p) for p in parts], axis=axis)
    tape = _tape_of(*parts)
    values = [as_tensor(value_of(p)) for p in parts]
    other = 1 - axis
    for v in values[1:]:
        if v.shape[other] != values[0].shape[other]:
            raise ShapeError(f"concat: incompatible shapes {values[0].shape} and {v.shape}")
    parents = []
    hi = 0
    for p, v in zip(parts, values):
        lo, hi = hi, hi + v.shape[axis]
        if isinstance(p, Node):
            if axis == 1:
                parents.append((p, lambda g, lo=lo, hi=hi: g[:, lo:hi]))
            else:
                parents.append((p, lambda g, lo=lo, hi=hi: g[lo:hi, :]))
    return tape._push("concat", np.concatenate(values, axis=axis), tuple(parents))


class GradientMap(dict):
    """Node id -> gradient array, with lookup by node."""

    def wrt(self, node: Node) -> np.ndarray:
        g = self.get(node.id)
        return np.zeros(node.shape) if g is None else g


def backward(root: Node) -> GradientMap:
    """Gradients of the scalar ``root`` with respect to every node it depends on."""
    if root.shape != (1, 1):
        raise ContractError(f"backward needs a scalar (1, 1) root, got {root.shape}")
    grads = GradientMap()
    grads[root.id] = np.ones((1, 1))
    nodes = root.tape.nodes
    for i in range(root.id, -1, -1):
        g = grads.get(i)
        if g is None:
            continue
        for parent, vjp in nodes[i].parents:
            contrib = vjp(g)
            prev = grads.get(parent.id)
            grads[parent.id] = contrib if prev is None else prev + contrib
    return grads


@dataclass
class GradCheckReport:
    max_rel_error: float
    tol: float
    passed: bool
    analytic: np.ndarray
    numeric: np.ndarray
    nondifferentiable: bool = False

    def __str__(self) -> str:
        status = "pass" if self.passed else "FAIL"
        kink = " (non-differentiable point)" if self.nondifferentiable else ""
        return f"grad_check {status}: max rel err {self.max_rel_error:.3e} <= {self.tol:g}{kink}"


def grad_check(f: Callable[[Node], Node], point, step: float = 1e-6, tol: float = 1e-5,
               floor: float = 1e-8) -> GradCheckReport:
    """Compare the tape gradient of ``f`` at ``point`` against central differences.

    ``f`` receives a leaf node and must return a scalar node on the same tape.
    The relative error uses ``max(|a|, |n|, floor)`` in the denominator so
    zero gradients do not blow up the ratio. Any op in the graph with an
    argument exactly at a kink (``abs`` at 0) sets ``nondifferentiable``.
    """
    x0 = as_tensor(point).copy()
    tape = Tape()
    leaf = tape.variable(x0)
    root = f(leaf)
    analytic = backward(root).wrt(leaf)
    kink = any(
        n.op == "abs" and np.any(n.parents[0][0].value == 0.0) for n in tape.nodes
    )

    numeric = np.zeros_like(x0)
    for idx in np.ndindex(*x0.shape):
        xp = x0.copy()
        xm = x0.copy()
        xp[idx] += step
        xm[idx] -= step
        fp = f(Tape().variable(xp)).value[0, 0]
        fm = f(Tape().variable(xm)).value[0, 0]
        numeric[idx] = (fp - fm) / (2.0 * step)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    err = float(np.max(np.abs(analytic - numeric) / denom)) if x0.size else 0.0
    return GradCheckReport(err, tol, err <= tol and not kink, analytic, numeric, kink)
