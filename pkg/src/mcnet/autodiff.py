"""
Tape-based reverse-mode differentiation.

A :class:`Graph` records every operation applied to its nodes in insertion
order. Each recorded node keeps its output value and a backward closure that
maps the gradient of the output to gradients of the inputs. Because inputs
always exist before the node that consumes them, the tape is acyclic by
construction and :func:`backward` only has to walk it once in reverse.

The operators in this module are the arithmetic building blocks; the
structured neural operators live in :mod:`mcnet.ops`.
"""

from contextlib import contextmanager
from typing import Dict, Iterator, List, Optional, Sequence, Set, Tuple, Union

import numpy as np

from ._types import BackwardFn, NodeId, Shape4
from .errors import ShapeError
from .tensor import Tensor

#: Kinds accepted by :func:`elementwise`
ELEMENTWISE_KINDS = ("add", "sub", "mul", "tanh", "sigmoid", "relu", "scale")
_BINARY_KINDS = {"add", "sub", "mul"}

# operator kinds whose backward sign is flipped, see inject_sign_fault()
_SIGN_FAULTS: Set[str] = set()

Operand = Union[NodeId, Tensor]


class _Node:
    __slots__ = ("kind", "inputs", "value", "backward", "requires_grad")

    def __init__(
        self,
        kind: str,
        inputs: Tuple[NodeId, ...],
        value: np.ndarray,
        backward: Optional[BackwardFn],
        requires_grad: bool,
    ):
        self.kind = kind
        self.inputs = inputs
        self.value = value
        self.backward = backward
        self.requires_grad = requires_grad


class Graph:
    """
    A computation tape.

    A graph belongs to one thread at a time. The values it hands out are
    immutable :class:`~mcnet.tensor.Tensor` objects and may be shared.

    >>> g = Graph()
    >>> x = g.parameter(Tensor(np.full((1, 1, 1, 2), 3.0)))
    >>> root = reduce_sum(g, mul(g, x, x))
    >>> backward(g, root)
    >>> g.grad(x).data.ravel().tolist()
    [6.0, 6.0]
    """

    def __init__(self) -> None:
        self._nodes: List[_Node] = []
        self._grads: Dict[int, np.ndarray] = {}

    def __len__(self) -> int:
        return len(self._nodes)

    def _add(
        self,
        kind: str,
        inputs: Tuple[NodeId, ...],
        value: np.ndarray,
        backward: Optional[BackwardFn] = None,
        requires_grad: Optional[bool] = None,
    ) -> NodeId:
        if requires_grad is None:
            requires_grad = any(self._nodes[i].requires_grad for i in inputs)
        value = np.asarray(value, dtype=np.float64)
        if value.ndim != 4:
            raise ShapeError(f"operator {kind!r} produced shape {value.shape}")
        value.setflags(write=False)
        self._nodes.append(_Node(kind, inputs, value, backward, requires_grad))
        return NodeId(len(self._nodes) - 1)

    def record(
        self,
        kind: str,
        inputs: Sequence[NodeId],
        value: np.ndarray,
        backward: BackwardFn,
    ) -> NodeId:
        """
        Append an operator node to the tape.

        :param kind: operator name, used in error messages and fault injection
        :param inputs: input node ids; all must already exist
        :param value: the computed output
        :param backward: closure ``(grad_out, needs) -> grads`` returning one
            entry per input (``None`` where ``needs`` is False)
        :return: the new node id
        """
        for i in inputs:
            self._check(i)
        return self._add(kind, tuple(inputs), value, backward)

    def constant(self, value: Union[Tensor, np.ndarray]) -> NodeId:
        """Add a leaf that never receives a gradient."""
        data = value.data if isinstance(value, Tensor) else np.array(value)
        return self._add("constant", (), data, None, requires_grad=False)

    def parameter(self, value: Union[Tensor, np.ndarray]) -> NodeId:
        """Add a leaf whose gradient is collected by :func:`backward`."""
        data = value.data if isinstance(value, Tensor) else np.array(value)
        return self._add("parameter", (), data, None, requires_grad=True)

    def detach(self, node: NodeId) -> NodeId:
        """Copy the value of ``node`` into a new constant leaf."""
        return self.constant(self.array(node))

    def as_node(self, operand: Operand) -> NodeId:
        """Return ``operand`` itself if it is a node id, else a constant leaf."""
        if isinstance(operand, Tensor):
            return self.constant(operand)
        self._check(operand)
        return operand

    def _check(self, node: int) -> None:
        if not isinstance(node, (int, np.integer)) or not 0 <= node < len(self._nodes):
            raise ValueError(f"unknown node id {node!r}")

    def array(self, node: NodeId) -> np.ndarray:
        """The read-only output array of ``node``."""
        self._check(node)
        return self._nodes[node].value

    def value(self, node: NodeId) -> Tensor:
        """The output of ``node`` as a :class:`~mcnet.tensor.Tensor`."""
        return Tensor(self.array(node))

    def shape(self, node: NodeId) -> Shape4:
        """The output shape of ``node``."""
        return self.array(node).shape  # type: ignore

    def kind(self, node: NodeId) -> str:
        """The operator that produced ``node``."""
        self._check(node)
        return self._nodes[node].kind

    def requires_grad(self, node: NodeId) -> bool:
        """True if a gradient flows into ``node``."""
        self._check(node)
        return self._nodes[node].requires_grad

    def grad(self, node: NodeId) -> Optional[Tensor]:
        """Accumulated gradient of ``node``, or None if none was computed."""
        self._check(node)
        grad = self._grads.get(node)
        return None if grad is None else Tensor(grad)

    def grad_array(self, node: NodeId) -> Optional[np.ndarray]:
        """Like :meth:`grad` but returns the raw array."""
        self._check(node)
        return self._grads.get(node)

    def zero_grad(self) -> None:
        """Forget all accumulated gradients."""
        self._grads.clear()

    def backward(self, root: NodeId) -> None:
        """Shortcut for :func:`backward` on this graph."""
        backward(self, root)

    def _reverse_pass(self, root: NodeId) -> Dict[int, np.ndarray]:
        adjoints: Dict[int, np.ndarray] = {root: np.ones((1, 1, 1, 1))}
        for index in range(root, -1, -1):
            grad = adjoints.get(index)
            node = self._nodes[index]
            if grad is None or node.backward is None:
                continue
            needs = tuple(self._nodes[i].requires_grad for i in node.inputs)
            if not any(needs):
                continue
            local = node.backward(grad, needs)
            if node.kind in _SIGN_FAULTS:
                local = [None if g is None else -g for g in local]
            for i, g, need in zip(node.inputs, local, needs):
                if not need or g is None:
                    continue
                if i in adjoints:
                    adjoints[i] = adjoints[i] + g
                else:
                    adjoints[i] = np.asarray(g, dtype=np.float64)
        return {
            i: g for i, g in adjoints.items() if self._nodes[i].requires_grad
        }


def backward(g: Graph, root: NodeId) -> None:
    """
    Propagate gradients from a scalar loss to every ancestor.

    Gradients are added to whatever the graph already holds, so calling
    this twice without :meth:`Graph.zero_grad` doubles every gradient.

    :param g: the graph that recorded ``root``
    :param root: a node of shape ``(1, 1, 1, 1)``
    :raises ShapeError: if the root is not scalar-valued
    """
    shape = g.shape(root)
    if shape != (1, 1, 1, 1):
        raise ShapeError(f"backward needs a scalar (1, 1, 1, 1) root, got {shape}")
    for index, grad in g._reverse_pass(root).items():
        if index in g._grads:
            g._grads[index] = g._grads[index] + grad
        else:
            g._grads[index] = grad


@contextmanager
def inject_sign_fault(kind: str) -> Iterator[None]:
    """
    Flip the sign of one operator's backward pass while the block runs.

    A deliberately broken operator lets the gradient checker prove that it
    detects errors.

    :param kind: operator kind, e.g. ``"tanh"`` or ``"conv2d"``
    """
    _SIGN_FAULTS.add(kind)
    try:
        yield
    finally:
        _SIGN_FAULTS.discard(kind)


def _same_shape(g: Graph, kind: str, a: NodeId, b: NodeId) -> None:
    sa, sb = g.shape(a), g.shape(b)
    if sa != sb:
        raise ShapeError(f"{kind}: shape mismatch {sa} vs {sb}")


def elementwise(
    g: Graph,
    kind: str,
    a: NodeId,
    b: Optional[NodeId] = None,
    factor: Optional[float] = None,
) -> NodeId:
    """
    Apply one of the elementwise operators in :data:`ELEMENTWISE_KINDS`.

    Binary kinds need operands of identical shape; the only broadcast is the
    scalar ``factor`` of ``scale``.

    :param g: the graph
    :param kind: one of add, sub, mul, tanh, sigmoid, relu, scale
    :param a: first operand
    :param b: second operand for the binary kinds
    :param factor: the scalar of ``scale``
    :raises ShapeError: for binary operands of different shapes
    :raises ValueError: for an unknown kind or a missing operand
    """
    if kind not in ELEMENTWISE_KINDS:
        raise ValueError(f"unknown elementwise kind {kind!r}")
    x = g.array(a)
    if kind in _BINARY_KINDS:
        if b is None:
            raise ValueError(f"{kind} needs two operands")
        _same_shape(g, kind, a, b)
        y = g.array(b)
        if kind == "add":
            return g.record(kind, (a, b), x + y, lambda go, n: (go, go))
        if kind == "sub":
            return g.record(kind, (a, b), x - y, lambda go, n: (go, -go))
        return g.record(kind, (a, b), x * y, lambda go, n: (go * y, go * x))

    if kind == "scale":
        if factor is None:
            raise ValueError("scale needs a factor")
        c = float(factor)
        return g.record(kind, (a,), x * c, lambda go, n: (go * c,))
    if kind == "tanh":
        out = np.tanh(x)
        return g.record(kind, (a,), out, lambda go, n: (go * (1.0 - out * out),))
    if kind == "sigmoid":
        out = _sigmoid(x)
        return g.record(kind, (a,), out, lambda go, n: (go * out * (1.0 - out),))
    mask = x > 0
    return g.record(kind, (a,), np.where(mask, x, 0.0), lambda go, n: (go * mask,))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # split by sign so exp() never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def add(g: Graph, a: NodeId, b: NodeId) -> NodeId:
    """Elementwise ``a + b``."""
    return elementwise(g, "add", a, b)


def sub(g: Graph, a: NodeId, b: NodeId) -> NodeId:
    """Elementwise ``a - b``."""
    return elementwise(g, "sub", a, b)


def mul(g: Graph, a: NodeId, b: NodeId) -> NodeId:
    """Elementwise ``a * b``."""
    return elementwise(g, "mul", a, b)


def scale(g: Graph, a: NodeId, factor: float) -> NodeId:
    """Multiply by a scalar."""
    return elementwise(g, "scale", a, factor=factor)


def tanh(g: Graph, a: NodeId) -> NodeId:
    """Elementwise hyperbolic tangent."""
    return elementwise(g, "tanh", a)


def sigmoid(g: Graph, a: NodeId) -> NodeId:
    """Elementwise logistic function."""
    return elementwise(g, "sigmoid", a)


def relu(g: Graph, a: NodeId) -> NodeId:
    """Elementwise rectification."""
    return elementwise(g, "relu", a)


def leaky_relu(g: Graph, a: NodeId, slope: float = 0.2) -> NodeId:
    """Rectification with slope ``slope`` on the negative side."""
    x = g.array(a)
    factor = np.where(x > 0, 1.0, slope)
    return g.record("leaky_relu", (a,), x * factor, lambda go, n: (go * factor,))


def absolute(g: Graph, a: NodeId) -> NodeId:
    """Elementwise ``|a|`` with the subgradient ``sign(0) = 0``."""
    x = g.array(a)
    sign = np.sign(x)
    return g.record("abs", (a,), np.abs(x), lambda go, n: (go * sign,))


def pow_abs(g: Graph, a: NodeId, p: float) -> NodeId:
    """
    Elementwise ``|a| ** p`` for ``p >= 1``.

    ``p == 1`` and ``p == 2`` take exact shortcuts (``|a|`` and ``a * a``).
    """
    if p < 1:
        raise ValueError(f"pow_abs needs p >= 1, got {p}")
    x = g.array(a)
    if p == 1:
        return absolute(g, a)
    if p == 2:
        return g.record("pow_abs", (a,), x * x, lambda go, n: (go * 2.0 * x,))
    mag = np.abs(x)
    local = p * mag ** (p - 1) * np.sign(x)
    return g.record("pow_abs", (a,), mag**p, lambda go, n: (go * local,))


def log(g: Graph, a: NodeId) -> NodeId:
    """Elementwise natural logarithm; inputs must be positive."""
    x = g.array(a)
    if np.any(x <= 0):
        raise ValueError("log of a non-positive value")
    return g.record("log", (a,), np.log(x), lambda go, n: (go / x,))


def clip(g: Graph, a: NodeId, low: float, high: float) -> NodeId:
    """Clamp into ``[low, high]``; the gradient is zero where clamped."""
    x = g.array(a)
    inside = (x >= low) & (x <= high)
    return g.record(
        "clip", (a,), np.clip(x, low, high), lambda go, n: (go * inside,)
    )


def concat_channels(g: Graph, a: NodeId, b: NodeId) -> NodeId:
    """
    Concatenate two tensors along the channel axis.

    :raises ShapeError: if batch or spatial sizes differ
    """
    sa, sb = g.shape(a), g.shape(b)
    if (sa[0], sa[2], sa[3]) != (sb[0], sb[2], sb[3]):
        raise ShapeError(f"concat_channels: (n, h, w) mismatch {sa} vs {sb}")
    ca = sa[1]
    out = np.concatenate([g.array(a), g.array(b)], axis=1)
    return g.record(
        "concat", (a, b), out, lambda go, n: (go[:, :ca], go[:, ca:])
    )


def concat_many(g: Graph, nodes: Sequence[NodeId]) -> NodeId:
    """Concatenate any non-empty sequence of nodes along channels."""
    if not nodes:
        raise ValueError("concat_many needs at least one node")
    out = nodes[0]
    for node in nodes[1:]:
        out = concat_channels(g, out, node)
    return out


def split_channels(g: Graph, a: NodeId, sizes: Sequence[int]) -> List[NodeId]:
    """
    Split along the channel axis into pieces of the given sizes.

    :raises ShapeError: if the sizes do not add up to the channel count
    """
    shape = g.shape(a)
    if sum(sizes) != shape[1]:
        raise ShapeError(f"split_channels: sizes {list(sizes)} do not sum to {shape}")
    x = g.array(a)
    pieces = []
    start = 0
    for size in sizes:
        lo, hi = start, start + size

        def _back(go, n, lo=lo, hi=hi):
            full = np.zeros(shape)
            full[:, lo:hi] = go
            return (full,)

        pieces.append(g.record("split", (a,), x[:, lo:hi], _back))
        start = hi
    return pieces


def spatial_diff(g: Graph, a: NodeId, axis: int) -> NodeId:
    """
    Neighbour differences ``x[i] - x[i-1]`` along rows (axis 2) or columns (3).

    The output is one element shorter along ``axis``; no border values are
    invented.
    """
    if axis not in (2, 3):
        raise ValueError(f"axis must be 2 or 3, got {axis}")
    shape = g.shape(a)
    if shape[axis] < 2:
        raise ShapeError(f"spatial_diff needs at least 2 entries along axis {axis}")
    x = g.array(a)
    hi = [slice(None)] * 4
    lo = [slice(None)] * 4
    hi[axis] = slice(1, None)
    lo[axis] = slice(None, -1)
    out = x[tuple(hi)] - x[tuple(lo)]

    def _back(go, n):
        full = np.zeros(shape)
        full[tuple(hi)] += go
        full[tuple(lo)] -= go
        return (full,)

    return g.record("spatial_diff", (a,), out, _back)


def reduce_sum(g: Graph, a: NodeId) -> NodeId:
    """Sum of all elements as a ``(1, 1, 1, 1)`` node."""
    x = g.array(a)
    shape = x.shape
    return g.record(
        "sum",
        (a,),
        np.sum(x).reshape(1, 1, 1, 1),
        lambda go, n: (np.broadcast_to(go.reshape(()), shape).copy(),),
    )


def mean_batch(g: Graph, a: NodeId) -> NodeId:
    """Mean over a ``(n, 1, 1, 1)`` batch of scalars."""
    shape = g.shape(a)
    if shape[1:] != (1, 1, 1):
        raise ShapeError(f"mean_batch needs (n, 1, 1, 1), got {shape}")
    count = shape[0]
    return scale(g, reduce_sum(g, a), 1.0 / count)


def global_avg_pool(g: Graph, a: NodeId) -> NodeId:
    """Average over the spatial axes, giving ``(n, c, 1, 1)``."""
    x = g.array(a)
    shape = x.shape
    area = shape[2] * shape[3]
    return g.record(
        "global_avg_pool",
        (a,),
        x.mean(axis=(2, 3), keepdims=True),
        lambda go, n: (np.broadcast_to(go / area, shape).copy(),),
    )
