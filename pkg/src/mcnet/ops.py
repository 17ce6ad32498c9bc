"""
Structured neural operators.

Convolution, transposed convolution, 2x2 max pooling, fixed-switch
unpooling and the ConvLSTM cell, all recorded on a
:class:`~mcnet.autodiff.Graph` so they can be differentiated.

Convolutions are cross-correlations (no kernel flip) with symmetric zero
padding. Weights of :func:`conv2d` have shape ``(out, in, kh, kw)``; weights
of :func:`deconv2d` have shape ``(in, out, kh, kw)``, which makes
``deconv2d(y, spec, w)`` the exact adjoint of ``conv2d(x, spec.adjoint(), w)``.
"""

from dataclasses import dataclass
from typing import NamedTuple, Optional, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ._types import NodeId, Shape4
from .autodiff import (
    Graph,
    add,
    concat_channels,
    mul,
    sigmoid,
    split_channels,
    tanh,
)
from .errors import ShapeError

#: Position written by :func:`unpool2x2_fixed` inside each 2x2 window
UNPOOL_STENCIL = (0, 0)


@dataclass(frozen=True)
class ConvSpec:
    """
    Geometry of a convolution layer.

    >>> ConvSpec(1, 8, 3, 3, padding=1).output_size(32, 32)
    (32, 32)
    >>> ConvSpec(4, 4, 3, 3, stride=2, padding=1).output_size(32, 32)
    (16, 16)
    """

    in_channels: int
    out_channels: int
    kernel_h: int
    kernel_w: int
    stride: int = 1
    padding: int = 0

    def __post_init__(self):
        for name in ("in_channels", "out_channels", "kernel_h", "kernel_w", "stride"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.padding < 0:
            raise ValueError(f"padding must not be negative, got {self.padding}")

    @classmethod
    def same(cls, in_channels: int, out_channels: int, kernel: int) -> "ConvSpec":
        """Square stride-1 kernel with padding that keeps the spatial size."""
        return cls(in_channels, out_channels, kernel, kernel, 1, kernel // 2)

    @property
    def weight_shape(self) -> Shape4:
        """Shape of the :func:`conv2d` weight."""
        return (self.out_channels, self.in_channels, self.kernel_h, self.kernel_w)

    @property
    def deconv_weight_shape(self) -> Shape4:
        """Shape of the :func:`deconv2d` weight."""
        return (self.in_channels, self.out_channels, self.kernel_h, self.kernel_w)

    @property
    def bias_shape(self) -> Shape4:
        """Shape of the bias, broadcast over batch and space."""
        return (1, self.out_channels, 1, 1)

    @property
    def fan_in(self) -> int:
        return self.in_channels * self.kernel_h * self.kernel_w

    @property
    def fan_out(self) -> int:
        return self.out_channels * self.kernel_h * self.kernel_w

    def adjoint(self) -> "ConvSpec":
        """This ConvSpec with input and output channels swapped."""
        return ConvSpec(
            self.out_channels,
            self.in_channels,
            self.kernel_h,
            self.kernel_w,
            self.stride,
            self.padding,
        )

    def output_size(self, h: int, w: int) -> Tuple[int, int]:
        """
        Spatial output size of :func:`conv2d` for an ``h x w`` input.

        :raises ShapeError: if the output would be empty
        """
        oh = (h + 2 * self.padding - self.kernel_h) // self.stride + 1
        ow = (w + 2 * self.padding - self.kernel_w) // self.stride + 1
        if oh < 1 or ow < 1:
            raise ShapeError(
                f"{self} gives a non-positive output size for a {h}x{w} input"
            )
        return oh, ow

    def transposed_size(self, h: int, w: int) -> Tuple[int, int]:
        """Spatial output size of :func:`deconv2d` for an ``h x w`` input."""
        oh = (h - 1) * self.stride - 2 * self.padding + self.kernel_h
        ow = (w - 1) * self.stride - 2 * self.padding + self.kernel_w
        if oh < 1 or ow < 1:
            raise ShapeError(
                f"{self} gives a non-positive output size for a {h}x{w} input"
            )
        return oh, ow


def _windows(xp: np.ndarray, kh: int, kw: int, stride: int, oh: int, ow: int):
    """View of shape (n, c, oh, ow, kh, kw) over a padded input."""
    view = sliding_window_view(xp, (kh, kw), axis=(2, 3))
    rows = slice(None, (oh - 1) * stride + 1, stride)
    cols = slice(None, (ow - 1) * stride + 1, stride)
    return view[:, :, rows, cols]


def _correlate(x: np.ndarray, w: np.ndarray, spec: ConvSpec) -> np.ndarray:
    """Forward cross-correlation of x (n, in, h, w) with w (out, in, kh, kw)."""
    p = spec.padding
    oh, ow = spec.output_size(x.shape[2], x.shape[3])
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
    cols = _windows(xp, spec.kernel_h, spec.kernel_w, spec.stride, oh, ow)
    return np.tensordot(cols, w, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)


def _scatter(
    go: np.ndarray, w: np.ndarray, spec: ConvSpec, in_shape: Tuple[int, int]
) -> np.ndarray:
    """
    Adjoint of :func:`_correlate` with respect to its input.

    :param go: (n, out, oh, ow)
    :param w: (out, in, kh, kw)
    :param in_shape: the (h, w) of the un-padded input
    :return: (n, in, h, w)
    """
    n = go.shape[0]
    s, p = spec.stride, spec.padding
    kh, kw = spec.kernel_h, spec.kernel_w
    oh, ow = go.shape[2], go.shape[3]
    h, wd = in_shape
    # (n, in, oh, ow, kh, kw)
    cols = np.tensordot(go, w, axes=([1], [0])).transpose(0, 3, 1, 2, 4, 5)
    hp = max(h + 2 * p, (oh - 1) * s + kh)
    wp = max(wd + 2 * p, (ow - 1) * s + kw)
    out = np.zeros((n, w.shape[1], hp, wp))
    for i in range(kh):
        for j in range(kw):
            rows = slice(i, i + (oh - 1) * s + 1, s)
            cols_ = slice(j, j + (ow - 1) * s + 1, s)
            out[:, :, rows, cols_] += cols[..., i, j]
    return out[:, :, p : p + h, p : p + wd]


def _weight_grad(x: np.ndarray, go: np.ndarray, spec: ConvSpec) -> np.ndarray:
    """Gradient of :func:`_correlate` with respect to w, shape (out, in, kh, kw)."""
    p = spec.padding
    oh, ow = go.shape[2], go.shape[3]
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
    cols = _windows(xp, spec.kernel_h, spec.kernel_w, spec.stride, oh, ow)
    return np.tensordot(go, cols, axes=([0, 2, 3], [0, 2, 3]))


def _check_channels(g: Graph, x: NodeId, spec: ConvSpec, weight: NodeId, wshape):
    xs = g.shape(x)
    if xs[1] != spec.in_channels:
        raise ShapeError(
            f"input has {xs[1]} channels, {spec} expects {spec.in_channels}"
        )
    if g.shape(weight) != wshape:
        raise ShapeError(f"weight shape {g.shape(weight)} does not match {wshape}")


def conv2d(
    g: Graph,
    x: NodeId,
    spec: ConvSpec,
    weight: NodeId,
    bias: Optional[NodeId] = None,
) -> NodeId:
    """
    2-D cross-correlation plus per-channel bias.

    :param g: the graph
    :param x: input of shape ``(n, spec.in_channels, h, w)``
    :param spec: layer geometry
    :param weight: node of shape :attr:`ConvSpec.weight_shape`
    :param bias: optional node of shape :attr:`ConvSpec.bias_shape`
    :raises ShapeError: on channel mismatch or an empty output
    """
    _check_channels(g, x, spec, weight, spec.weight_shape)
    xv, wv = g.array(x), g.array(weight)
    out = _correlate(xv, wv, spec)
    in_hw = xv.shape[2:]

    def _back(go, needs):
        dx = _scatter(go, wv, spec, in_hw) if needs[0] else None
        dw = _weight_grad(xv, go, spec) if needs[1] else None
        return dx, dw

    node = g.record("conv2d", (x, weight), out, _back)
    return node if bias is None else _add_bias(g, node, bias, spec)


def deconv2d(
    g: Graph,
    x: NodeId,
    spec: ConvSpec,
    weight: NodeId,
    bias: Optional[NodeId] = None,
) -> NodeId:
    """
    Transposed convolution.

    The forward pass equals the input-gradient map of :func:`conv2d` with
    ``spec.adjoint()`` and the same weight array.

    :param weight: node of shape :attr:`ConvSpec.deconv_weight_shape`
    """
    _check_channels(g, x, spec, weight, spec.deconv_weight_shape)
    xv, wv = g.array(x), g.array(weight)
    h, w = spec.transposed_size(xv.shape[2], xv.shape[3])
    adj = spec.adjoint()
    out = _scatter(xv, wv, adj, (h, w))

    def _back(go, needs):
        dx = _correlate(go, wv, adj) if needs[0] else None
        dw = _weight_grad(go, xv, adj) if needs[1] else None
        return dx, dw

    node = g.record("deconv2d", (x, weight), out, _back)
    return node if bias is None else _add_bias(g, node, bias, spec)


def _add_bias(g: Graph, x: NodeId, bias: NodeId, spec: ConvSpec) -> NodeId:
    if g.shape(bias) != spec.bias_shape:
        raise ShapeError(f"bias shape {g.shape(bias)} does not match {spec.bias_shape}")
    xv = g.array(x)
    out = xv + g.array(bias)
    return g.record(
        "bias",
        (x, bias),
        out,
        lambda go, n: (go, go.sum(axis=(0, 2, 3), keepdims=True)),
    )


class PoolSwitches:
    """
    Argmax positions chosen by :func:`maxpool2x2`.

    ``indices[n, c, i, j]`` is the row-major offset (0..3) of the winning
    element inside window ``(i, j)``.
    """

    __slots__ = ("_indices",)

    def __init__(self, indices: np.ndarray):
        indices = np.array(indices, dtype=np.int64)
        if indices.size and (indices.min() < 0 or indices.max() > 3):
            raise ValueError("pool switch outside its 2x2 window")
        indices.setflags(write=False)
        self._indices = indices

    @property
    def indices(self) -> np.ndarray:
        """The read-only switch array (read-only)."""
        return self._indices

    @indices.setter
    def indices(self, value):
        raise AttributeError("attribute 'indices' is readonly")

    def positions(self) -> np.ndarray:
        """Switches as ``(row, col)`` offsets, shape ``(..., 2)``."""
        return np.stack(np.divmod(self._indices, 2), axis=-1)


def _blocks(x: np.ndarray) -> np.ndarray:
    n, c, h, w = x.shape
    return x.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(
        n, c, h // 2, w // 2, 4
    )


def _unblocks(b: np.ndarray) -> np.ndarray:
    n, c, h2, w2, _ = b.shape
    return b.reshape(n, c, h2, w2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(
        n, c, 2 * h2, 2 * w2
    )


def maxpool2x2(g: Graph, x: NodeId) -> Tuple[NodeId, PoolSwitches]:
    """
    2x2 max pooling with stride 2.

    Ties go to the first element in row-major window order. The backward
    pass routes each output gradient to its switch position only.

    :raises ShapeError: if the height or width is odd
    """
    shape = g.shape(x)
    if shape[2] % 2 or shape[3] % 2:
        raise ShapeError(f"maxpool2x2 needs even spatial sizes, got {shape}")
    blocks = _blocks(g.array(x))
    idx = np.argmax(blocks, axis=-1)
    out = np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0]
    onehot = idx[..., None] == np.arange(4)

    def _back(go, n):
        return (_unblocks(onehot * go[..., None]),)

    return g.record("maxpool", (x,), out, _back), PoolSwitches(idx)


def unpool2x2_fixed(
    g: Graph, x: NodeId, position: Tuple[int, int] = UNPOOL_STENCIL
) -> NodeId:
    """
    Upsample by two, writing each value to a fixed cell of its 2x2 window.

    The other three cells are zero. With the default stencil ``[[4]]``
    becomes ``[[4, 0], [0, 0]]``.
    """
    r, c = position
    if r not in (0, 1) or c not in (0, 1):
        raise ValueError(f"stencil position must lie in the 2x2 window, got {position}")
    xv = g.array(x)
    n, ch, h, w = xv.shape
    out = np.zeros((n, ch, 2 * h, 2 * w))
    out[:, :, r::2, c::2] = xv
    return g.record("unpool", (x,), out, lambda go, nd: (go[:, :, r::2, c::2],))


class ConvLSTMState(NamedTuple):
    """Hidden output ``d_t`` and memory cell ``c_t`` of a ConvLSTM."""

    hidden: NodeId
    cell: NodeId

    @classmethod
    def zeros(cls, g: Graph, shape: Shape4) -> "ConvLSTMState":
        """A zero state of the given shape as constant leaves."""
        return cls(g.constant(np.zeros(shape)), g.constant(np.zeros(shape)))


def convlstm_spec(in_channels: int, hidden: int, kernel: int = 3) -> ConvSpec:
    """Gate convolution over ``[input, hidden]`` producing the four gates."""
    return ConvSpec.same(in_channels + hidden, 4 * hidden, kernel)


def convlstm_step(
    g: Graph,
    x: NodeId,
    state: ConvLSTMState,
    spec: ConvSpec,
    weight: NodeId,
    bias: NodeId,
) -> Tuple[NodeId, ConvLSTMState]:
    """
    One step of a ConvLSTM without peephole connections.

    A single convolution over ``[x, h]`` yields the stacked gates
    ``(i, f, o, g)``; then ``c' = f * c + i * g`` and ``h' = o * tanh(c')``.

    :param x: input features ``(n, c_in, h, w)``
    :param state: previous hidden and cell, both ``(n, c_hid, h, w)``
    :param spec: gate geometry as built by :func:`convlstm_spec`
    :return: the new hidden output and the new state
    :raises ShapeError: if the state does not match the gate outputs
    """
    hs, cs = g.shape(state.hidden), g.shape(state.cell)
    if hs != cs:
        raise ShapeError(f"hidden {hs} and cell {cs} shapes differ")
    hidden = spec.out_channels // 4
    xs = g.shape(x)
    if hs != (xs[0], hidden, xs[2], xs[3]):
        raise ShapeError(
            f"state shape {hs} does not match gate output {(xs[0], hidden) + xs[2:]}"
        )
    stacked = concat_channels(g, x, state.hidden)
    gates = conv2d(g, stacked, spec, weight, bias)
    i, f, o, cand = split_channels(g, gates, [hidden] * 4)
    i, f, o, cand = sigmoid(g, i), sigmoid(g, f), sigmoid(g, o), tanh(g, cand)
    cell = add(g, mul(g, f, state.cell), mul(g, i, cand))
    out = mul(g, o, tanh(g, cell))
    return out, ConvLSTMState(out, cell)
