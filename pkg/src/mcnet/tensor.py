"""Immutable dense 4-D tensors."""

from typing import Iterator, Optional

import numpy as np

from ._types import ArrayLike, Shape4
from .errors import ShapeError

#: Default element type; gradient checks are only meaningful in 64 bit
DEFAULT_DTYPE = np.float64


class Tensor:
    """
    A dense ``(batch, channels, rows, cols)`` array of real values.

    Tensors are values: the wrapped array is marked read-only and none of
    the attributes can be reassigned, so a tensor can be shared between
    graphs and threads without copying.

    :param data: anything :func:`numpy.asarray` accepts, with exactly four
        dimensions
    :param dtype: element type, defaults to 64-bit floats

    >>> t = Tensor(np.zeros((1, 2, 3, 4)))
    >>> t.shape
    (1, 2, 3, 4)
    >>> t.size
    24
    """

    __slots__ = ("_data",)

    def __init__(self, data: ArrayLike, dtype: Optional[type] = None):
        array = np.array(data, dtype=dtype or DEFAULT_DTYPE, copy=True)
        if array.ndim != 4:
            raise ShapeError(
                f"expected a 4-D (n, c, h, w) array, got shape {array.shape}"
            )
        array.setflags(write=False)
        self._data = array

    @classmethod
    def zeros(cls, shape: Shape4) -> "Tensor":
        """Return a tensor of the given shape filled with zeros."""
        return cls(np.zeros(shape))

    @classmethod
    def ones(cls, shape: Shape4) -> "Tensor":
        """Return a tensor of the given shape filled with ones."""
        return cls(np.ones(shape))

    @classmethod
    def full(cls, shape: Shape4, value: float) -> "Tensor":
        """Return a tensor of the given shape filled with ``value``."""
        return cls(np.full(shape, value, dtype=DEFAULT_DTYPE))

    @classmethod
    def uniform(
        cls, shape: Shape4, seed: int, low: float = -1.0, high: float = 1.0
    ) -> "Tensor":
        """
        Return a tensor with seeded values drawn uniformly from [low, high).

        :param shape: the 4-D shape
        :param seed: seed of the :func:`numpy.random.default_rng` generator
        """
        rng = np.random.default_rng(seed)
        return cls(rng.uniform(low, high, size=shape))

    @property
    def data(self) -> np.ndarray:
        """The read-only array (read-only)."""
        return self._data

    @data.setter
    def data(self, value):
        raise AttributeError("attribute 'data' is readonly")

    @property
    def shape(self) -> Shape4:
        """The ``(n, c, h, w)`` shape (read-only)."""
        return self._data.shape  # type: ignore

    @shape.setter
    def shape(self, value):
        raise AttributeError("attribute 'shape' is readonly")

    @property
    def size(self) -> int:
        """Number of elements."""
        return int(self._data.size)

    @property
    def dtype(self) -> np.dtype:
        """Element type of the wrapped array."""
        return self._data.dtype

    def numpy(self) -> np.ndarray:
        """Return a writable copy of the data."""
        return self._data.copy()

    def is_finite(self) -> bool:
        """Return True if no element is NaN or infinite."""
        return bool(np.isfinite(self._data).all())

    def __iter__(self) -> Iterator[np.ndarray]:
        """Iterate over the batch axis."""
        yield from self._data

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Tensor):
            return NotImplemented
        return self.shape == other.shape and bool(
            np.array_equal(self._data, other._data)
        )

    def __hash__(self) -> int:
        return hash((self.shape, self._data.tobytes()))

    def __repr__(self) -> str:
        return "%s(shape=%r, dtype=%s)" % (
            type(self).__name__,
            self.shape,
            self._data.dtype,
        )
