"""Named, immutable collections of parameter tensors."""

import hashlib
from typing import Dict, Iterator, Mapping, Optional, Tuple, TypeVar

import numpy as np

from ._types import NodeId, Shape4
from .autodiff import Graph
from .errors import ShapeError
from .tensor import Tensor

P = TypeVar("P", bound="ParameterSet")


def glorot_uniform(
    rng: np.random.Generator, shape: Shape4, fan_in: int, fan_out: int
) -> Tensor:
    """
    Draw a tensor uniformly from ``[-a, a]`` with ``a = sqrt(6 / (fan_in + fan_out))``.

    >>> t = glorot_uniform(np.random.default_rng(0), (2, 2, 3, 3), 18, 18)
    >>> bool(np.all(np.abs(t.data) <= np.sqrt(6 / 36)))
    True
    """
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-bound, bound, size=shape))


class ParameterSet(Mapping[str, Tensor]):
    """
    An ordered, read-only ``name -> Tensor`` mapping.

    Updates never happen in place; :meth:`updated` returns a new set of the
    same type, so a set handed to a forward pass stays a valid snapshot.

    >>> ps = ParameterSet({"w": Tensor.ones((1, 1, 2, 2))})
    >>> ps.count()
    4
    >>> float(ps.updated({"w": Tensor.zeros((1, 1, 2, 2))})["w"].data.sum())
    0.0
    """

    __slots__ = ("_values",)

    def __init__(self, values: Mapping[str, Tensor]):
        items: Dict[str, Tensor] = {}
        for name, value in values.items():
            items[name] = value if isinstance(value, Tensor) else Tensor(value)
        expected = self._expected_shapes()
        if expected is not None:
            if list(items) != list(expected):
                missing = sorted(set(expected) - set(items))
                extra = sorted(set(items) - set(expected))
                if missing or extra:
                    raise ShapeError(
                        f"parameter names differ: missing {missing}, unexpected {extra}"
                    )
                items = {name: items[name] for name in expected}
            for name, shape in expected.items():
                if items[name].shape != shape:
                    raise ShapeError(
                        f"parameter {name!r} has shape {items[name].shape}, "
                        f"expected {shape}"
                    )
        self._values = items

    def _expected_shapes(self) -> Optional[Dict[str, Shape4]]:
        return None

    def _rebuild(self: P, values: Mapping[str, Tensor]) -> P:
        return type(self)(values)

    def __getitem__(self, name: str) -> Tensor:
        return self._values[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self._values)

    def __len__(self) -> int:
        return len(self._values)

    def __repr__(self) -> str:
        return "%s(%d tensors, %d values)" % (
            type(self).__name__,
            len(self),
            self.count(),
        )

    def count(self) -> int:
        """Total number of scalar parameters."""
        return sum(t.size for t in self._values.values())

    def checksum(self) -> str:
        """Hex SHA-256 over names, shapes and values."""
        digest = hashlib.sha256()
        for name, tensor in self._values.items():
            digest.update(name.encode("utf-8"))
            digest.update(np.asarray(tensor.shape, dtype="<u4").tobytes())
            digest.update(np.ascontiguousarray(tensor.data, dtype="<f8").tobytes())
        return digest.hexdigest()

    def updated(self: P, values: Mapping[str, Tensor]) -> P:
        """
        Return a copy with some tensors replaced.

        :raises KeyError: for a name that is not in the set
        """
        unknown = sorted(set(values) - set(self._values))
        if unknown:
            raise KeyError(f"unknown parameters {unknown}")
        merged = dict(self._values)
        merged.update(values)
        return self._rebuild(merged)

    def zeros_like(self) -> Dict[str, Tensor]:
        """Zero tensors with the names and shapes of this set."""
        return {name: Tensor.zeros(t.shape) for name, t in self._values.items()}

    def is_finite(self) -> bool:
        """True if every tensor is free of NaN and Inf."""
        return all(t.is_finite() for t in self._values.values())

    def bind(self, g: Graph, trainable: bool = True) -> Dict[str, NodeId]:
        """
        Add every tensor to ``g`` as a leaf.

        :param trainable: parameter leaves if True, constant leaves otherwise
        :return: ``name -> node id``
        """
        leaf = g.parameter if trainable else g.constant
        return {name: leaf(t) for name, t in self._values.items()}

    def shapes(self) -> Dict[str, Tuple[int, ...]]:
        """``name -> shape`` in order."""
        return {name: t.shape for name, t in self._values.items()}
