"""Adam parameter updates on immutable parameter sets."""

from dataclasses import dataclass
from typing import Dict, Mapping, Tuple, TypeVar

import numpy as np

from .errors import NonFiniteError, ShapeError
from .params import ParameterSet
from .tensor import Tensor

P = TypeVar("P", bound=ParameterSet)


@dataclass(frozen=True)
class OptimizerState:
    """First and second moments per parameter plus the step counter."""

    first: Mapping[str, Tensor]
    second: Mapping[str, Tensor]
    step: int = 0

    @classmethod
    def zeros(cls, params: ParameterSet) -> "OptimizerState":
        """Fresh state with zero moments shaped like ``params``."""
        return cls(params.zeros_like(), params.zeros_like(), 0)

    def matches(self, params: ParameterSet) -> bool:
        """True if the moments have exactly the names and shapes of ``params``."""
        shapes = params.shapes()
        return all(
            {name: t.shape for name, t in moments.items()} == shapes
            for moments in (self.first, self.second)
        )


def adam_step(
    params: P,
    grads: Mapping[str, np.ndarray],
    state: OptimizerState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> Tuple[P, OptimizerState]:
    """
    One bias-corrected Adam update.

    Nothing is modified in place; the new parameters and state are returned.

    >>> ps = ParameterSet({"w": Tensor.zeros((1, 1, 1, 1))})
    >>> grads = {"w": np.ones((1, 1, 1, 1))}
    >>> new, st = adam_step(ps, grads, OptimizerState.zeros(ps), 0.001)
    >>> round(float(new["w"].data.ravel()[0]), 9), st.step
    (-0.001, 1)

    :raises NonFiniteError: if a gradient contains NaN or Inf; nothing is
        updated then
    :raises ShapeError: if a gradient does not match its parameter
    :raises KeyError: if a parameter has no gradient
    """
    for name, value in params.items():
        grad = np.asarray(grads[name])
        if grad.shape != value.shape:
            raise ShapeError(
                f"gradient of {name!r} has shape {grad.shape}, expected {value.shape}"
            )
        if not np.isfinite(grad).all():
            raise NonFiniteError(f"non-finite gradient for parameter {name!r}")

    step = state.step + 1
    c1 = 1.0 - beta1**step
    c2 = 1.0 - beta2**step
    updated: Dict[str, Tensor] = {}
    first: Dict[str, Tensor] = {}
    second: Dict[str, Tensor] = {}
    for name, value in params.items():
        grad = np.asarray(grads[name], dtype=np.float64)
        m = beta1 * state.first[name].data + (1.0 - beta1) * grad
        v = beta2 * state.second[name].data + (1.0 - beta2) * grad * grad
        updated[name] = Tensor(value.data - lr * (m / c1) / (np.sqrt(v / c2) + eps))
        first[name] = Tensor(m)
        second[name] = Tensor(v)
    return params.updated(updated), OptimizerState(first, second, step)
