"""Typing for mcnet."""

from typing import Callable, Dict, List, Mapping, NewType, Sequence, Tuple, Union

import numpy as np

#: Handle of a node inside a :class:`mcnet.autodiff.Graph`
NodeId = NewType("NodeId", int)

Shape4 = Tuple[int, int, int, int]
ArrayLike = Union[np.ndarray, Sequence, float, int]
BoundParams = Mapping[str, NodeId]
GradMap = Dict[str, np.ndarray]
#: Backward closure: (output gradient, which inputs need one) -> input grads
BackwardFn = Callable[[np.ndarray, Tuple[bool, ...]], Sequence[object]]
FrameList = List[np.ndarray]
