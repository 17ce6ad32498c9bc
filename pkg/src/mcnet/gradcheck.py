"""Finite-difference verification of analytic gradients."""

import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from ._types import NodeId
from .autodiff import Graph, backward
from .tensor import Tensor

#: Floor of the relative-error denominator
EPS_DENOMINATOR = 1e-8

#: Builds a scalar loss from the parameter nodes it is handed
LossBuilder = Callable[[Graph, Sequence[NodeId]], NodeId]


@dataclass(frozen=True)
class GradCheckReport:
    """Outcome of :func:`grad_check`."""

    #: Name of the operator or model being checked
    name: str
    #: Largest relative error over all probed elements
    max_rel_error: float
    #: Largest relative error per parameter tensor
    per_param: Tuple[float, ...]
    #: Tolerance the errors were held against
    tolerance: float
    #: Number of elements probed
    probes: int
    #: Description of a non-finite probe, if one occurred
    failure: Optional[str] = field(default=None)
    #: Probes that passed only after a smaller-step retry
    refined: int = field(default=0)

    @property
    def passed(self) -> bool:
        """True if every probe was finite and within the tolerance."""
        return self.failure is None and self.max_rel_error < self.tolerance

    def __str__(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        text = "%s %-24s max rel. error %.3e (tol %.0e, %d probes)" % (
            status,
            self.name,
            self.max_rel_error,
            self.tolerance,
            self.probes,
        )
        if self.refined:
            text = text[:-1] + ", %d refined)" % self.refined
        if self.failure:
            text += " - " + self.failure
        return text


def relative_error(analytic: float, numeric: float) -> float:
    """
    Relative disagreement of two derivative estimates.

    >>> relative_error(2.0, 2.0)
    0.0
    >>> relative_error(0.0, 0.0)
    0.0
    """
    den = max(abs(analytic), abs(numeric), EPS_DENOMINATOR)
    return abs(analytic - numeric) / den


def _evaluate(builder: LossBuilder, arrays: Sequence[np.ndarray]) -> float:
    g = Graph()
    nodes = [g.constant(a) for a in arrays]
    return float(g.array(builder(g, nodes)).reshape(()))


def _central(
    builder: LossBuilder,
    arrays: Sequence[np.ndarray],
    target: np.ndarray,
    local: int,
    h: float,
) -> Optional[float]:
    original = target[local]
    target[local] = original + h
    upper = _evaluate(builder, arrays)
    target[local] = original - h
    lower = _evaluate(builder, arrays)
    target[local] = original
    if not (math.isfinite(upper) and math.isfinite(lower)):
        return None
    return (upper - lower) / (2.0 * h)


def grad_check(
    builder: LossBuilder,
    params: Sequence[Tensor],
    step: float = 1e-5,
    tolerance: float = 1e-4,
    max_probes: int = 10_000,
    seed: int = 0,
    name: str = "loss",
    refinements: int = 0,
) -> GradCheckReport:
    """
    Compare analytic gradients with central finite differences.

    Every element of every parameter is probed with
    ``(f(theta + h) - f(theta - h)) / 2h``; above ``max_probes`` elements a
    seeded random subsample of that size is probed instead.

    By default every probe uses the single step ``h``, so inputs must keep
    a margin of more than ``h`` from every kink. With ``refinements`` set, a
    probe outside the tolerance is repeated up to that many times with a
    step ten times smaller and keeps its best error; such probes are counted
    in :attr:`GradCheckReport.refined`.

    >>> from mcnet.autodiff import mul, reduce_sum
    >>> report = grad_check(
    ...     lambda g, n: reduce_sum(g, mul(g, n[0], n[0])),
    ...     [Tensor(np.arange(4.0).reshape(1, 1, 2, 2))],
    ... )
    >>> report.passed, report.probes
    (True, 4)

    :param builder: deterministic function ``(graph, param_nodes) -> loss``
    :param params: the point to check at
    :param step: finite-difference step ``h``, strictly positive
    :param tolerance: largest accepted relative error
    :param max_probes: cap on the number of probed elements
    :param seed: seed of the subsample
    :param name: label used in the report
    :param refinements: opt-in retries with a smaller step for failing probes
    :return: the report; inspect :attr:`GradCheckReport.passed`
    """
    if step <= 0:
        raise ValueError(f"step must be positive, got {step}")

    g = Graph()
    nodes = [g.parameter(p) for p in params]
    loss = builder(g, nodes)
    backward(g, loss)
    analytic = []
    for p, node in zip(params, nodes):
        grad = g.grad_array(node)
        analytic.append(np.zeros(p.shape) if grad is None else grad)

    sizes = [p.size for p in params]
    total = sum(sizes)
    if total > max_probes:
        rng = np.random.default_rng(seed)
        flat = np.sort(rng.choice(total, size=max_probes, replace=False))
    else:
        flat = np.arange(total)
    offsets = np.cumsum([0] + sizes)

    arrays: List[np.ndarray] = [p.numpy() for p in params]
    per_param = [0.0] * len(params)
    failure = None
    refined = 0
    for index in flat:
        which = int(np.searchsorted(offsets, index, side="right") - 1)
        local = int(index - offsets[which])
        target = arrays[which].reshape(-1)
        expected = float(analytic[which].reshape(-1)[local])
        err = math.inf
        h = step
        for _ in range(refinements + 1):
            numeric = _central(builder, arrays, target, local, h)
            if numeric is None:
                failure = "non-finite loss probing parameter %d element %d" % (
                    which,
                    local,
                )
                break
            err = min(err, relative_error(expected, numeric))
            if err < tolerance:
                if h < step:
                    refined += 1
                break
            h /= 10.0
        if failure:
            break
        per_param[which] = max(per_param[which], err)

    return GradCheckReport(
        name=name,
        max_rel_error=max(per_param, default=0.0),
        per_param=tuple(per_param),
        tolerance=tolerance,
        probes=len(flat),
        failure=failure,
        refined=refined,
    )
