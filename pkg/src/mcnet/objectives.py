"""
Training losses.

All losses take sequences of frame nodes (one ``(n, c, h, w)`` node per
predicted step) and return a scalar ``(1, 1, 1, 1)`` node.

>>> from mcnet.autodiff import Graph
>>> g = Graph()
>>> y = [g.constant(np.ones((1, 1, 2, 2)))]
>>> z = [g.constant(np.zeros((1, 1, 2, 2)))]
>>> g.array(loss_p(g, y, z, 2.0)).item()
4.0
"""

from typing import Optional, Sequence, Tuple

import numpy as np

from ._types import NodeId
from .autodiff import (
    Graph,
    Operand,
    absolute,
    add,
    clip,
    log,
    mean_batch,
    pow_abs,
    reduce_sum,
    scale,
    spatial_diff,
    sub,
)
from .config import LossConfig

__all__ = [
    "LOG_EPS",
    "LossConfig",
    "loss_p",
    "loss_gdl",
    "loss_img",
    "loss_gan",
    "loss_disc",
    "loss_total",
    "combine",
]

#: Probabilities are clamped into [LOG_EPS, 1 - LOG_EPS] before the logarithm
LOG_EPS = 1e-7


def _pairs(
    g: Graph, targets: Sequence[Operand], preds: Sequence[Operand]
) -> Sequence[Tuple[NodeId, NodeId]]:
    if not targets:
        raise ValueError("a loss needs at least one frame")
    if len(targets) != len(preds):
        raise ValueError(
            f"got {len(targets)} target frames but {len(preds)} predictions"
        )
    return [(g.as_node(y), g.as_node(z)) for y, z in zip(targets, preds)]


def _total(g: Graph, terms: Sequence[NodeId]) -> NodeId:
    out = terms[0]
    for term in terms[1:]:
        out = add(g, out, term)
    return out


def loss_p(
    g: Graph, targets: Sequence[Operand], preds: Sequence[Operand], p: float = 2.0
) -> NodeId:
    """Sum over steps and pixels of ``|y - z| ** p``."""
    terms = [
        reduce_sum(g, pow_abs(g, sub(g, y, z), p))
        for y, z in _pairs(g, targets, preds)
    ]
    return _total(g, terms)


def loss_gdl(
    g: Graph, targets: Sequence[Operand], preds: Sequence[Operand], lam: float = 1.0
) -> NodeId:
    """
    Gradient difference loss.

    Compares the magnitudes of neighbour differences along rows and
    columns. Differences that would need a pixel outside the frame are
    skipped.

    :raises ShapeError: for frames smaller than 2x2
    """
    terms = []
    for y, z in _pairs(g, targets, preds):
        for axis in (2, 3):
            dy = absolute(g, spatial_diff(g, y, axis))
            dz = absolute(g, spatial_diff(g, z, axis))
            terms.append(reduce_sum(g, pow_abs(g, sub(g, dy, dz), lam)))
    return _total(g, terms)


def loss_img(
    g: Graph, targets: Sequence[Operand], preds: Sequence[Operand], cfg: LossConfig
) -> NodeId:
    """
    Image-space loss ``loss_p + loss_gdl``.

    In ``mean`` normalization the sum is divided by the number of predicted
    pixels ``T * n * c * h * w``.
    """
    total = add(
        g, loss_p(g, targets, preds, cfg.p), loss_gdl(g, targets, preds, cfg.lam)
    )
    if cfg.normalization == "mean":
        pixels = len(preds) * int(np.prod(g.shape(g.as_node(preds[0]))))
        total = scale(g, total, 1.0 / pixels)
    return total


def _clamped(g: Graph, prob: NodeId) -> NodeId:
    return clip(g, prob, LOG_EPS, 1.0 - LOG_EPS)


def loss_gan(g: Graph, prob_fake: NodeId) -> NodeId:
    """Batch mean of ``-log D(fake)``; finite for any probability in [0, 1]."""
    return scale(g, mean_batch(g, log(g, _clamped(g, prob_fake))), -1.0)


def loss_disc(g: Graph, prob_real: NodeId, prob_fake: NodeId) -> NodeId:
    """Batch mean of ``-log D(real) - log(1 - D(fake))``."""
    real = log(g, _clamped(g, prob_real))
    ones = g.constant(np.ones(g.shape(prob_fake)))
    fake = log(g, sub(g, ones, _clamped(g, prob_fake)))
    return scale(g, mean_batch(g, add(g, real, fake)), -1.0)


def combine(
    g: Graph, img: NodeId, gan: Optional[NodeId], cfg: LossConfig
) -> NodeId:
    """
    Weighted total ``alpha * img + beta * gan``.

    With ``beta == 0`` the adversarial node is not touched at all.
    """
    total = scale(g, img, cfg.alpha)
    if cfg.beta == 0:
        return total
    if gan is None:
        raise ValueError("beta > 0 needs the adversarial loss")
    return add(g, total, scale(g, gan, cfg.beta))


def loss_total(
    g: Graph,
    targets: Sequence[Operand],
    preds: Sequence[Operand],
    prob_fake: Optional[NodeId],
    cfg: LossConfig,
) -> NodeId:
    """The generator objective; ``prob_fake`` may be None when ``beta == 0``."""
    img = loss_img(g, targets, preds, cfg)
    gan = None if cfg.beta == 0 or prob_fake is None else loss_gan(g, prob_fake)
    return combine(g, img, gan, cfg)
