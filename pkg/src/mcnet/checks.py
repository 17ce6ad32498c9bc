"""
Gradient-check suites run by ``mcnet grad-check``.

Every operator is checked on small random inputs pushed away from its
kinks, under a loss ``sum(R * op(...))`` with a fixed random ``R`` so no
gradient is trivially uniform. The model check runs the full generator of a
tiny configuration on random frames.
"""

from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from ._types import NodeId
from .autodiff import (
    Graph,
    absolute,
    add,
    clip,
    concat_channels,
    global_avg_pool,
    leaky_relu,
    log,
    mean_batch,
    mul,
    pow_abs,
    reduce_sum,
    relu,
    sigmoid,
    spatial_diff,
    split_channels,
    tanh,
)
from .config import LossConfig, ModelConfig
from .gradcheck import GradCheckReport, grad_check
from .model import Generator, build_generator, predict_sequence
from .objectives import loss_disc, loss_gan, loss_gdl, loss_img, loss_p
from .ops import (
    ConvLSTMState,
    ConvSpec,
    conv2d,
    convlstm_spec,
    convlstm_step,
    deconv2d,
    maxpool2x2,
    unpool2x2_fixed,
)
from .tensor import Tensor

#: Tiny generator used by the full-model check
TINY_MODEL = ModelConfig(
    frame_height=16,
    frame_width=16,
    content_widths=(4, 8, 8),
    motion_widths=(4, 8, 8),
    comb_widths=(8, 4, 8),
    disc_widths=(4, 4),
)

#: Finite-difference step of every check
CHECK_STEP = 1e-5

#: Parameters probed by default in the model check
MODEL_PROBES = 2000

#: Smaller-step retries of the model check. Hidden activations of a random
#: network cannot be moved off rectifier and pooling kinks.
MODEL_REFINEMENTS = 2

OpBody = Callable[[Graph, Sequence[NodeId]], NodeId]


def _away_from_zero(x: np.ndarray, margin: float = 0.1) -> np.ndarray:
    return x + np.where(x >= 0, margin, -margin)


def _weighted(body: OpBody, seed: int) -> OpBody:
    def _builder(g: Graph, nodes: Sequence[NodeId]) -> NodeId:
        out = body(g, nodes)
        shape = g.shape(out)
        if shape == (1, 1, 1, 1):
            return out
        weights = np.random.default_rng(seed).uniform(-1.0, 1.0, size=shape)
        return reduce_sum(g, mul(g, g.constant(weights), out))

    return _builder


def _composite(g, n):
    return tanh(g, add(g, mul(g, n[0], n[1]), n[0]))


def _conv(g, n):
    return conv2d(g, n[0], ConvSpec(2, 3, 3, 3, stride=2, padding=1), n[1], n[2])


def _deconv(g, n):
    return deconv2d(g, n[0], ConvSpec(2, 3, 3, 3, stride=1, padding=1), n[1], n[2])


def _lstm(g, n):
    spec = convlstm_spec(2, 3, 3)
    out, state = convlstm_step(g, n[0], ConvLSTMState(n[1], n[2]), spec, n[3], n[4])
    return add(g, out, state.cell)


def _split(g, n):
    a, b = split_channels(g, n[0], [1, 3])
    return concat_channels(g, tanh(g, b), a)


def _diff(g, n):
    return spatial_diff(g, spatial_diff(g, n[0], 3), 2)


def _clip_input(u: np.ndarray) -> np.ndarray:
    # inside values stay below 0.4, outside ones sit at +-0.75
    return np.where(np.abs(u) > 0.5, np.sign(u) * 0.75, 0.8 * u)


def _losses(g, n):
    return add(g, loss_p(g, [n[0]], [n[1]], 2.0), loss_gdl(g, [n[0]], [n[1]], 1.0))


def _adversarial(g, n):
    real = sigmoid(g, n[0])
    fake = sigmoid(g, n[1])
    return add(g, loss_gan(g, fake), loss_disc(g, real, fake))


def operator_cases(
    seed: int = 0,
) -> List[Tuple[str, OpBody, List[np.ndarray]]]:
    """``(name, body, inputs)`` for every checked operator."""
    rng = np.random.default_rng(seed)

    def u(*shape):
        return rng.uniform(-1.0, 1.0, size=shape)

    return [
        ("add/mul/tanh", _composite, [u(1, 2, 3, 3), u(1, 2, 3, 3)]),
        ("sigmoid", lambda g, n: sigmoid(g, n[0]), [u(2, 2, 3, 3)]),
        ("relu", lambda g, n: relu(g, n[0]), [_away_from_zero(u(2, 2, 3, 3))]),
        (
            "leaky_relu",
            lambda g, n: leaky_relu(g, n[0], 0.2),
            [_away_from_zero(u(2, 2, 3, 3))],
        ),
        ("abs", lambda g, n: absolute(g, n[0]), [_away_from_zero(u(1, 2, 3, 3))]),
        (
            "pow_abs",
            lambda g, n: pow_abs(g, n[0], 1.5),
            [_away_from_zero(u(1, 2, 3, 3))],
        ),
        ("log", lambda g, n: log(g, n[0]), [rng.uniform(0.5, 1.5, size=(1, 2, 3, 3))]),
        ("clip", lambda g, n: clip(g, n[0], -0.5, 0.5), [_clip_input(u(1, 2, 3, 3))]),
        ("split/concat", _split, [u(1, 4, 3, 3)]),
        ("spatial_diff", _diff, [u(1, 2, 4, 4)]),
        ("global_avg_pool", lambda g, n: global_avg_pool(g, n[0]), [u(2, 3, 4, 4)]),
        ("mean_batch", lambda g, n: mean_batch(g, tanh(g, n[0])), [u(3, 1, 1, 1)]),
        ("conv2d", _conv, [u(2, 2, 5, 5), u(3, 2, 3, 3), u(1, 3, 1, 1)]),
        ("deconv2d", _deconv, [u(2, 2, 4, 4), u(2, 3, 3, 3), u(1, 3, 1, 1)]),
        (
            "maxpool2x2",
            lambda g, n: maxpool2x2(g, n[0])[0],
            [rng.permutation(32).reshape(1, 2, 4, 4) / 32.0],
        ),
        ("unpool2x2_fixed", lambda g, n: unpool2x2_fixed(g, n[0]), [u(1, 2, 2, 2)]),
        (
            "convlstm_step",
            _lstm,
            [
                u(1, 2, 4, 4),
                u(1, 3, 4, 4),
                u(1, 3, 4, 4),
                0.5 * u(12, 5, 3, 3),
                u(1, 12, 1, 1),
            ],
        ),
        ("loss_p+loss_gdl", _losses, [u(1, 1, 4, 4), u(1, 1, 4, 4)]),
        ("loss_gan+loss_disc", _adversarial, [u(3, 1, 1, 1), u(3, 1, 1, 1)]),
    ]


def run_operator_checks(
    tolerance: float = 1e-4, seed: int = 0
) -> List[GradCheckReport]:
    """Check every operator in :func:`operator_cases`."""
    reports = []
    for index, (name, body, inputs) in enumerate(operator_cases(seed)):
        reports.append(
            grad_check(
                _weighted(body, seed + index),
                [Tensor(x) for x in inputs],
                step=CHECK_STEP,
                tolerance=tolerance,
                name=name,
            )
        )
    return reports


def model_loss_builder(
    params,
    frames: Sequence[Tensor],
    n_context: int,
    steps: int,
    loss: LossConfig,
) -> Callable[[Graph, Sequence[NodeId]], NodeId]:
    """
    Loss of a recursive ``steps``-frame prediction as a function of the
    generator parameters, in the form :func:`~mcnet.gradcheck.grad_check`
    expects.
    """
    names = list(params)

    def _builder(g: Graph, nodes: Sequence[NodeId]) -> NodeId:
        net = Generator(g, params, nodes=dict(zip(names, nodes)))
        preds = predict_sequence(net, frames, n_context, steps).frames
        return loss_img(g, frames[n_context : n_context + steps], preds, loss)

    return _builder


def run_model_check(
    tolerance: float = 1e-4,
    probes: int = MODEL_PROBES,
    seed: int = 0,
    steps: int = 1,
    config: Optional[ModelConfig] = None,
    refinements: int = MODEL_REFINEMENTS,
) -> GradCheckReport:
    """
    Check the full generator loss of a tiny configuration.

    Probes that needed a smaller step are counted in the report.

    :param probes: number of parameter elements probed
    :param steps: predicted frames; two or more checks gradients through time
    :param refinements: smaller-step retries per failing probe, 0 to disable
    """
    config = config or TINY_MODEL
    params = build_generator(config, seed)
    rng = np.random.default_rng([seed, 2])
    n_context = 2
    frames = [
        Tensor(rng.uniform(-1.0, 1.0, size=(2,) + config.frame_shape))
        for _ in range(n_context + steps)
    ]
    builder = model_loss_builder(params, frames, n_context, steps, LossConfig())
    return grad_check(
        builder,
        list(params.values()),
        step=CHECK_STEP,
        tolerance=tolerance,
        max_probes=probes,
        seed=seed,
        refinements=refinements,
        name=f"generator ({config.kind}, {steps} step)",
    )
