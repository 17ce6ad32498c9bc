"""
Generator and discriminator networks.

The generator decomposes a clip into motion and content. A motion encoder
(conv stack plus ConvLSTM) observes difference frames, a content encoder
(VGG-style conv stack) observes the last frame, combination layers fuse
the two top features, and a mirrored deconvolution decoder turns them back
into a frame. Pre-pooling activations of both encoders feed per-scale
residual blocks that are added after each unpooling step.

The ``convlstm`` kind is the single-pathway baseline: a widened motion
encoder on raw frames, residuals from its own skips, and the same decoder.

Parameters are named by component, scale and layer, e.g.
``content.1.0.weight`` or ``decoder.2.1.bias``.
"""

import dataclasses
import functools
import logging
from dataclasses import dataclass
from typing import Dict, List, Mapping, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from ._types import NodeId, Shape4
from .autodiff import (
    Graph,
    Operand,
    add,
    concat_channels,
    concat_many,
    global_avg_pool,
    leaky_relu,
    relu,
    sigmoid,
    sub,
    tanh,
)
from .config import ModelConfig
from .errors import ShapeError
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
from .params import ParameterSet, glorot_uniform
from .tensor import Tensor

logger = logging.getLogger(__name__)

#: Relative parameter-count gap the baseline width search aims to stay within
BASELINE_COUNT_TOLERANCE = 0.10

#: Width multipliers tried for the baseline encoder
BASELINE_FACTORS = tuple(round(1.0 + 0.01 * i, 2) for i in range(300))


@dataclass(frozen=True)
class Layer:
    """One convolution (or transposed convolution) with bias."""

    name: str
    conv: ConvSpec
    transposed: bool = False

    @property
    def weight_shape(self) -> Shape4:
        if self.transposed:
            return self.conv.deconv_weight_shape
        return self.conv.weight_shape

    def shapes(self) -> Dict[str, Shape4]:
        return {
            f"{self.name}.weight": self.weight_shape,
            f"{self.name}.bias": self.conv.bias_shape,
        }


@dataclass(frozen=True)
class GeneratorLayout:
    """All generator layers of one configuration, grouped by component."""

    config: ModelConfig
    content: Tuple[Tuple[Layer, ...], ...]
    motion: Tuple[Layer, ...]
    lstm: Layer
    residual: Tuple[Tuple[Layer, ...], ...]
    comb: Tuple[Layer, ...]
    decoder: Tuple[Tuple[Layer, ...], ...]

    def layers(self) -> List[Layer]:
        """Every layer in initialization order."""
        out: List[Layer] = []
        for block in self.content:
            out.extend(block)
        out.extend(self.motion)
        out.append(self.lstm)
        for block in self.residual:
            out.extend(block)
        out.extend(self.comb)
        for block in self.decoder:
            out.extend(block)
        return out

    def shapes(self) -> Dict[str, Shape4]:
        shapes: Dict[str, Shape4] = {}
        for layer in self.layers():
            shapes.update(layer.shapes())
        return shapes

    def count(self) -> int:
        """Number of scalar parameters."""
        return sum(int(np.prod(s)) for s in self.shapes().values())

    @property
    def hidden(self) -> int:
        """Channels of the ConvLSTM state."""
        return self.lstm.conv.out_channels // 4


def _layout(config: ModelConfig, encoder_widths: Tuple[int, ...]) -> GeneratorLayout:
    c = config.channels
    scales = range(config.scales)
    mcnet = config.kind == "mcnet"

    motion = []
    prev = c
    for level in scales:
        k = config.motion_kernels[level]
        spec = ConvSpec.same(prev, encoder_widths[level], k)
        motion.append(Layer(f"motion.{level}", spec))
        prev = encoder_widths[level]
    hidden = encoder_widths[-1]
    lstm = Layer("lstm", convlstm_spec(hidden, hidden, config.lstm_kernel))

    content: List[Tuple[Layer, ...]] = []
    comb: List[Layer] = []
    if mcnet:
        prev = c
        for level in scales:
            width = config.content_widths[level]
            block = []
            for k in range(config.content_convs[level]):
                spec = ConvSpec.same(prev, width, 3)
                block.append(Layer(f"content.{level}.{k}", spec))
                prev = width
            content.append(tuple(block))
        prev = hidden + config.content_widths[-1]
        for k, width in enumerate(config.comb_widths):
            comb.append(Layer(f"comb.{k}", ConvSpec.same(prev, width, 3)))
            prev = width
        mirror = config.content_widths
        counts = config.content_convs
        skip_widths = [cw + mw for cw, mw in zip(config.content_widths, encoder_widths)]
    else:
        mirror = encoder_widths
        counts = (1,) * config.scales
        skip_widths = list(encoder_widths)

    residual: List[Tuple[Layer, ...]] = []
    if config.residual:
        for level in scales:
            block = []
            prev = skip_widths[level]
            for k in range(config.residual_convs):
                spec = ConvSpec.same(prev, mirror[level], 3)
                block.append(Layer(f"residual.{level}.{k}", spec))
                prev = mirror[level]
            residual.append(tuple(block))

    decoder: List[Tuple[Layer, ...]] = []
    for level in scales:
        out = mirror[level - 1] if level > 0 else c
        block = []
        for k in range(counts[level]):
            last = k == counts[level] - 1
            spec = ConvSpec.same(mirror[level], out if last else mirror[level], 3)
            block.append(Layer(f"decoder.{level}.{k}", spec, transposed=True))
        decoder.append(tuple(block))

    return GeneratorLayout(
        config=config,
        content=tuple(content),
        motion=tuple(motion),
        lstm=lstm,
        residual=tuple(residual),
        comb=tuple(comb),
        decoder=tuple(decoder),
    )


def baseline_widths(config: ModelConfig) -> Tuple[int, ...]:
    """
    Encoder widths of the ConvLSTM baseline.

    The motion widths are multiplied by the factor from
    :data:`BASELINE_FACTORS` whose parameter count lands closest to the
    MCnet generator of the same configuration.
    """
    reference = dataclasses.replace(config, kind="mcnet")
    target = _layout(reference, config.motion_widths).count()
    baseline = dataclasses.replace(config, kind="convlstm")
    best: Tuple[int, ...] = config.motion_widths
    best_gap = None
    for factor in BASELINE_FACTORS:
        widths = tuple(max(1, int(round(w * factor))) for w in config.motion_widths)
        gap = abs(_layout(baseline, widths).count() - target)
        if best_gap is None or gap < best_gap:
            best, best_gap = widths, gap
    return best


@functools.lru_cache(maxsize=32)
def generator_layout(config: ModelConfig) -> GeneratorLayout:
    """The layer layout for ``config``, dispatching on ``config.kind``."""
    if config.kind == "convlstm":
        return _layout(config, baseline_widths(config))
    return _layout(config, config.motion_widths)


class GeneratorParams(ParameterSet):
    """Generator parameters together with the configuration they belong to."""

    __slots__ = ("_config",)

    def __init__(self, config: ModelConfig, values):
        self._config = config
        super().__init__(values)

    def _expected_shapes(self):
        return generator_layout(self._config).shapes()

    def _rebuild(self, values):
        return GeneratorParams(self._config, values)

    @property
    def config(self) -> ModelConfig:
        """The model configuration (read-only)."""
        return self._config

    @config.setter
    def config(self, value):
        raise AttributeError("attribute 'config' is readonly")


def discriminator_layers(config: ModelConfig, n_frames: int) -> List[Layer]:
    """Strided conv stack plus the 1x1 head for ``n_frames`` stacked frames."""
    layers = []
    prev = n_frames * config.channels
    for k, width in enumerate(config.disc_widths):
        spec = ConvSpec(prev, width, 3, 3, stride=2, padding=1)
        layers.append(Layer(f"disc.{k}", spec))
        prev = width
    layers.append(Layer("disc.head", ConvSpec(prev, 1, 1, 1)))
    return layers


class DiscriminatorParams(ParameterSet):
    """Discriminator parameters for sequences of ``n_frames`` frames."""

    __slots__ = ("_config", "_n_frames")

    def __init__(self, config: ModelConfig, n_frames: int, values):
        if n_frames < 1:
            raise ValueError(f"n_frames must be positive, got {n_frames}")
        self._config = config
        self._n_frames = n_frames
        super().__init__(values)

    def _expected_shapes(self):
        shapes: Dict[str, Shape4] = {}
        for layer in discriminator_layers(self._config, self._n_frames):
            shapes.update(layer.shapes())
        return shapes

    def _rebuild(self, values):
        return DiscriminatorParams(self._config, self._n_frames, values)

    @property
    def config(self) -> ModelConfig:
        """The model configuration (read-only)."""
        return self._config

    @property
    def n_frames(self) -> int:
        """Number of depth-stacked frames the discriminator reads (read-only)."""
        return self._n_frames


def _initialize(layers: Sequence[Layer], rng: np.random.Generator) -> Dict[str, Tensor]:
    values: Dict[str, Tensor] = {}
    for layer in layers:
        values[f"{layer.name}.weight"] = glorot_uniform(
            rng, layer.weight_shape, layer.conv.fan_in, layer.conv.fan_out
        )
        values[f"{layer.name}.bias"] = Tensor.zeros(layer.conv.bias_shape)
    return values


def build_generator(config: ModelConfig, seed: Optional[int] = None) -> GeneratorParams:
    """
    Freshly initialized generator parameters.

    Weights are seeded Glorot-uniform, biases are zero.

    :param seed: overrides ``config.seed``
    """
    seed = config.seed if seed is None else seed
    layout = generator_layout(config)
    rng = np.random.default_rng([seed, 0])
    params = GeneratorParams(config, _initialize(layout.layers(), rng))
    logger.debug("built %s generator with %d parameters", config.kind, params.count())
    return params


def build_convlstm_baseline(
    config: ModelConfig, seed: Optional[int] = None
) -> GeneratorParams:
    """
    The single-pathway ConvLSTM generator for ``config``.

    >>> base = build_convlstm_baseline(ModelConfig())
    >>> ref = generator_layout(ModelConfig()).count()
    >>> abs(base.count() - ref) / ref < BASELINE_COUNT_TOLERANCE
    True
    """
    return build_generator(dataclasses.replace(config, kind="convlstm"), seed)


def build_discriminator(
    config: ModelConfig, n_frames: int, seed: Optional[int] = None
) -> DiscriminatorParams:
    """Freshly initialized discriminator parameters for ``n_frames`` frames."""
    seed = config.seed if seed is None else seed
    rng = np.random.default_rng([seed, 1])
    layers = discriminator_layers(config, n_frames)
    return DiscriminatorParams(config, n_frames, _initialize(layers, rng))


class Network:
    """
    Parameters bound to a graph.

    :param nodes: existing leaves to use instead of binding ``params``; the
        gradient checker passes its own nodes this way
    """

    def __init__(
        self,
        g: Graph,
        params: ParameterSet,
        trainable: bool = True,
        nodes: Optional[Mapping[str, NodeId]] = None,
    ):
        self.graph = g
        self.params = params
        self.nodes = dict(nodes) if nodes is not None else params.bind(g, trainable)

    def apply(self, x: NodeId, layer: Layer) -> NodeId:
        """Run one layer, including its bias."""
        op = deconv2d if layer.transposed else conv2d
        return op(
            self.graph,
            x,
            layer.conv,
            self.nodes[f"{layer.name}.weight"],
            self.nodes[f"{layer.name}.bias"],
        )

    def gradients(self) -> Dict[str, np.ndarray]:
        """Accumulated gradient of every parameter; zeros where none flowed."""
        grads = {}
        for name, node in self.nodes.items():
            grad = self.graph.grad_array(node)
            grads[name] = np.zeros(self.params[name].shape) if grad is None else grad
        return grads


class Generator(Network):
    """Generator parameters bound to a graph."""

    params: GeneratorParams

    def __init__(
        self,
        g: Graph,
        params: GeneratorParams,
        trainable: bool = True,
        nodes: Optional[Mapping[str, NodeId]] = None,
    ):
        super().__init__(g, params, trainable, nodes)
        self.config = params.config
        self.layout = generator_layout(params.config)

    @property
    def is_baseline(self) -> bool:
        return self.config.kind == "convlstm"

    def frame(self, operand: Operand) -> NodeId:
        """Add a frame to the graph and check its shape."""
        node = self.graph.as_node(operand)
        shape = self.graph.shape(node)
        if shape[1:] != self.config.frame_shape:
            raise ShapeError(
                f"frame shape {shape[1:]} does not match the model's "
                f"{self.config.frame_shape}"
            )
        return node


class Discriminator(Network):
    """Discriminator parameters bound to a graph."""

    params: DiscriminatorParams

    def __init__(
        self,
        g: Graph,
        params: DiscriminatorParams,
        trainable: bool = True,
        nodes: Optional[Mapping[str, NodeId]] = None,
    ):
        super().__init__(g, params, trainable, nodes)
        self.config = params.config
        self.layers = discriminator_layers(params.config, params.n_frames)


class MotionFeatures(NamedTuple):
    """Output of :func:`encode_motion`."""

    hidden: NodeId
    state: ConvLSTMState
    skips: List[NodeId]


class Prediction(NamedTuple):
    """Output of :func:`predict_sequence`."""

    frames: List[NodeId]
    state: ConvLSTMState


def encode_motion(
    net: Generator,
    inputs: Sequence[Operand],
    state: Optional[ConvLSTMState] = None,
) -> MotionFeatures:
    """
    Run the motion encoder over a sequence of inputs.

    MCnet feeds difference frames, the baseline raw frames. The returned
    skips are the pre-pooling activations of the last input.

    :param net: the bound generator
    :param inputs: one or more frames of shape ``(n, c, h, w)``
    :param state: ConvLSTM state to continue from; zeros if None
    :raises ValueError: for an empty sequence
    :raises ShapeError: for a frame of the wrong shape
    """
    if not inputs:
        raise ValueError("encode_motion needs at least one input frame")
    g = net.graph
    hidden = None
    skips: List[NodeId] = []
    for operand in inputs:
        h = net.frame(operand)
        skips = []
        for layer in net.layout.motion:
            h = relu(g, net.apply(h, layer))
            skips.append(h)
            h, _ = maxpool2x2(g, h)
        if state is None:
            n, _, rows, cols = g.shape(h)
            state = ConvLSTMState.zeros(g, (n, net.layout.hidden, rows, cols))
        hidden, state = _lstm(net, h, state)
    return MotionFeatures(hidden, state, skips)


def _lstm(net: Generator, x: NodeId, state: ConvLSTMState):
    layer = net.layout.lstm
    return convlstm_step(
        net.graph,
        x,
        state,
        layer.conv,
        net.nodes["lstm.weight"],
        net.nodes["lstm.bias"],
    )


def encode_content(net: Generator, frame: Operand) -> Tuple[NodeId, List[NodeId]]:
    """
    Run the content encoder on the last observed frame.

    :return: the top feature ``s_t`` and the pre-pooling activation per scale
    :raises ShapeError: for a frame of the wrong shape
    :raises ValueError: for the baseline, which has no content encoder
    """
    if net.is_baseline:
        raise ValueError("the convlstm generator has no content encoder")
    g = net.graph
    h = net.frame(frame)
    skips = []
    for block in net.layout.content:
        for layer in block:
            h = relu(g, net.apply(h, layer))
        skips.append(h)
        h, _ = maxpool2x2(g, h)
    return h, skips


def fuse_and_decode(
    net: Generator,
    motion: NodeId,
    content: Optional[NodeId],
    motion_skips: Sequence[NodeId],
    content_skips: Optional[Sequence[NodeId]] = None,
) -> NodeId:
    """
    Combine motion and content features and decode the next frame.

    Each decoder stage unpools, adds the residual of its scale (when
    residuals are enabled) and runs its deconvolutions. The last layer uses
    ``tanh``, so every output lies in ``(-1, 1)``.

    :param motion: ConvLSTM output ``d_t``
    :param content: content feature ``s_t``; ignored by the baseline
    :param motion_skips: per-scale motion encoder activations
    :param content_skips: per-scale content encoder activations
    """
    g = net.graph
    scales = net.config.scales
    if len(motion_skips) != scales or (
        not net.is_baseline and (content_skips is None or len(content_skips) != scales)
    ):
        raise ShapeError(f"expected {scales} skip activations per encoder")

    if net.is_baseline:
        f = motion
    else:
        if content is None:
            raise ValueError("MCnet decoding needs the content feature")
        f = concat_channels(g, motion, content)
        for layer in net.layout.comb:
            f = relu(g, net.apply(f, layer))

    for level in reversed(range(scales)):
        f = unpool2x2_fixed(g, f)
        if net.config.residual:
            if net.is_baseline:
                r = motion_skips[level]
            else:
                skip = content_skips[level]
                r = concat_channels(g, skip, motion_skips[level])  # type: ignore
            block = net.layout.residual[level]
            for k, layer in enumerate(block):
                r = net.apply(r, layer)
                if k < len(block) - 1:
                    r = relu(g, r)
            f = add(g, f, r)
        block = net.layout.decoder[level]
        for k, layer in enumerate(block):
            f = net.apply(f, layer)
            if level == 0 and k == len(block) - 1:
                f = tanh(g, f)
            else:
                f = relu(g, f)
    return f


def predict_step(
    net: Generator,
    previous: Operand,
    current: Operand,
    state: ConvLSTMState,
) -> Tuple[NodeId, ConvLSTMState]:
    """
    One recursive prediction from the two latest frames.

    MCnet encodes ``current - previous`` as motion and ``current`` as
    content; the baseline only encodes ``current``.
    """
    g = net.graph
    cur = net.frame(current)
    if net.is_baseline:
        motion = encode_motion(net, [cur], state)
        out = fuse_and_decode(net, motion.hidden, None, motion.skips)
        return out, motion.state
    diff = sub(g, cur, net.frame(previous))
    motion = encode_motion(net, [diff], state)
    content, content_skips = encode_content(net, cur)
    out = fuse_and_decode(net, motion.hidden, content, motion.skips, content_skips)
    return out, motion.state


def predict_sequence(
    net: Generator, frames: Sequence[Operand], n_context: int, steps: int
) -> Prediction:
    """
    Observe ``n_context`` frames and predict ``steps`` frames recursively.

    The motion encoder warms up on the ``n_context - 1`` difference frames of
    the context (raw frames for the baseline). Every later step feeds the
    previous prediction back in. The ConvLSTM state persists across all
    steps and is returned so a caller can continue with
    :func:`predict_step`.

    :param frames: at least ``n_context`` frames of shape ``(n, c, h, w)``
    :raises ValueError: if ``n_context < 2``, ``steps < 1`` or too few frames
    """
    if n_context < 2:
        raise ValueError(f"n_context must be at least 2, got {n_context}")
    if steps < 1:
        raise ValueError(f"steps must be at least 1, got {steps}")
    if len(frames) < n_context:
        raise ValueError(f"need {n_context} context frames, got {len(frames)}")
    g = net.graph
    context = [net.frame(f) for f in frames[:n_context]]

    if net.is_baseline:
        warmup = context[:-1]
    else:
        warmup = [sub(g, context[t], context[t - 1]) for t in range(1, n_context - 1)]
    state = encode_motion(net, warmup).state if warmup else None
    if state is None:
        n, _, h, w = g.shape(context[0])
        top = 2**net.config.scales
        state = ConvLSTMState.zeros(g, (n, net.layout.hidden, h // top, w // top))

    out: List[NodeId] = []
    previous, current = context[-2], context[-1]
    for _ in range(steps):
        pred, state = predict_step(net, previous, current, state)
        out.append(pred)
        previous, current = current, pred
    return Prediction(out, state)


def predict_frames(
    params: GeneratorParams, frames: np.ndarray, n_context: int, steps: int
) -> np.ndarray:
    """
    Predict from a single clip held as an array.

    :param frames: normalized frames of shape ``(t, c, h, w)``
    :return: predictions of shape ``(steps, c, h, w)``
    """
    g = Graph()
    net = Generator(g, params, trainable=False)
    clip = [Tensor(frame[None]) for frame in np.asarray(frames)[:n_context]]
    pred = predict_sequence(net, clip, n_context, steps)
    return np.stack([g.array(node)[0] for node in pred.frames])


def discriminate(
    net: Discriminator, inputs: Sequence[Operand], candidates: Sequence[Operand]
) -> NodeId:
    """
    Probability that ``candidates`` truly continue ``inputs``.

    All frames are stacked along the channel axis and scored once per
    sequence.

    :return: node of shape ``(n, 1, 1, 1)`` with values in ``(0, 1)``
    :raises ShapeError: for mismatched batch or spatial sizes, or a frame
        count the discriminator was not built for
    """
    g = net.graph
    nodes = [g.as_node(x) for x in list(inputs) + list(candidates)]
    if not nodes:
        raise ValueError("discriminate needs at least one frame")
    x = concat_many(g, nodes)
    expected = net.params.n_frames * net.config.channels
    if g.shape(x)[1] != expected:
        raise ShapeError(
            f"discriminator expects {expected} stacked channels, got {g.shape(x)[1]}"
        )
    for layer in net.layers[:-1]:
        x = leaky_relu(g, net.apply(x, layer), net.config.disc_slope)
    x = global_avg_pool(g, x)
    return sigmoid(g, net.apply(x, net.layers[-1]))
