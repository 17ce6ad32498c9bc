"""
Procedural video clips.

Scenes are rendered with integer object positions so every frame has an
analytic ground truth. Positions are ``(row, col)`` and velocities
``(d_row, d_col)`` in pixels per frame.

>>> clip = generate_clip(SceneSpec(velocity=(0, 1), start=(0, 0)), 3)
>>> len(clip), clip.value_range
(3, 'raw01')
>>> bool(np.array_equal(np.roll(clip.array()[0], 1, axis=-1), clip.array()[1]))
True
"""

import math
from dataclasses import dataclass
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .config import SCENE_KINDS, DataConfig
from .errors import SceneError
from .tensor import Tensor

#: Range marker of frames with values in [0, 1]
RAW01 = "raw01"
#: Range marker of frames with values in [-1, 1]
NORMED11 = "normed11"
VALUE_RANGES = (RAW01, NORMED11)


@dataclass(frozen=True)
class SceneSpec:
    """Parameters of one synthetic scene."""

    kind: str = "translating-square"
    height: int = 32
    width: int = 32
    channels: int = 1
    #: side length of the square (diameter of the ball)
    size: int = 8
    velocity: Tuple[int, int] = (1, 0)
    background: float = 0.0
    foreground: float = 1.0
    #: whole-frame shift per frame, a camera-motion surrogate
    drift: Tuple[int, int] = (0, 0)
    #: strength of the random background pattern that makes drift visible
    texture: float = 0.0
    seed: int = 0
    #: top-left corner at t = 0; drawn from the seed if None
    start: Optional[Tuple[int, int]] = None
    amplitude: int = 4
    period: int = 8

    def __post_init__(self):
        if self.kind not in SCENE_KINDS:
            raise SceneError(
                f"unknown scene kind {self.kind!r}, expected one of {SCENE_KINDS}"
            )
        if min(self.height, self.width, self.channels, self.size) < 1:
            raise SceneError("frame size, channels and object size must be positive")
        if self.size > min(self.height, self.width):
            raise SceneError(
                f"object of size {self.size} does not fit a "
                f"{self.height}x{self.width} frame"
            )
        for name in ("background", "foreground"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise SceneError(f"{name} must lie in [0, 1], got {value}")
        if self.texture < 0 or self.background + self.texture > 1.0:
            raise SceneError(
                f"background + texture must stay within [0, 1], got "
                f"{self.background} + {self.texture}"
            )
        if self.period < 1 or self.amplitude < 0:
            raise SceneError("period must be positive and amplitude non-negative")
        if self.start is not None:
            row, col = self.start
            inside = 0 <= row <= self.height - self.size
            inside = inside and 0 <= col <= self.width - self.size
            if not inside:
                raise SceneError(
                    f"start {self.start} puts the object outside the frame"
                )

    @property
    def descriptor(self) -> Dict[str, str]:
        """Key facts recorded alongside an exported clip."""
        return {"kind": self.kind, "seed": str(self.seed)}


class VideoClip:
    """
    An ordered sequence of equally shaped frames.

    Each frame is a :class:`~mcnet.tensor.Tensor` of shape ``(1, c, h, w)``.

    :param frames: the frames, or an array of shape ``(t, c, h, w)``
    :param value_range: :data:`RAW01` or :data:`NORMED11`
    :param descriptor: free-form facts about where the clip came from
    """

    __slots__ = ("_frames", "_value_range", "_descriptor")

    def __init__(
        self,
        frames,
        value_range: str = RAW01,
        descriptor: Optional[Mapping[str, str]] = None,
    ):
        if value_range not in VALUE_RANGES:
            raise ValueError(
                f"value_range must be one of {VALUE_RANGES}, got {value_range!r}"
            )
        tensors = tuple(
            f if isinstance(f, Tensor) else Tensor(np.asarray(f)[None]) for f in frames
        )
        if not tensors:
            raise ValueError("a clip needs at least one frame")
        shape = tensors[0].shape
        if shape[0] != 1:
            raise ValueError(f"clip frames must have batch size 1, got {shape}")
        for t in tensors[1:]:
            if t.shape != shape:
                raise ValueError(f"frame shapes differ: {shape} vs {t.shape}")
        low = 0.0 if value_range == RAW01 else -1.0
        for t in tensors:
            if t.data.min() < low or t.data.max() > 1.0:
                raise ValueError(f"frame values outside the {value_range} range")
        self._frames = tensors
        self._value_range = value_range
        self._descriptor = dict(descriptor or {})

    @property
    def frames(self) -> Tuple[Tensor, ...]:
        """The frames (read-only)."""
        return self._frames

    @frames.setter
    def frames(self, value):
        raise AttributeError("attribute 'frames' is readonly")

    @property
    def value_range(self) -> str:
        """:data:`RAW01` or :data:`NORMED11` (read-only)."""
        return self._value_range

    @value_range.setter
    def value_range(self, value):
        raise AttributeError("attribute 'value_range' is readonly")

    @property
    def descriptor(self) -> Dict[str, str]:
        """A copy of the descriptor."""
        return dict(self._descriptor)

    @property
    def frame_shape(self) -> Tuple[int, int, int]:
        """``(c, h, w)`` of every frame."""
        return self._frames[0].shape[1:]  # type: ignore

    def __len__(self) -> int:
        return len(self._frames)

    def __getitem__(self, index):
        return self._frames[index]

    def __iter__(self):
        return iter(self._frames)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, VideoClip):
            return NotImplemented
        return self._value_range == other._value_range and self._frames == other._frames

    def __repr__(self) -> str:
        return "%s(length=%d, frame_shape=%r, value_range=%r)" % (
            type(self).__name__,
            len(self),
            self.frame_shape,
            self._value_range,
        )

    def array(self) -> np.ndarray:
        """All frames stacked into a writable ``(t, c, h, w)`` array."""
        return np.stack([f.data[0] for f in self._frames])

    def window(self, start: int, length: int) -> "VideoClip":
        """The sub-clip of ``length`` frames starting at ``start``."""
        if start < 0 or length < 1 or start + length > len(self):
            raise ValueError(
                f"window [{start}, {start + length}) outside a clip of {len(self)}"
            )
        frames = self._frames[start : start + length]
        return VideoClip(frames, self._value_range, self._descriptor)


def _reflect(position: int, span: int) -> int:
    if span == 0:
        return 0
    m = position % (2 * span)
    return m if m <= span else 2 * span - m


def _square(spec: SceneSpec) -> np.ndarray:
    return np.ones((spec.size, spec.size))


def _disk(spec: SceneSpec) -> np.ndarray:
    r = (spec.size - 1) / 2.0
    yy, xx = np.mgrid[: spec.size, : spec.size]
    return ((yy - r) ** 2 + (xx - r) ** 2 <= r * r + 0.5).astype(np.float64)


def _paint(
    frame: np.ndarray, mask: np.ndarray, pos: Tuple[int, int], value: float
) -> None:
    """Paint ``mask`` at ``pos`` with wrap-around."""
    h, w = frame.shape
    rows = (pos[0] + np.arange(mask.shape[0])) % h
    cols = (pos[1] + np.arange(mask.shape[1])) % w
    region = frame[np.ix_(rows, cols)]
    frame[np.ix_(rows, cols)] = np.where(mask > 0, value, region)


def _positions(spec: SceneSpec, rng: np.random.Generator, t: int):
    """Top-left corners of every object at time ``t``."""
    h, w, s = spec.height, spec.width, spec.size
    start = spec.start
    if start is None:
        start = (int(rng.integers(0, h - s + 1)), int(rng.integers(0, w - s + 1)))
    vy, vx = spec.velocity
    if spec.kind == "translating-square":
        return [(start[0] + t * vy, start[1] + t * vx)]
    if spec.kind == "bouncing-ball":
        return [
            (_reflect(start[0] + t * vy, h - s), _reflect(start[1] + t * vx, w - s))
        ]
    if spec.kind == "two-object":
        other = (int(rng.integers(0, h - s + 1)), int(rng.integers(0, w - s + 1)))
        return [
            (start[0] + t * vy, start[1] + t * vx),
            (other[0] - t * vx, other[1] + t * vy),
        ]
    offset = int(round(spec.amplitude * math.sin(2.0 * math.pi * t / spec.period)))
    return [(start[0] + offset, start[1] + t * vx)]


def render_frame(spec: SceneSpec, t: int) -> np.ndarray:
    """Frame ``t`` of the scene as a ``(c, h, w)`` array in [0, 1]."""
    rng = np.random.default_rng(spec.seed)
    positions = _positions(spec, rng, t)
    frame = np.full((spec.height, spec.width), spec.background)
    if spec.texture > 0:
        pattern = rng.integers(0, 4, size=frame.shape) / 4.0
        frame = frame + spec.texture * pattern
    if spec.kind == "bouncing-ball":
        _paint(frame, _disk(spec), positions[0], spec.foreground)
    elif spec.kind == "two-object":
        _paint(frame, _square(spec), positions[0], spec.foreground)
        second = 0.75 * spec.foreground + 0.25 * spec.background
        _paint(frame, _disk(spec), positions[1], second)
    else:
        _paint(frame, _square(spec), positions[0], spec.foreground)
    if spec.drift != (0, 0):
        frame = np.roll(frame, (t * spec.drift[0], t * spec.drift[1]), axis=(0, 1))
    return np.repeat(frame[None], spec.channels, axis=0)


def generate_clip(spec: SceneSpec, length: int) -> VideoClip:
    """
    Render ``length`` frames of a scene.

    The result depends only on ``(spec, length)``.

    :raises ValueError: if ``length < 1``
    """
    if length < 1:
        raise ValueError(f"length must be at least 1, got {length}")
    frames = [render_frame(spec, t) for t in range(length)]
    return VideoClip(frames, RAW01, spec.descriptor)


def scene_specs(cfg: DataConfig) -> List[SceneSpec]:
    """One seeded scene per clip of a dataset."""
    specs = []
    for index in range(cfg.count):
        rng = np.random.default_rng([cfg.seed, index])
        velocity = (0, 0)
        while cfg.max_speed > 0 and velocity == (0, 0):
            draw = rng.integers(-cfg.max_speed, cfg.max_speed + 1, size=2)
            velocity = tuple(int(v) for v in draw)
        specs.append(
            SceneSpec(
                kind=cfg.kind,
                height=cfg.height,
                width=cfg.width,
                channels=cfg.channels,
                size=cfg.object_size,
                velocity=velocity,  # type: ignore
                background=cfg.background,
                foreground=cfg.foreground,
                drift=tuple(cfg.drift),  # type: ignore
                texture=cfg.texture,
                seed=int(rng.integers(0, 2**31 - 1)),
            )
        )
    return specs


def generate_dataset(cfg: DataConfig) -> List[VideoClip]:
    """All clips of a synthetic dataset."""
    return [generate_clip(spec, cfg.length) for spec in scene_specs(cfg)]


def normalize(clip: VideoClip) -> VideoClip:
    """
    Map a raw clip from [0, 1] to [-1, 1] with ``x -> 2x - 1``.

    :raises ValueError: if the clip is already normalized
    """
    if clip.value_range != RAW01:
        raise ValueError("clip is already normalized")
    frames = [Tensor(2.0 * f.data - 1.0) for f in clip]
    return VideoClip(frames, NORMED11, clip.descriptor)


def denormalize(clip: VideoClip) -> VideoClip:
    """
    Inverse of :func:`normalize`.

    :raises ValueError: if the clip is not normalized
    """
    if clip.value_range != NORMED11:
        raise ValueError("clip is not normalized")
    frames = [Tensor((f.data + 1.0) / 2.0) for f in clip]
    return VideoClip(frames, RAW01, clip.descriptor)


def difference_frames(clip: VideoClip) -> List[Tensor]:
    """
    ``frame[k + 1] - frame[k]`` for every consecutive pair.

    :raises ValueError: for a raw clip or one shorter than two frames
    """
    if clip.value_range != NORMED11:
        raise ValueError("difference frames need a normalized clip")
    if len(clip) < 2:
        raise ValueError(f"need at least 2 frames, got {len(clip)}")
    return [Tensor(b.data - a.data) for a, b in zip(clip[:-1], clip[1:])]


def stack_batch(
    clips: Sequence[VideoClip], start: Sequence[int], length: int
) -> List[Tensor]:
    """
    Batch equally long windows of several clips, one tensor per time step.

    :return: ``length`` tensors of shape ``(len(clips), c, h, w)``
    """
    return [
        Tensor(np.concatenate([clip[s + t].data for clip, s in zip(clips, start)]))
        for t in range(length)
    ]
