"""
Binary checkpoints.

Layout, little-endian::

    magic "MCN1" | version u32 | config hash 8 bytes | iteration u64 |
    tensor count u32 | seed u64 | generator Adam step u64 |
    discriminator Adam step u64 | failures u32 | loss EMA f64 | tensors...

A loss EMA of NaN stands for none. Each tensor is ``name length u16 | name
(utf-8) | shape 4 x u32 | float64 data``. Names are prefixed ``gen/``,
``disc/``, ``adam/gen/m/`` and so on.
"""

import logging
import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterator, Mapping, Optional, Tuple, Union

import numpy as np

from .__about__ import CHECKPOINT_FORMAT_VERSION
from .config import ModelConfig
from .errors import (
    CheckpointError,
    CheckpointMagicError,
    CheckpointTruncatedError,
    CheckpointVersionError,
    ConfigMismatchError,
)
from .model import DiscriminatorParams, GeneratorParams
from .optim import OptimizerState
from .tensor import Tensor

logger = logging.getLogger(__name__)

MAGIC = b"MCN1"
_HEADER = struct.Struct("<4sI8sQI")
_META = struct.Struct("<QQQId")
_NAME_LEN = struct.Struct("<H")
_SHAPE = struct.Struct("<4I")


@dataclass(frozen=True)
class Checkpoint:
    """Everything needed to resume training or run predictions."""

    generator: GeneratorParams
    discriminator: DiscriminatorParams
    gen_state: OptimizerState
    disc_state: OptimizerState
    iteration: int = 0
    seed: int = 0
    #: Moving average of the image loss, ``None`` before the first iteration
    ema: Optional[float] = None
    #: Consecutive skipped iterations so far
    failures: int = 0

    @property
    def config(self) -> ModelConfig:
        return self.generator.config

    def tensors(self) -> Dict[str, Tensor]:
        """Flatten into the named tensors that are written to disk."""
        out: Dict[str, Tensor] = {}
        for prefix, values in (
            ("gen/", self.generator),
            ("disc/", self.discriminator),
            ("adam/gen/m/", self.gen_state.first),
            ("adam/gen/v/", self.gen_state.second),
            ("adam/disc/m/", self.disc_state.first),
            ("adam/disc/v/", self.disc_state.second),
        ):
            out.update({prefix + name: t for name, t in values.items()})
        return out


def _meta(ckpt: Checkpoint) -> bytes:
    ema = math.nan if ckpt.ema is None else ckpt.ema
    try:
        return _META.pack(
            ckpt.seed,
            ckpt.gen_state.step,
            ckpt.disc_state.step,
            ckpt.failures,
            ema,
        )
    except struct.error as err:
        raise CheckpointError(f"cannot store checkpoint metadata: {err}") from err


def encode(ckpt: Checkpoint) -> bytes:
    """Serialize a checkpoint into bytes."""
    tensors = ckpt.tensors()
    parts = [
        _HEADER.pack(
            MAGIC,
            CHECKPOINT_FORMAT_VERSION,
            ckpt.config.config_hash(),
            ckpt.iteration,
            len(tensors),
        ),
        _meta(ckpt),
    ]
    for name, tensor in tensors.items():
        raw = name.encode("utf-8")
        parts.append(_NAME_LEN.pack(len(raw)))
        parts.append(raw)
        parts.append(_SHAPE.pack(*tensor.shape))
        parts.append(np.ascontiguousarray(tensor.data, dtype="<f8").tobytes())
    return b"".join(parts)


class _Reader:
    def __init__(self, data: bytes, source: str):
        self.data = data
        self.offset = 0
        self.source = source

    def take(self, size: int) -> bytes:
        end = self.offset + size
        if end > len(self.data):
            raise CheckpointTruncatedError(
                f"{self.source}: truncated at byte {len(self.data)}, "
                f"needed {end}"
            )
        chunk = self.data[self.offset : end]
        self.offset = end
        return chunk

    def unpack(self, fmt: struct.Struct) -> Tuple:
        return fmt.unpack(self.take(fmt.size))


def _tensors(reader: _Reader, count: int) -> Iterator[Tuple[str, Tensor]]:
    for _ in range(count):
        (length,) = reader.unpack(_NAME_LEN)
        name = reader.take(length).decode("utf-8")
        shape = reader.unpack(_SHAPE)
        raw = reader.take(8 * int(np.prod(shape)))
        yield name, Tensor(np.frombuffer(raw, dtype="<f8").reshape(shape))


def _group(tensors: Mapping[str, Tensor], prefix: str) -> Dict[str, Tensor]:
    return {
        name[len(prefix) :]: t for name, t in tensors.items() if name.startswith(prefix)
    }


def decode(
    data: bytes, config: ModelConfig, source: str = "<checkpoint>"
) -> Checkpoint:
    """
    Deserialize a checkpoint written for ``config``.

    :raises CheckpointMagicError: if the magic bytes are wrong
    :raises CheckpointVersionError: for an unknown format version
    :raises ConfigMismatchError: if the file was written for another
        architecture
    :raises CheckpointTruncatedError: if the data ends early
    :raises CheckpointError: if Adam moments do not match their parameters
    """
    if data[:4] != MAGIC:
        raise CheckpointMagicError(f"{source}: not an mcnet checkpoint (bad magic)")
    reader = _Reader(data, source)
    _, version, digest, iteration, count = reader.unpack(_HEADER)
    if version != CHECKPOINT_FORMAT_VERSION:
        raise CheckpointVersionError(
            f"{source}: format version {version} is not supported "
            f"(expected {CHECKPOINT_FORMAT_VERSION})"
        )
    if digest != config.config_hash():
        raise ConfigMismatchError(
            f"{source}: written for model config {digest.hex()}, "
            f"current config is {config.config_hash().hex()}"
        )
    seed, gen_step, disc_step, failures, ema = reader.unpack(_META)
    tensors = dict(_tensors(reader, count))
    if reader.offset != len(data):
        raise CheckpointError(f"{source}: {len(data) - reader.offset} trailing bytes")

    disc = _group(tensors, "disc/")
    if "disc.0.weight" not in disc:
        raise CheckpointError(f"{source}: no discriminator tensors")
    n_frames = disc["disc.0.weight"].shape[1] // config.channels
    try:
        generator = GeneratorParams(config, _group(tensors, "gen/"))
        discriminator = DiscriminatorParams(config, n_frames, disc)
    except ValueError as err:
        raise CheckpointError(f"{source}: {err}") from err
    gen_state = OptimizerState(
        _group(tensors, "adam/gen/m/"), _group(tensors, "adam/gen/v/"), gen_step
    )
    disc_state = OptimizerState(
        _group(tensors, "adam/disc/m/"), _group(tensors, "adam/disc/v/"), disc_step
    )
    for label, state, params in (
        ("generator", gen_state, generator),
        ("discriminator", disc_state, discriminator),
    ):
        if not state.matches(params):
            raise CheckpointError(
                f"{source}: {label} Adam moments do not match its parameters"
            )
    return Checkpoint(
        generator=generator,
        discriminator=discriminator,
        gen_state=gen_state,
        disc_state=disc_state,
        iteration=iteration,
        seed=seed,
        ema=None if math.isnan(ema) else ema,
        failures=failures,
    )


def save_checkpoint(ckpt: Checkpoint, path: Union[str, Path]) -> Path:
    """Write ``ckpt`` to ``path``, creating parent directories."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode(ckpt))
    logger.debug("wrote checkpoint %s (iteration %d)", path, ckpt.iteration)
    return path


def load_checkpoint(
    path: Union[str, Path], config: ModelConfig, source: Optional[str] = None
) -> Checkpoint:
    """
    Read a checkpoint written for ``config``.

    See :func:`decode` for the errors raised on bad content.
    """
    path = Path(path)
    return decode(path.read_bytes(), config, source or str(path))
