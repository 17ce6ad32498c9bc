"""
Binary PGM (P5) frames and clip directories.

A clip directory holds ``frame_0000.pgm``, ``frame_0001.pgm``, ... with
maxval 255 and a ``clip.meta`` text file of ``key = value`` lines.
"""

import logging
import re
from pathlib import Path
from typing import Dict, List, Union

import numpy as np

from .video import RAW01, VideoClip, denormalize

logger = logging.getLogger(__name__)

MAXVAL = 255
FRAME_PATTERN = "frame_%04d.pgm"
META_NAME = "clip.meta"

_TOKEN = re.compile(rb"(?:\s|#[^\n]*\n)*(\S+)")


def quantize(image: np.ndarray) -> np.ndarray:
    """
    Map values in [0, 1] to bytes.

    >>> quantize(np.array([0.0, 0.5, 1.0])).tolist()
    [0, 128, 255]
    """
    levels = np.floor(np.asarray(image) * MAXVAL + 0.5)
    return np.clip(levels, 0, MAXVAL).astype(np.uint8)


def write_pgm(path: Union[str, Path], image: np.ndarray) -> None:
    """
    Write a 2-D image with values in [0, 1] as binary PGM.

    :raises ValueError: if the image is not 2-D
    """
    image = np.asarray(image)
    if image.ndim != 2:
        raise ValueError(f"PGM images are 2-D, got shape {image.shape}")
    h, w = image.shape
    header = b"P5\n%d %d\n%d\n" % (w, h, MAXVAL)
    Path(path).write_bytes(header + quantize(image).tobytes())


def read_pgm(path: Union[str, Path]) -> np.ndarray:
    """
    Read a binary PGM into floats in [0, 1].

    Comments in the header are skipped. Both 8-bit and 16-bit maxvals are
    accepted.

    :raises ValueError: for anything that is not a well-formed P5 file
    """
    data = Path(path).read_bytes()
    fields = []
    offset = 0
    for _ in range(4):
        match = _TOKEN.match(data, offset)
        if match is None:
            raise ValueError(f"{path}: truncated PGM header")
        fields.append(match.group(1))
        offset = match.end()
    if fields[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM (magic {fields[0]!r})")
    try:
        width, height, maxval = (int(f) for f in fields[1:])
    except ValueError:
        raise ValueError(f"{path}: malformed PGM header {fields[1:]!r}")
    if not 0 < maxval < 65536:
        raise ValueError(f"{path}: maxval {maxval} out of range")
    offset += 1  # single whitespace byte before the raster
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    count = width * height
    if len(data) - offset < count * dtype.itemsize:
        raise ValueError(f"{path}: raster is shorter than {width}x{height}")
    raster = np.frombuffer(data, dtype=dtype, count=count, offset=offset)
    return raster.reshape(height, width).astype(np.float64) / maxval


def save_clip(clip: VideoClip, directory: Union[str, Path]) -> Path:
    """
    Export a clip as PGM frames plus ``clip.meta``.

    Normalized clips are denormalized first. Only single-channel clips can
    be exported.
    """
    if clip.value_range != RAW01:
        clip = denormalize(clip)
    c, h, w = clip.frame_shape
    if c != 1:
        raise ValueError(f"PGM export needs single-channel frames, got {c} channels")
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for t, frame in enumerate(clip):
        write_pgm(directory / (FRAME_PATTERN % t), frame.data[0, 0])
    meta = dict(clip.descriptor)
    meta.update(length=str(len(clip)), height=str(h), width=str(w))
    text = "".join(f"{key} = {value}\n" for key, value in sorted(meta.items()))
    (directory / META_NAME).write_text(text, encoding="utf-8")
    logger.debug("saved %d frames to %s", len(clip), directory)
    return directory


def read_meta(directory: Union[str, Path]) -> Dict[str, str]:
    """The ``key = value`` pairs of a clip directory's meta file."""
    meta = {}
    text = (Path(directory) / META_NAME).read_text(encoding="utf-8")
    for line in text.splitlines():
        if "=" in line:
            key, value = line.split("=", 1)
            meta[key.strip()] = value.strip()
    return meta


def load_clip(directory: Union[str, Path]) -> VideoClip:
    """
    Import a clip directory as a raw clip.

    Frames are read in name order; the meta file is optional.

    :raises FileNotFoundError: if the directory holds no frames
    """
    directory = Path(directory)
    paths = sorted(directory.glob("frame_*.pgm"))
    if not paths:
        raise FileNotFoundError(f"no frame_*.pgm files in {directory}")
    meta = read_meta(directory) if (directory / META_NAME).exists() else {}
    frames = [read_pgm(p)[None] for p in paths]
    return VideoClip(frames, RAW01, meta)


def list_clip_dirs(root: Union[str, Path]) -> List[Path]:
    """
    Clip directories below ``root`` in sorted order.

    ``root`` itself counts if it directly holds frames.
    """
    root = Path(root)
    if not root.is_dir():
        raise FileNotFoundError(f"data directory {root} does not exist")
    if any(root.glob("frame_*.pgm")):
        return [root]
    return sorted(
        p for p in root.iterdir() if p.is_dir() and any(p.glob("frame_*.pgm"))
    )


def load_clips(root: Union[str, Path]) -> List[VideoClip]:
    """Every clip below ``root``."""
    return [load_clip(p) for p in list_clip_dirs(root)]
