"""
Prediction quality metrics and reports.

Frames are compared in the raw ``[0, 1]`` range. PSNR is capped at
:data:`PSNR_CAP` for identical frames; SSIM uses uniform 8x8 windows with
stride 1.

>>> x = np.full((1, 8, 8), 0.25)
>>> psnr(x, x), ssim(x, x)
(100.0, 1.0)
>>> round(psnr(x, x + 0.5), 4)
6.0206
"""

import csv
import logging
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .model import GeneratorParams, predict_frames
from .video import VideoClip

logger = logging.getLogger(__name__)

PSNR_CAP = 100.0
SSIM_WINDOW = 8
SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2
#: Default cut-off of normalized motion magnitude for masked metrics
MASK_THRESHOLD = 0.2
DECILES = 10

STEP_HEADER = ("step", "psnr_mean", "ssim_mean", "n_clips", "masked")
DECILE_HEADER = ("decile",) + STEP_HEADER

#: ``(raw frames (t, c, h, w), n_context, steps) -> raw predictions (steps, c, h, w)``
Predictor = Callable[[np.ndarray, int, int], np.ndarray]


def _pair(target, pred) -> Tuple[np.ndarray, np.ndarray]:
    a = np.asarray(target, dtype=np.float64)
    b = np.asarray(pred, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"frame shapes differ: {a.shape} vs {b.shape}")
    return a, b


def psnr(target, pred) -> float:
    """
    Peak signal-to-noise ratio in dB for unit dynamic range.

    :raises ValueError: if the shapes differ
    """
    a, b = _pair(target, pred)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, float(10.0 * np.log10(1.0 / mse)))


def ssim(target, pred) -> float:
    """
    Mean structural similarity over all 8x8 windows and channels.

    Windows that are exactly constant in both images get a structure term
    of one, so equal constant images score exactly 1.

    :param target: ``(h, w)`` or ``(c, h, w)`` array in [0, 1]
    :param pred: array of the same shape
    :raises ValueError: if the shapes differ or a frame is smaller than
        the window
    """
    a, b = _pair(target, pred)
    if a.ndim == 2:
        a, b = a[None], b[None]
    if a.shape[-1] < SSIM_WINDOW or a.shape[-2] < SSIM_WINDOW:
        raise ValueError(
            f"frame {a.shape[-2:]} is smaller than the "
            f"{SSIM_WINDOW}x{SSIM_WINDOW} window"
        )
    wa = sliding_window_view(a, (SSIM_WINDOW, SSIM_WINDOW), axis=(-2, -1))
    wb = sliding_window_view(b, (SSIM_WINDOW, SSIM_WINDOW), axis=(-2, -1))
    ma = wa.mean(axis=(-2, -1))
    mb = wb.mean(axis=(-2, -1))
    da = wa - ma[..., None, None]
    db = wb - mb[..., None, None]
    va = (da * da).mean(axis=(-2, -1))
    vb = (db * db).mean(axis=(-2, -1))
    cov = (da * db).mean(axis=(-2, -1))
    flat = (wa.max(axis=(-2, -1)) == wa.min(axis=(-2, -1))) & (
        wb.max(axis=(-2, -1)) == wb.min(axis=(-2, -1))
    )
    va, vb, cov = (np.where(flat, 0.0, v) for v in (va, vb, cov))
    num = (2.0 * ma * mb + SSIM_C1) * (2.0 * cov + SSIM_C2)
    den = (ma * ma + mb * mb + SSIM_C1) * (va + vb + SSIM_C2)
    return float(np.mean(num / den))


def copy_last_baseline(frames, n_context: int, steps: int) -> np.ndarray:
    """
    Repeat the last observed frame ``steps`` times.

    :param frames: ``(t, c, h, w)`` array or a :class:`~mcnet.video.VideoClip`
    :raises ValueError: if the clip is shorter than ``n_context + steps``
    """
    array = frames.array() if isinstance(frames, VideoClip) else np.asarray(frames)
    if len(array) < n_context + steps:
        raise ValueError(
            f"clip of {len(array)} frames is shorter than {n_context} + {steps}"
        )
    return np.repeat(array[n_context - 1][None], steps, axis=0)


def model_predictor(params: GeneratorParams) -> Predictor:
    """Wrap a generator as a :data:`Predictor` working on raw frames."""

    def _predict(frames: np.ndarray, n_context: int, steps: int) -> np.ndarray:
        normed = 2.0 * np.asarray(frames) - 1.0
        out = predict_frames(params, normed, n_context, steps)
        return np.clip((out + 1.0) / 2.0, 0.0, 1.0)

    return _predict


@dataclass(frozen=True)
class MotionMask:
    """Pixels that count in masked metrics."""

    mask: np.ndarray
    threshold: float
    source: str = "frame-difference"

    @property
    def empty(self) -> bool:
        """True if no pixel is kept."""
        return not bool(self.mask.any())


def mask_from_magnitude(magnitude, threshold: float = MASK_THRESHOLD) -> MotionMask:
    """
    Keep pixels whose normalized magnitude is at least ``threshold``.

    Pixels without any motion are never kept.

    >>> mask_from_magnitude(np.array([[0.1, 0.3]])).mask.tolist()
    [[False, True]]
    """
    mag = np.asarray(magnitude, dtype=np.float64)
    return MotionMask((mag >= threshold) & (mag > 0), threshold)


def motion_mask(prev, cur, threshold: float = MASK_THRESHOLD) -> MotionMask:
    """
    Mask from the frame-difference magnitude ``|cur - prev|``.

    The magnitude is the channel maximum, normalized by its largest value;
    identical frames give an empty mask.
    """
    a, b = _pair(prev, cur)
    mag = np.abs(b - a)
    if mag.ndim == 3:
        mag = mag.max(axis=0)
    peak = float(mag.max()) if mag.size else 0.0
    if peak == 0.0:
        return MotionMask(np.zeros(mag.shape, dtype=bool), threshold)
    return mask_from_magnitude(mag / peak, threshold)


@dataclass(frozen=True)
class MaskedScore:
    psnr: float
    ssim: float
    #: True if the mask kept no pixel
    empty: bool


def masked_metrics(target, pred, mask: MotionMask) -> MaskedScore:
    """PSNR and SSIM after zeroing unmasked pixels in both images."""
    a, b = _pair(target, pred)
    keep = np.broadcast_to(mask.mask, a.shape)
    a = np.where(keep, a, 0.0)
    b = np.where(keep, b, 0.0)
    return MaskedScore(psnr(a, b), ssim(a, b), mask.empty)


@dataclass(frozen=True)
class ClipScores:
    """Per-step metrics of one clip."""

    psnr: Tuple[float, ...]
    ssim: Tuple[float, ...]
    masked_psnr: Tuple[float, ...] = ()
    masked_ssim: Tuple[float, ...] = ()
    #: mean L2 norm of consecutive target-frame differences
    motion: float = 0.0


def motion_norm(frames: np.ndarray, n_context: int, steps: int) -> float:
    """Average ``||x[k+1] - x[k]||_2`` over the predicted steps."""
    frames = np.asarray(frames)
    norms = [
        float(np.linalg.norm(frames[k] - frames[k - 1]))
        for k in range(n_context, n_context + steps)
    ]
    return float(np.mean(norms))


def score_clip(
    frames: np.ndarray,
    predictor: Predictor,
    n_context: int,
    steps: int,
    masked: bool = False,
    threshold: float = MASK_THRESHOLD,
) -> ClipScores:
    """Predict one raw clip and score every step."""
    frames = np.asarray(frames)
    if len(frames) < n_context + steps:
        raise ValueError(
            f"clip of {len(frames)} frames is shorter than {n_context} + {steps}"
        )
    preds = predictor(frames, n_context, steps)
    targets = frames[n_context : n_context + steps]
    p = tuple(psnr(t, x) for t, x in zip(targets, preds))
    s = tuple(ssim(t, x) for t, x in zip(targets, preds))
    mp: Tuple[float, ...] = ()
    ms: Tuple[float, ...] = ()
    if masked:
        scores = [
            masked_metrics(
                frames[n_context + k],
                preds[k],
                motion_mask(
                    frames[n_context + k - 1], frames[n_context + k], threshold
                ),
            )
            for k in range(steps)
        ]
        mp = tuple(sc.psnr for sc in scores)
        ms = tuple(sc.ssim for sc in scores)
    return ClipScores(p, s, mp, ms, motion_norm(frames, n_context, steps))


def evaluate(
    clips: Sequence[Union[VideoClip, np.ndarray]],
    predictor: Predictor,
    n_context: int,
    steps: int,
    masked: bool = False,
    threshold: float = MASK_THRESHOLD,
    workers: int = 1,
) -> List[ClipScores]:
    """
    Score every clip; results keep the clip order.

    :param workers: number of threads scoring clips concurrently
    """
    arrays = [c.array() if isinstance(c, VideoClip) else np.asarray(c) for c in clips]

    def _score(frames: np.ndarray) -> ClipScores:
        return score_clip(frames, predictor, n_context, steps, masked, threshold)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            scores = list(pool.map(_score, arrays))
    else:
        scores = [_score(a) for a in arrays]
    logger.info("scored %d clips over %d steps", len(scores), steps)
    return scores


@dataclass(frozen=True)
class MetricCurve:
    """Mean PSNR and SSIM per prediction step."""

    psnr: Tuple[float, ...]
    ssim: Tuple[float, ...]
    n_clips: int
    masked: bool = False

    @property
    def steps(self) -> range:
        """One-based step indices."""
        return range(1, len(self.psnr) + 1)

    def rows(self) -> List[Tuple]:
        return [
            (step, p, s, self.n_clips, int(self.masked))
            for step, p, s in zip(self.steps, self.psnr, self.ssim)
        ]


def metric_curve(scores: Sequence[ClipScores], masked: bool = False) -> MetricCurve:
    """Average clip scores step by step."""
    if not scores:
        raise ValueError("no clips to average")
    if masked:
        p = np.mean([s.masked_psnr for s in scores], axis=0)
        q = np.mean([s.masked_ssim for s in scores], axis=0)
    else:
        p = np.mean([s.psnr for s in scores], axis=0)
        q = np.mean([s.ssim for s in scores], axis=0)
    return MetricCurve(
        tuple(float(v) for v in p), tuple(float(v) for v in q), len(scores), masked
    )


def decile_groups(norms: Sequence[float]) -> List[List[int]]:
    """
    Split clip indices into ten groups of increasing motion.

    Groups differ in size by at most one; the lower groups take the
    remainder. Ties keep the input order. Fewer than ten clips fall back to
    a single group with a warning.

    >>> decile_groups(list(range(10, 0, -1)))[0]
    [9]
    """
    values = np.asarray(norms, dtype=np.float64)
    order = [int(i) for i in np.argsort(values, kind="stable")]
    if len(order) < DECILES:
        warnings.warn(
            f"fewer than 10 clips ({len(order)}); reporting a single group",
            UserWarning,
            stacklevel=2,
        )
        return [order]
    base, extra = divmod(len(order), DECILES)
    groups = []
    start = 0
    for d in range(DECILES):
        size = base + (1 if d < extra else 0)
        groups.append(order[start : start + size])
        start += size
    return groups


def decile_curves(
    scores: Sequence[ClipScores], masked: bool = False
) -> List[Tuple[int, MetricCurve]]:
    """Per-decile metric curves, decile 1 holding the least motion."""
    groups = decile_groups([s.motion for s in scores])
    return [
        (d, metric_curve([scores[i] for i in group], masked))
        for d, group in enumerate(groups, start=1)
    ]


def decile_report(
    clips: Sequence[Union[VideoClip, np.ndarray]],
    predictor: Predictor,
    n_context: int,
    steps: int,
    masked: bool = False,
    threshold: float = MASK_THRESHOLD,
    workers: int = 1,
) -> List[Tuple[int, MetricCurve]]:
    """Score ``clips`` and group the curves by motion decile."""
    scores = evaluate(clips, predictor, n_context, steps, masked, threshold, workers)
    return decile_curves(scores, masked)


def _fmt(value) -> str:
    return "%.6f" % value if isinstance(value, float) else str(value)


def _write(path: Union[str, Path], header: Sequence[str], rows) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])
    return path


def write_step_csv(path: Union[str, Path], curves: Sequence[MetricCurve]) -> Path:
    """Write per-step curves, unmasked and masked rows together."""
    return _write(path, STEP_HEADER, [row for c in curves for row in c.rows()])


def write_decile_csv(
    path: Union[str, Path],
    deciles: Sequence[Tuple[int, MetricCurve]],
    extra: Optional[Sequence[Tuple[int, MetricCurve]]] = None,
) -> Path:
    """Write per-decile curves; ``extra`` holds masked curves if any."""
    rows = []
    for groups in (deciles, extra or ()):
        for d, curve in groups:
            rows.extend((d,) + row for row in curve.rows())
    return _write(path, DECILE_HEADER, rows)
