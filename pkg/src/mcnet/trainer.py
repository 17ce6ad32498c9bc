"""
The training loop.

Each iteration samples a batch of windows, predicts ``t_train`` frames
recursively in one connected graph, updates the discriminator on the
detached predictions and then updates the generator against the updated
discriminator. With ``beta == 0`` the discriminator is never evaluated.

Batches come from a generator seeded with ``(seed, iteration)``, so a run
is fully determined by its seed, configuration and dataset.
"""

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, List, Optional, Sequence, Union

import numpy as np
from tqdm import tqdm

from .autodiff import Graph, backward
from .checkpoint import Checkpoint, save_checkpoint
from .config import ModelConfig, TrainConfig
from .errors import NonFiniteError, TrainingDivergedError
from .model import (
    Discriminator,
    Generator,
    build_discriminator,
    build_generator,
    discriminate,
    predict_sequence,
)
from .objectives import combine, loss_disc, loss_gan, loss_img
from .optim import OptimizerState, adam_step
from .tensor import Tensor
from .video import NORMED11, VideoClip, normalize, stack_batch

logger = logging.getLogger(__name__)

METRICS_HEADER = ("iter", "loss_img", "loss_gan", "loss_disc", "ema_img")
CHECKPOINT_NAME = "checkpoint.mcn"
METRICS_NAME = "metrics.csv"


@dataclass(frozen=True)
class StepLosses:
    """Loss values of one iteration, measured before the updates."""

    loss_img: float
    loss_gan: float = 0.0
    loss_disc: float = 0.0


@dataclass(frozen=True)
class MetricsRow:
    iteration: int
    losses: StepLosses
    ema_img: float

    def as_row(self) -> List[str]:
        return [
            str(self.iteration),
            "%.8g" % self.losses.loss_img,
            "%.8g" % self.losses.loss_gan,
            "%.8g" % self.losses.loss_disc,
            "%.8g" % self.ema_img,
        ]


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    metrics: List[MetricsRow] = field(default_factory=list)


def initial_checkpoint(model: ModelConfig, train: TrainConfig) -> Checkpoint:
    """Freshly initialized networks and zero optimizer state."""
    generator = build_generator(model)
    discriminator = build_discriminator(model, train.clip_length)
    return Checkpoint(
        generator=generator,
        discriminator=discriminator,
        gen_state=OptimizerState.zeros(generator),
        disc_state=OptimizerState.zeros(discriminator),
        iteration=0,
        seed=train.seed,
    )


def _check(value: float, what: str) -> float:
    if not np.isfinite(value):
        raise NonFiniteError(f"{what} is not finite ({value})")
    return value


def _scalar(g: Graph, node) -> float:
    return float(g.array(node).reshape(()))


class Trainer:
    """
    Holds the evolving networks and optimizer state of one run.

    :param model: the architecture
    :param train: loop settings, including the loss weights
    :param checkpoint: state to resume from; fresh initialization if None
    """

    def __init__(
        self,
        model: ModelConfig,
        train: TrainConfig,
        checkpoint: Optional[Checkpoint] = None,
    ):
        self.model = model
        self.config = train
        ckpt = checkpoint or initial_checkpoint(model, train)
        if ckpt.discriminator.n_frames != train.clip_length:
            raise ValueError(
                f"checkpoint discriminator reads {ckpt.discriminator.n_frames} frames, "
                f"training windows have {train.clip_length}"
            )
        self.generator = ckpt.generator
        self.discriminator = ckpt.discriminator
        self.gen_state = ckpt.gen_state
        self.disc_state = ckpt.disc_state
        self.iteration = ckpt.iteration
        self.seed = ckpt.seed
        #: number of discriminator forward passes so far
        self.disc_calls = 0
        self.failures = ckpt.failures
        self.ema: Optional[float] = ckpt.ema

    def checkpoint(self) -> Checkpoint:
        """Snapshot of the current state."""
        return Checkpoint(
            generator=self.generator,
            discriminator=self.discriminator,
            gen_state=self.gen_state,
            disc_state=self.disc_state,
            iteration=self.iteration,
            seed=self.seed,
            ema=self.ema,
            failures=self.failures,
        )

    def sample_batch(self, clips: Sequence[VideoClip], iteration: int) -> List[Tensor]:
        """
        Draw the windows of one iteration.

        :return: ``clip_length`` tensors of shape ``(batch, c, h, w)``
        """
        length = self.config.clip_length
        rng = np.random.default_rng([self.seed, iteration])
        replace = len(clips) < self.config.batch_size
        picks = rng.choice(len(clips), size=self.config.batch_size, replace=replace)
        chosen = [clips[int(i)] for i in picks]
        starts = [int(rng.integers(0, len(c) - length + 1)) for c in chosen]
        return stack_batch(chosen, starts, length)

    def discriminator_update(self, context, targets, fakes):
        """
        Run ``disc_steps`` Adam steps of the discriminator alone.

        Nothing is committed; the caller assigns the returned parameters and
        state.

        :param context: observed frames, tensors of shape ``(n, c, h, w)``
        :param targets: real future frames
        :param fakes: predicted future frames, treated as constants
        :return: ``(params, state, loss)`` with the loss before the first step
        :raises NonFiniteError: if a loss is NaN or Inf
        """
        params, state = self.discriminator, self.disc_state
        first = None
        for _ in range(self.config.disc_steps):
            g = Graph()
            net = Discriminator(g, params)
            real = discriminate(net, context, targets)
            fake = discriminate(net, context, [g.constant(f) for f in fakes])
            self.disc_calls += 2
            loss = loss_disc(g, real, fake)
            value = _check(_scalar(g, loss), "discriminator loss")
            first = value if first is None else first
            backward(g, loss)
            params, state = adam_step(
                params,
                net.gradients(),
                state,
                self.config.learning_rate,
                self.config.beta1,
                self.config.beta2,
                self.config.epsilon,
            )
        return params, state, first

    def train_step(self, batch: Sequence[Tensor]) -> StepLosses:
        """
        One iteration on a batch of normalized frames.

        Nothing is committed unless every loss and gradient is finite.

        :param batch: ``clip_length`` tensors of shape ``(n, c, h, w)``
        :raises NonFiniteError: if a loss or gradient is NaN or Inf
        """
        cfg = self.config
        n, steps = cfg.n_context, cfg.t_train
        if len(batch) < cfg.clip_length:
            raise ValueError(f"batch has {len(batch)} frames, need {cfg.clip_length}")
        context = list(batch[:n])
        targets = list(batch[n : n + steps])

        g = Graph()
        gen = Generator(g, self.generator)
        preds = predict_sequence(gen, context, n, steps).frames
        img = loss_img(g, targets, preds, cfg.loss)
        img_value = _check(_scalar(g, img), "image loss")

        disc_params, disc_state = self.discriminator, self.disc_state
        gan = None
        gan_value = disc_value = 0.0
        if cfg.loss.beta > 0:
            fakes = [g.value(p) for p in preds]
            disc_params, disc_state, disc_value = self.discriminator_update(
                context, targets, fakes
            )
            frozen = Discriminator(g, disc_params, trainable=False)
            gan = loss_gan(g, discriminate(frozen, context, preds))
            self.disc_calls += 1
            gan_value = _check(_scalar(g, gan), "adversarial loss")

        total = combine(g, img, gan, cfg.loss)
        backward(g, total)
        gen_params, gen_state = adam_step(
            self.generator,
            gen.gradients(),
            self.gen_state,
            cfg.learning_rate,
            cfg.beta1,
            cfg.beta2,
            cfg.epsilon,
        )

        self.generator, self.gen_state = gen_params, gen_state
        self.discriminator, self.disc_state = disc_params, disc_state
        return StepLosses(img_value, gan_value, disc_value)

    def run_iteration(self, clips: Sequence[VideoClip]) -> Optional[MetricsRow]:
        """
        Sample, step and record one iteration.

        A non-finite iteration is skipped and returns None; too many in a
        row raise :class:`~mcnet.errors.TrainingDivergedError`.
        """
        iteration = self.iteration
        batch = self.sample_batch(clips, iteration)
        self.iteration += 1
        try:
            losses = self.train_step(batch)
        except NonFiniteError as err:
            self.failures += 1
            logger.warning("iteration %d skipped: %s", iteration, err)
            if self.failures >= self.config.max_failures:
                logger.error(
                    "aborting after %d consecutive non-finite iterations",
                    self.failures,
                )
                raise TrainingDivergedError(
                    f"{self.failures} consecutive non-finite iterations "
                    f"(last at iteration {iteration})"
                ) from err
            return None
        self.failures = 0
        decay = self.config.ema_decay
        if self.ema is None:
            self.ema = losses.loss_img
        else:
            self.ema = decay * self.ema + (1.0 - decay) * losses.loss_img
        return MetricsRow(iteration, losses, self.ema)


def prepare_clips(clips: Sequence[VideoClip], length: int) -> List[VideoClip]:
    """
    Normalize raw clips and check that each holds a training window.

    :raises ValueError: if there are no clips or one is too short
    """
    if not clips:
        raise ValueError("training needs at least one clip")
    out = []
    for index, clip in enumerate(clips):
        if len(clip) < length:
            raise ValueError(
                f"clip {index} has {len(clip)} frames, training windows need {length}"
            )
        out.append(clip if clip.value_range == NORMED11 else normalize(clip))
    return out


def _open_metrics(path: Path) -> IO[str]:
    path.parent.mkdir(parents=True, exist_ok=True)
    handle = path.open("w", newline="", encoding="utf-8")
    csv.writer(handle, lineterminator="\n").writerow(METRICS_HEADER)
    return handle


def train(
    clips: Sequence[VideoClip],
    model: ModelConfig,
    config: TrainConfig,
    out_dir: Union[str, Path, None] = None,
    checkpoint: Optional[Checkpoint] = None,
) -> TrainResult:
    """
    Run training up to ``config.iterations`` iterations.

    With ``out_dir`` set, ``metrics.csv`` receives one row per completed
    iteration and ``checkpoint.mcn`` is rewritten every
    ``checkpoint_interval`` iterations and at the end.

    :param clips: raw or normalized clips, each at least one window long
    :param checkpoint: state to resume from
    :raises TrainingDivergedError: after too many non-finite iterations
    """
    clips = prepare_clips(clips, config.clip_length)
    trainer = Trainer(model, config, checkpoint)
    out = Path(out_dir) if out_dir is not None else None
    handle = _open_metrics(out / METRICS_NAME) if out else None
    writer = csv.writer(handle, lineterminator="\n") if handle else None
    result = TrainResult(trainer.checkpoint())
    try:
        progress = tqdm(
            range(trainer.iteration, config.iterations),
            desc="train",
            disable=not config.progress,
            leave=False,
        )
        for _ in progress:
            row = trainer.run_iteration(clips)
            if row is not None:
                result.metrics.append(row)
                if writer:
                    writer.writerow(row.as_row())
                    handle.flush()  # type: ignore
                progress.set_postfix(loss=row.losses.loss_img, ema=row.ema_img)
                if row.iteration % config.log_interval == 0:
                    logger.info(
                        "iter %d loss_img %.5f loss_gan %.5f loss_disc %.5f ema %.5f",
                        row.iteration,
                        row.losses.loss_img,
                        row.losses.loss_gan,
                        row.losses.loss_disc,
                        row.ema_img,
                    )
            if out and trainer.iteration % config.checkpoint_interval == 0:
                save_checkpoint(trainer.checkpoint(), out / CHECKPOINT_NAME)
    finally:
        if handle:
            handle.close()
    result.checkpoint = trainer.checkpoint()
    if out:
        save_checkpoint(result.checkpoint, out / CHECKPOINT_NAME)
    logger.info("finished at iteration %d", trainer.iteration)
    return result
