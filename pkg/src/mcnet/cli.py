"""
CLI parsing for the :command:`mcnet` command.

Each command in :command:`mcnet` is mapped to a ``cmd_`` function.
The :func:`main <mcnet.cli.main>` function calls
:func:`createparser <mcnet.cli.createparser>` and
:func:`process <mcnet.cli.process>` to parse and process
all the commandline options.

The result of each command is printed on stdout. Failures print
``ERROR <message>`` on stderr and map to an exit code:

=====  ==========================================
 code  meaning
=====  ==========================================
  0    success
  1    a gradient check failed
  2    invalid configuration or command line
  3    training diverged
  4    checkpoint written for another model
  5    I/O error or unreadable checkpoint
=====  ==========================================
"""

import argparse
import dataclasses
import logging
import sys
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np

from .__about__ import CHECKPOINT_FORMAT_VERSION, __version__
from .autodiff import inject_sign_fault
from .checkpoint import load_checkpoint
from .checks import (
    MODEL_PROBES,
    MODEL_REFINEMENTS,
    run_model_check,
    run_operator_checks,
)
from .config import Settings, dump_config, load_config
from .errors import (
    CheckpointError,
    ConfigMismatchError,
    GradCheckFailure,
    MCNetError,
    TrainingDivergedError,
    UsageError,
)
from .evaluation import (
    Predictor,
    copy_last_baseline,
    decile_curves,
    evaluate,
    metric_curve,
    model_predictor,
    write_decile_csv,
    write_step_csv,
)
from .model import predict_frames
from .pgm import load_clip, load_clips, save_clip, write_pgm
from .trainer import CHECKPOINT_NAME, METRICS_NAME, train
from .video import generate_dataset, normalize

logger = logging.getLogger(__name__)

#: Name of the effective configuration written into every output directory
CONFIG_NAME = "config.txt"

#: File name pattern of predicted frames
PRED_PATTERN = "pred_%04d.pgm"

#: Baselines accepted by ``eval --baseline`` and ``eval --compare``
BASELINES = ("copy-last",)

EXIT_OK = 0
EXIT_CHECK = 1
EXIT_USAGE = 2
EXIT_DIVERGED = 3
EXIT_MISMATCH = 4
EXIT_IO = 5


def _settings(args: argparse.Namespace, extra: Tuple[str, ...] = ()) -> Settings:
    """Resolve the configuration named on the command line."""
    source = Path(args.config) if args.config else None
    return load_config(source, tuple(args.set or ()) + extra, args.seed)


def _out_dir(args: argparse.Namespace, default: str) -> Path:
    out = Path(args.out or default)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _echo_config(settings: Settings, out: Path) -> Path:
    path = out / CONFIG_NAME
    path.write_text(dump_config(settings), encoding="utf-8")
    return path


def cmd_gen_data(args: argparse.Namespace) -> str:
    """
    Subcommand: Render a synthetic dataset as PGM clip directories.

    Synopsis: gen-data [--kind KIND] [--count N] [--length T]

    :param args: The parsed arguments
    :return: a summary line
    """
    extra = []
    for key, value in (
        ("data.kind", args.kind),
        ("data.count", args.count),
        ("data.length", args.length),
    ):
        if value is not None:
            extra.append(f"{key}={value}")
    settings = _settings(args, tuple(extra))
    out = _out_dir(args, "data")
    clips = generate_dataset(settings.data)
    for index, clip in enumerate(clips):
        save_clip(clip, out / ("clip_%04d" % index))
    _echo_config(settings, out)
    logger.info("rendered %d %s clips", len(clips), settings.data.kind)
    return f"wrote {len(clips)} clips of {settings.data.length} frames to {out}"


def cmd_train(args: argparse.Namespace) -> str:
    """
    Subcommand: Train a generator and discriminator.

    Synopsis: train [--data DIR] [--resume CHECKPOINT]

    Without ``--data`` the clips are rendered from the ``data.*`` keys.

    :param args: The parsed arguments
    :return: a summary line
    """
    settings = _settings(args)
    if args.quiet and settings.train.progress:
        train_cfg = dataclasses.replace(settings.train, progress=False)
        settings = dataclasses.replace(settings, train=train_cfg)
    out = _out_dir(args, "run")
    _echo_config(settings, out)

    if args.data:
        clips = load_clips(args.data)
    else:
        logger.info("no --data given, rendering %d clips", settings.data.count)
        clips = generate_dataset(settings.data)
    checkpoint = None
    if args.resume:
        checkpoint = load_checkpoint(args.resume, settings.model)
        logger.info("resuming from iteration %d", checkpoint.iteration)

    result = train(clips, settings.model, settings.train, out, checkpoint)
    return "trained to iteration %d: %s, %s" % (
        result.checkpoint.iteration,
        out / CHECKPOINT_NAME,
        out / METRICS_NAME,
    )


def _config_for_checkpoint(args: argparse.Namespace) -> Settings:
    """Use ``--config`` if given, else the config saved next to the checkpoint."""
    if not args.config:
        saved = Path(args.checkpoint).parent / CONFIG_NAME
        if saved.exists():
            logger.debug("reading configuration from %s", saved)
            return load_config(saved, tuple(args.set or ()), args.seed)
    return _settings(args)


def cmd_predict(args: argparse.Namespace) -> str:
    """
    Subcommand: Predict future frames of one clip.

    Synopsis: predict --checkpoint PATH --clip DIR [--context N] [--steps T]

    :param args: The parsed arguments
    :return: a summary line
    """
    settings = _config_for_checkpoint(args)
    n_context = args.context or settings.train.n_context
    steps = args.steps or settings.eval.steps
    clip = load_clip(args.clip)
    if n_context < 2:
        raise UsageError(f"--context must be at least 2, got {n_context}")
    if n_context > len(clip):
        raise UsageError(
            f"--context {n_context} exceeds the {len(clip)} frames of {args.clip}"
        )
    if clip.frame_shape[0] != 1:
        raise UsageError("PGM output needs single-channel clips")
    ckpt = load_checkpoint(args.checkpoint, settings.model)

    frames = normalize(clip).array()[:n_context]
    preds = predict_frames(ckpt.generator, frames, n_context, steps)
    out = _out_dir(args, "predictions")
    for k, frame in enumerate(preds):
        write_pgm(out / (PRED_PATTERN % k), np.clip((frame[0] + 1.0) / 2.0, 0.0, 1.0))
    _echo_config(settings, out)
    return f"wrote {steps} predicted frames to {out}"


def _methods(
    args: argparse.Namespace, settings: Settings
) -> List[Tuple[str, Predictor]]:
    if args.baseline:
        return [(args.baseline, copy_last_baseline)]
    if not args.checkpoint:
        raise UsageError("eval needs --checkpoint or --baseline copy-last")
    ckpt = load_checkpoint(args.checkpoint, settings.model)
    methods = [(settings.model.kind, model_predictor(ckpt.generator))]
    if args.compare:
        methods.append((args.compare, copy_last_baseline))
    return methods


def cmd_eval(args: argparse.Namespace) -> str:
    """
    Subcommand: Score a checkpoint or baseline on a set of clips.

    Synopsis: eval --data DIR (--checkpoint PATH | --baseline copy-last)
    [--compare copy-last] [--masked] [--deciles] [--steps T]

    Writes ``<method>_steps.csv`` and, with ``--deciles``,
    ``<method>_deciles.csv`` for every scored method.

    :param args: The parsed arguments
    :return: one summary line per method
    """
    settings = (
        _config_for_checkpoint(args)
        if args.checkpoint and not args.baseline
        else _settings(args)
    )
    n_context = args.context or settings.train.n_context
    steps = args.steps or settings.eval.steps
    threshold = settings.eval.threshold
    clips = load_clips(args.data)
    methods = _methods(args, settings)
    out = _out_dir(args, "report")
    _echo_config(settings, out)

    lines = []
    for name, predictor in methods:
        scores = evaluate(
            clips,
            predictor,
            n_context,
            steps,
            args.masked,
            threshold,
            settings.eval.workers,
        )
        curves = [metric_curve(scores)]
        if args.masked:
            curves.append(metric_curve(scores, masked=True))
        write_step_csv(out / f"{name}_steps.csv", curves)
        if args.deciles:
            masked = decile_curves(scores, masked=True) if args.masked else None
            write_decile_csv(out / f"{name}_deciles.csv", decile_curves(scores), masked)
        lines.append(
            "%s: mean PSNR %.4f dB, mean SSIM %.4f over %d clips and %d steps"
            % (
                name,
                float(np.mean(curves[0].psnr)),
                float(np.mean(curves[0].ssim)),
                len(clips),
                steps,
            )
        )
    return "\n".join(lines)


def cmd_grad_check(args: argparse.Namespace) -> str:
    """
    Subcommand: Verify analytic gradients against finite differences.

    Synopsis: grad-check [--tolerance TOL] [--probes N] [--inject-bug KIND]
    [--refinements N]

    Every report line is printed as soon as it is available.

    :param args: The parsed arguments
    :return: the largest relative error
    :raises GradCheckFailure: if any check fails
    """
    seed = args.seed if args.seed is not None else 0

    def _run():
        reports = run_operator_checks(args.tolerance, seed)
        for report in reports:
            print(report)
        model = run_model_check(
            args.tolerance,
            args.probes,
            seed,
            args.model_steps,
            refinements=args.refinements,
        )
        print(model)
        return reports + [model]

    if args.inject_bug:
        logger.warning("flipping the backward sign of %r", args.inject_bug)
        with inject_sign_fault(args.inject_bug):
            reports = _run()
    else:
        reports = _run()

    worst = max(r.max_rel_error for r in reports)
    failed = [r.name for r in reports if not r.passed]
    if failed:
        raise GradCheckFailure(
            "%d of %d gradient checks failed (%s); max rel. error %.3e"
            % (len(failed), len(reports), ", ".join(failed), worst)
        )
    return "all %d gradient checks passed; max rel. error %.3e" % (len(reports), worst)


def _common() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="Configuration file of key = value lines")
    common.add_argument(
        "--set",
        action="append",
        metavar="KEY=VALUE",
        help="Override one configuration key (repeatable)",
    )
    common.add_argument("--out", help="Output directory")
    common.add_argument("--seed", type=int, help="Seed for every random stream")
    verbosity = common.add_mutually_exclusive_group()
    verbosity.add_argument(
        "-v", "--verbose", action="store_true", help="Log debug messages"
    )
    verbosity.add_argument(
        "-q", "--quiet", action="store_true", help="Only log warnings and errors"
    )
    return common


def createparser() -> argparse.ArgumentParser:
    """
    Create an :class:`argparse.ArgumentParser` instance.

    :return: parser instance
    """
    parser = argparse.ArgumentParser(prog=__package__, description=__doc__)

    parser.add_argument(
        "--version",
        action="version",
        version="%(prog)s "
        + "%s (checkpoint format %d)" % (__version__, CHECKPOINT_FORMAT_VERSION),
    )

    common = _common()
    s = parser.add_subparsers()

    # create gen-data subcommand
    parser_gen = s.add_parser(
        "gen-data", parents=[common], help="Render a synthetic dataset"
    )
    parser_gen.set_defaults(func=cmd_gen_data)
    parser_gen.add_argument("--kind", help="Scene kind (data.kind)")
    parser_gen.add_argument("--count", type=int, help="Number of clips (data.count)")
    parser_gen.add_argument("--length", type=int, help="Frames per clip (data.length)")

    # create train subcommand
    parser_train = s.add_parser("train", parents=[common], help="Train a model")
    parser_train.set_defaults(func=cmd_train)
    parser_train.add_argument("--data", help="Directory of clip directories")
    parser_train.add_argument("--resume", help="Checkpoint to continue from")

    # create predict subcommand
    parser_predict = s.add_parser(
        "predict", parents=[common], help="Predict future frames of a clip"
    )
    parser_predict.set_defaults(func=cmd_predict)
    parser_predict.add_argument("--checkpoint", required=True, help="Checkpoint file")
    parser_predict.add_argument("--clip", required=True, help="Clip directory")
    parser_predict.add_argument("--context", type=int, help="Observed frames")
    parser_predict.add_argument("--steps", type=int, help="Frames to predict")

    # create eval subcommand
    parser_eval = s.add_parser(
        "eval", parents=[common], help="Score predictions with PSNR and SSIM"
    )
    parser_eval.set_defaults(func=cmd_eval)
    parser_eval.add_argument("--data", required=True, help="Directory of clips")
    parser_eval.add_argument("--checkpoint", help="Checkpoint file")
    parser_eval.add_argument(
        "--baseline", choices=BASELINES, help="Score a baseline instead of a model"
    )
    parser_eval.add_argument(
        "--compare", choices=BASELINES, help="Also score a baseline"
    )
    parser_eval.add_argument(
        "--masked", action="store_true", help="Add motion-masked metrics"
    )
    parser_eval.add_argument(
        "--deciles", action="store_true", help="Group clips by motion decile"
    )
    parser_eval.add_argument("--context", type=int, help="Observed frames")
    parser_eval.add_argument("--steps", type=int, help="Frames to predict")

    # create grad-check subcommand
    parser_check = s.add_parser(
        "grad-check", parents=[common], help="Check analytic gradients"
    )
    parser_check.set_defaults(func=cmd_grad_check)
    parser_check.add_argument(
        "--tolerance", type=float, default=1e-4, help="Largest relative error"
    )
    parser_check.add_argument(
        "--probes",
        type=int,
        default=MODEL_PROBES,
        help="Parameters probed in the model",
    )
    parser_check.add_argument(
        "--refinements",
        type=int,
        default=MODEL_REFINEMENTS,
        help="Smaller-step retries of a failing model probe, 0 to disable",
    )
    parser_check.add_argument(
        "--model-steps",
        type=int,
        default=1,
        help="Predicted frames in the model check",
    )
    parser_check.add_argument(
        "--inject-bug",
        metavar="KIND",
        help="Flip the backward sign of one operator kind, e.g. tanh",
    )
    return parser


def process(args: argparse.Namespace) -> Optional[str]:
    """
    Process the input from the CLI.

    :param args: The parsed arguments
    :return: result of the selected action
    """
    if not hasattr(args, "func"):
        args.parser.print_help()
        raise SystemExit()

    # Call the respective function object:
    return args.func(args)


def exit_code(err: BaseException) -> int:
    """
    Map an exception to the exit code of the command.

    >>> exit_code(TrainingDivergedError("boom"))
    3
    >>> exit_code(FileNotFoundError("data"))
    5
    """
    table: List[Tuple[type, int]] = [
        (GradCheckFailure, EXIT_CHECK),
        (TrainingDivergedError, EXIT_DIVERGED),
        (ConfigMismatchError, EXIT_MISMATCH),
        (CheckpointError, EXIT_IO),
        (OSError, EXIT_IO),
    ]
    for cls, code in table:
        if isinstance(err, cls):
            return code
    return EXIT_USAGE


def _configure_logging(args: argparse.Namespace) -> None:
    level = logging.INFO
    if getattr(args, "verbose", False):
        level = logging.DEBUG
    elif getattr(args, "quiet", False):
        level = logging.WARNING
    logging.basicConfig(format="%(levelname)s %(name)s: %(message)s")
    logging.getLogger("mcnet").setLevel(level)


def main(cliargs: Optional[List[str]] = None) -> int:
    """
    Entry point for the application script.

    :param list cliargs: Arguments to parse or None (=use :class:`sys.argv`)
    :return: error code
    """
    try:
        parser = createparser()
        args = parser.parse_args(args=cliargs)
        # Save parser instance:
        args.parser = parser
        _configure_logging(args)
        result = process(args)
        if result is not None:
            print(result)
        return EXIT_OK

    except (MCNetError, ValueError, TypeError, OSError) as err:
        print("ERROR", err, file=sys.stderr)
        return exit_code(err)

