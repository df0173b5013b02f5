"""
Command-line entry point.

    python main.py train CONFIG [--resume CKPT]
    python main.py eval CONFIG --checkpoint CKPT [--trace KIND] [--sigma S] [--jobs N]
    python main.py baseline CONFIG [--trace KIND] [--sigma S] [--jobs N]
    python main.py infer CONFIG --checkpoint CKPT --clip DIR --trace-file FILE
    python main.py simulate CONFIG --checkpoint CKPT --clip DIR --sigma S

Exit status: 0 success, 1 runtime failure, 2 usage or configuration error.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from config import RunConfig, load_config
from constants import TRACKER_SIGMAS, TraceKind
from crfp import CrfpModel
from data_io import degrade_sequence, load_clips, load_sequence, write_frame
from errors import ConfigurationError, CrfpError, UsageError
from foveation import read_trace
from trainer import (BicubicBaseline, CrfpReconstructor, Trainer, evaluate_flow, load_model,
                     pretrain_flow, run_clip, run_eval, simulate_tracker)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2


def _require_dir(value: str, key: str) -> Path:
    if not value:
        raise UsageError(f"{key} is not set")
    path = Path(value)
    if not path.is_dir():
        raise UsageError(f"{key}: directory {path} does not exist")
    return path


def _prepare(args: argparse.Namespace, command: str) -> tuple[RunConfig, Path]:
    config = load_config(args.config)
    out = config.run.output_root() / command
    config.write(out / "resolved.cfg")
    return config, out


def _trace_args(args: argparse.Namespace, config: RunConfig) -> tuple[TraceKind, float]:
    kind = TraceKind(args.trace) if args.trace else config.trace.kind
    if args.sigma is not None and kind is not TraceKind.TRACKER:
        raise UsageError(f"--sigma only applies to --trace tracker, not {kind.value}")
    sigma = args.sigma if args.sigma is not None else config.trace.sigma
    if sigma < 0:
        raise UsageError(f"--sigma must be non-negative, got {sigma}")
    if kind is TraceKind.TRACKER and sigma not in TRACKER_SIGMAS:
        logger.warning("sigma %.1f is not one of the presets %s", sigma, TRACKER_SIGMAS)
    return kind, sigma


def cmd_train(args: argparse.Namespace) -> int:
    config, out = _prepare(args, "train")
    clips = load_clips(_require_dir(config.data.train_dir, "data.train_dir"),
                       config.data.max_frames)
    model = CrfpModel(config.crfp)
    logger.info("model has %d parameters", model.param_count())
    train = config.train
    if train.flow_pretrain_iterations and not args.resume:
        pretrain_flow(model.flow, clips, train.flow_pretrain_iterations, train.flow_pretrain_lr,
                      train.flow_pretrain_shift, train.seed)
        logger.info("flow pretraining held-out EPE %.4f",
                    evaluate_flow(model.flow, clips, max_shift=train.flow_pretrain_shift))
    trainer = Trainer(config, model, clips, out)
    if args.resume:
        trainer.resume(Path(args.resume))
    result = trainer.train()
    logger.info("trained %d iterations, checkpoint %s", result.iterations, result.checkpoint)
    return EXIT_OK


def _apply_jobs(args: argparse.Namespace, config: RunConfig) -> None:
    if args.jobs is None:
        return
    if args.jobs < 1:
        raise UsageError(f"--jobs must be positive, got {args.jobs}")
    config.run.jobs = args.jobs


def _eval_clips(config: RunConfig):
    clips = load_clips(_require_dir(config.data.eval_dir, "data.eval_dir"), config.data.max_frames)
    return [degrade_sequence(c, config.crfp.scale) for c in clips]


def cmd_eval(args: argparse.Namespace) -> int:
    config, out = _prepare(args, "eval")
    kind, sigma = _trace_args(args, config)
    _apply_jobs(args, config)
    model = load_model(Path(args.checkpoint), config.crfp)
    report = run_eval(config, CrfpReconstructor(model), _eval_clips(config), kind, sigma, out)
    logger.info("report with %d rows in %s", len(report.rows), out / "report.csv")
    return EXIT_OK


def cmd_baseline(args: argparse.Namespace) -> int:
    config, out = _prepare(args, "baseline")
    kind, sigma = _trace_args(args, config)
    _apply_jobs(args, config)
    report = run_eval(config, BicubicBaseline(config.crfp.scale), _eval_clips(config), kind,
                      sigma, out)
    logger.info("report with %d rows in %s", len(report.rows), out / "report.csv")
    return EXIT_OK


def cmd_infer(args: argparse.Namespace) -> int:
    config, out = _prepare(args, "infer")
    model = load_model(Path(args.checkpoint), config.crfp)
    seq = degrade_sequence(load_sequence(_require_dir(args.clip, "--clip")), config.crfp.scale)
    trace = read_trace(Path(args.trace_file), seq.hr_dims)
    for t, frame in enumerate(run_clip(model, seq, trace)):
        write_frame(frame, out / "frames" / f"{t:08d}.png")
    logger.info("wrote %d frames to %s", len(seq), out / "frames")
    return EXIT_OK


def cmd_simulate(args: argparse.Namespace) -> int:
    config, out = _prepare(args, "simulate")
    if args.sigma < 0:
        raise UsageError(f"--sigma must be non-negative, got {args.sigma}")
    model = load_model(Path(args.checkpoint), config.crfp)
    seq = degrade_sequence(load_sequence(_require_dir(args.clip, "--clip")), config.crfp.scale)
    simulate_tracker(config, CrfpReconstructor(model), seq, args.sigma, out)
    logger.info("simulation written to %s", out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="Foveated video super-resolution (CRFP).")
    parser.add_argument("-v", "--verbose", action="store_true", help="Log at DEBUG level.")
    commands = parser.add_subparsers(dest="command", required=True)

    def command(name: str, handler, help_text: str) -> argparse.ArgumentParser:
        sub = commands.add_parser(name, help=help_text)
        sub.add_argument("config", help="Config file of 'section.key = value' lines.")
        sub.set_defaults(handler=handler)
        return sub

    def trace_flags(sub: argparse.ArgumentParser) -> None:
        sub.add_argument("--trace", choices=[k.value for k in TraceKind], default=None,
                         help="Gaze trajectory (defaults to trace.kind).")
        sub.add_argument("--sigma", type=float, default=None,
                         help="Tracker noise in HR pixels; only with --trace tracker.")
        sub.add_argument("--jobs", type=int, default=None,
                         help="Clips evaluated in parallel (defaults to run.jobs).")

    train = command("train", cmd_train, "Train on data.train_dir.")
    train.add_argument("--resume", default=None, help="Checkpoint to continue from.")

    evaluate = command("eval", cmd_eval, "Three-region report of a checkpoint on data.eval_dir.")
    evaluate.add_argument("--checkpoint", required=True)
    trace_flags(evaluate)

    baseline = command("baseline", cmd_baseline, "Three-region report of bicubic x8 up-sampling.")
    trace_flags(baseline)

    infer = command("infer", cmd_infer, "Reconstruct one clip along a trace file.")
    infer.add_argument("--checkpoint", required=True)
    infer.add_argument("--clip", required=True)
    infer.add_argument("--trace-file", required=True)

    simulate = command("simulate", cmd_simulate, "Eye-tracker noise simulation on one clip.")
    simulate.add_argument("--checkpoint", required=True)
    simulate.add_argument("--clip", required=True)
    simulate.add_argument("--sigma", type=float, required=True)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        return args.handler(args)
    except (ConfigurationError, UsageError) as e:
        logger.error("%s", e)
        return EXIT_USAGE
    except (CrfpError, OSError) as e:
        logger.error("%s", e)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
