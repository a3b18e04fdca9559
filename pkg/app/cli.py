"""
Command-line entry point (`envcf`).

Configuration is layered: --preset, then --config FILE, then --set
section.key=value overrides, then the explicit flags of each subcommand.
"""

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional, Sequence

from app.config import apply_overrides, get_preset, load_run_config, settings
from app.config.run_config import PRESETS, PathConfig, RunConfig
from app.errors import ConfigError, EnvCFError, ExitCode
from app.services import baselines, pipeline

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"

# which seed --seed sets for each subcommand
SEED_FIELD = {
    "gen-data": "data",
    "degrade": "data",
    "train": "train",
    "sample": "sample",
    "bench": "sample",
    "smoke": "data",
}


def _common_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    group = common.add_argument_group("configuration")
    group.add_argument("--preset", choices=sorted(PRESETS), default="desk", help="Base configuration preset")
    group.add_argument("--config", type=Path, help="JSON run config applied over the preset")
    group.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="Override one config field, e.g. --set optimizer.lr=1e-4 (repeatable)",
    )
    group.add_argument("--seed", type=int, help="Seed of this command's random stream")
    group.add_argument("--serial", action="store_true", help="Bitwise-deterministic single-worker execution")
    group.add_argument("--workers", type=int, help="Worker count for parallel stages")
    out = common.add_argument_group("output")
    out.add_argument("--out", type=Path, help="Output directory")
    out.add_argument("-v", "--verbose", action="store_true", help="Debug logging and tracebacks")
    out.add_argument("-q", "--quiet", action="store_true", help="Warnings only, no progress bars")
    return common


def build_parser() -> argparse.ArgumentParser:
    common = _common_parser()
    parser = argparse.ArgumentParser(
        prog="envcf",
        description=settings.APP_DESCRIPTION,
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  envcf gen-data --pairs 100 --seed 7 --out runs/data
  envcf train --data runs/data --steps 3000 --out runs/train
  envcf sample --data runs/data --checkpoint runs/train/checkpoint.pt --out runs/samples/cdiff
  envcf bench --data runs/data --method bilinear --method kriging --out runs/bench
  envcf smoke --preset smoke --serial --out runs/smoke
        """,
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", parents=[common], help="Generate a synthetic HR/LR EnvCF dataset")
    p.add_argument("--pairs", type=int, help="Number of pairs")

    p = sub.add_parser("degrade", parents=[common], help="Build LR/HR pairs from a directory of HR rasters")
    p.add_argument("--hr-dir", type=Path, required=True, help="Directory of HR PNG rasters")

    p = sub.add_parser("train", parents=[common], help="Train the conditional denoiser")
    p.add_argument("--data", type=Path, required=True, help="Dataset directory")
    p.add_argument("--steps", type=int, help="Total optimizer steps")
    p.add_argument("--resume", action="store_true", help="Continue from the checkpoint in --out")

    p = sub.add_parser("sample", parents=[common], help="Reconstruct HR EnvCFs for a dataset split")
    p.add_argument("--data", type=Path, required=True, help="Dataset directory")
    p.add_argument("--method", choices=pipeline.ALL_METHODS, default="cdiff")
    p.add_argument("--checkpoint", type=Path, help="Trained checkpoint (cdiff only)")
    p.add_argument("--split", choices=("validation", "train", "all"), default="validation")
    p.add_argument(
        "--snapshot-every",
        type=int,
        metavar="N",
        help="Write every N-th reverse step of each chain to <out>/snapshots/ (0 disables)",
    )

    p = sub.add_parser("eval", parents=[common], help="Score prediction directories against a dataset")
    p.add_argument("--data", type=Path, required=True, help="Dataset directory")
    p.add_argument(
        "--pred",
        action="append",
        default=[],
        metavar="METHOD=DIR",
        required=True,
        help="Predictions of one method (repeatable)",
    )
    p.add_argument("--mask-buildings", action="store_true", help="Score street pixels only")

    p = sub.add_parser("bench", parents=[common], help="Run methods on the validation split and report")
    p.add_argument("--data", type=Path, required=True, help="Dataset directory")
    p.add_argument(
        "--method",
        dest="methods",
        action="append",
        choices=pipeline.ALL_METHODS,
        help="Method to run (repeatable; default: all baselines)",
    )
    p.add_argument("--checkpoint", type=Path, help="Trained checkpoint (needed for cdiff)")
    p.add_argument("--mask-buildings", action="store_true", help="Score street pixels only")
    p.add_argument("--dump-errors", action="store_true", help="Write per-item absolute error rasters")

    p = sub.add_parser("smoke", parents=[common], help="gen-data, train, sample and eval end to end")
    p.add_argument("--pairs", type=int, help="Number of pairs")
    p.add_argument("--steps", type=int, help="Total optimizer steps")

    p = sub.add_parser("serve", help="Run the HTTP service")
    p.add_argument("--host", default=settings.HOST)
    p.add_argument("--port", type=int, default=settings.PORT)
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """Preset -> config file -> --set overrides -> explicit flags."""
    config = load_run_config(args.config) if args.config else get_preset(args.preset)
    overrides: List[str] = list(args.overrides)
    if args.seed is not None:
        overrides.append(f"seeds.{SEED_FIELD.get(args.command, 'data')}={args.seed}")
    if getattr(args, "pairs", None) is not None:
        overrides.append(f"dataset.n_pairs={args.pairs}")
    if getattr(args, "steps", None) is not None:
        overrides.append(f"optimizer.steps={args.steps}")
    if getattr(args, "snapshot_every", None) is not None:
        overrides.append(f"sampler.snapshot_every={args.snapshot_every}")
    if args.serial:
        overrides.append("execution.serial=true")
    if args.workers is not None:
        overrides.append(f"execution.workers={args.workers}")
    if args.out is not None:
        overrides.append(f"paths.run_dir={json.dumps(args.out.as_posix())}")
    return apply_overrides(config, overrides) if overrides else config


def _parse_predictions(items: Sequence[str]) -> dict:
    predictions = {}
    for item in items:
        method, sep, directory = item.partition("=")
        if not sep or not method or not directory:
            raise ConfigError(f"--pred must look like METHOD=DIR: {item!r}")
        predictions[method] = Path(directory)
    return predictions


def _configure_logging(verbose: bool, quiet: bool) -> None:
    if verbose:
        level = logging.DEBUG
    elif quiet:
        level = logging.WARNING
    else:
        level = getattr(logging, settings.LOG_LEVEL, logging.INFO)
    logging.basicConfig(level=level, format=LOG_FORMAT, force=True)


def _dispatch(args: argparse.Namespace, config: RunConfig, argv: Sequence[str]) -> None:
    out = Path(config.paths.run_dir)
    command = args.command
    if command == "gen-data":
        pipeline.run_gen_data(config, out, argv=argv)
    elif command == "degrade":
        pipeline.run_degrade(config, args.hr_dir, out, argv=argv)
    elif command == "train":
        result = pipeline.run_train(config, args.data, out, resume=args.resume, quiet=args.quiet, argv=argv)
        logger.info(f"Checkpoint: {result.checkpoint_path}")
    elif command == "sample":
        if args.method == "cdiff":
            if args.checkpoint is None:
                raise ConfigError("sample --method cdiff needs --checkpoint")
            pipeline.run_sample(config, args.checkpoint, args.data, out, split=args.split, argv=argv)
        else:
            pipeline.run_baseline(config, args.method, args.data, out, split=args.split, argv=argv)
    elif command == "eval":
        report = pipeline.run_eval(
            config, args.data, _parse_predictions(args.pred), out, mask_buildings=args.mask_buildings, argv=argv
        )
        _print_report(report)
    elif command == "bench":
        report = pipeline.run_bench(
            config,
            args.data,
            args.methods or list(baselines.METHODS),
            out,
            checkpoint=args.checkpoint,
            mask_buildings=args.mask_buildings,
            dump_errors=args.dump_errors,
            argv=argv,
        )
        _print_report(report)
    elif command == "smoke":
        _print_report(pipeline.pipeline_smoke(config, out, quiet=args.quiet, argv=argv))


def _print_report(report) -> None:
    print(f"{'method':<10} {'psnr_db':>9} {'ssim':>8} {'nmse':>8} {'n':>5}")
    for row in report.rows:
        print(f"{row.method:<10} {row.psnr_db:>9.2f} {row.ssim:>8.4f} {row.nmse:>8.4f} {row.n_items:>5}")


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)

    if args.command == "serve":
        import uvicorn

        uvicorn.run("app.main:app", host=args.host, port=args.port)
        return int(ExitCode.OK)

    _configure_logging(args.verbose, args.quiet)
    try:
        config = resolve_config(args)
        if args.out is None and config.paths.run_dir == PathConfig().run_dir:
            # default output directory per command under RUNS_DIR
            config = config.model_copy(
                update={"paths": config.paths.model_copy(update={"run_dir": str(Path(settings.RUNS_DIR) / args.command)})}
            )
        pipeline.configure_determinism(config.execution.serial)
        _dispatch(args, config, ["envcf", *argv])
    except EnvCFError as exc:
        if args.verbose:
            logger.exception(f"{args.command} failed")
        else:
            logger.error(f"{args.command} failed: {exc}")
        return int(exc.exit_code)
    except Exception as exc:
        if args.verbose:
            logger.exception(f"{args.command} failed")
        else:
            logger.error(f"{args.command} failed: {type(exc).__name__}: {exc}")
        return int(ExitCode.FAILURE)
    return int(ExitCode.OK)


if __name__ == "__main__":
    sys.exit(main())
