"""
End-to-end pipelines behind the CLI subcommands.

Every run_* function writes into its own output directory and brackets the
work with a run manifest. Layout of a smoke run:

    <out>/data/      pairs/, meta.json
    <out>/train/     checkpoint.pt, loss.csv
    <out>/samples/   <method>/<index>_hr.png for cdiff and every baseline
    <out>/eval/      report.csv, reported.csv
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, TypeVar

import numpy as np
import torch

from app.config.run_config import RunConfig
from app.config.settings import settings
from app.errors import DataError, InvalidArgumentError, StageError
from app.models.rasters import EnvCF, RoleTag
from app.services import baselines
from app.services.grid import downsample, make_grid
from app.services.metrics import EvaluationReport, evaluate, write_report
from app.services.sampler import sample_batch
from app.services.schedule import Schedule
from app.services.storage import (
    list_rasters,
    load_checkpoint,
    load_dataset,
    load_model,
    read_envcf,
    run_manifest,
    save_dataset,
    write_envcf,
)
from app.services.synth import EnvCFPair, SyntheticDataset, gen_dataset, split_indices
from app.services.trainer import CHECKPOINT_NAME, TrainResult, train

logger = logging.getLogger(__name__)

ALL_METHODS = (*baselines.METHODS, "cdiff")
T = TypeVar("T")


def configure_determinism(serial: bool) -> None:
    """Strict-serial mode: deterministic kernels and a single torch thread."""
    if serial:
        torch.use_deterministic_algorithms(True)
        torch.set_num_threads(1)
        logger.info("Serial mode: deterministic algorithms, 1 torch thread, 1 worker")
    elif settings.TORCH_THREADS > 0:
        torch.set_num_threads(settings.TORCH_THREADS)


def _pair_name(index: int) -> str:
    return f"{index:05d}_hr.png"


def _load(config: RunConfig, data_dir: Path | str) -> SyntheticDataset:
    return load_dataset(
        data_dir,
        factor=config.grid.factor,
        area_side_m=config.grid.area_side_m,
        split_ratio=config.dataset.split_ratio,
    )


def _map(fn: Callable[[int], T], n: int, workers: int) -> List[T]:
    if workers > 1 and n > 1:
        with ThreadPoolExecutor(max_workers=workers) as executor:
            return list(executor.map(fn, range(n)))
    return [fn(i) for i in range(n)]


# ============================================================================
# Data
# ============================================================================

def run_gen_data(
    config: RunConfig,
    out_dir: Path | str,
    argv: Optional[Sequence[str]] = None,
) -> SyntheticDataset:
    """Generate and write the synthetic dataset described by `config`."""
    out_dir = Path(out_dir)
    with run_manifest(out_dir, "gen-data", config, argv):
        dataset = gen_dataset(
            n_pairs=config.dataset.n_pairs,
            grid_hr=make_grid(config.grid.area_side_m, config.grid.hr_resolution),
            factor=config.grid.factor,
            params=config.city,
            cfg=config.simulator,
            seed=config.seeds.data,
            workers=config.workers,
            split_ratio=config.dataset.split_ratio,
        )
        save_dataset(dataset, out_dir, config)
    return dataset


def run_degrade(
    config: RunConfig,
    hr_dir: Path | str,
    out_dir: Path | str,
    argv: Optional[Sequence[str]] = None,
) -> SyntheticDataset:
    """Turn a directory of HR rasters into an HR/LR dataset tree by decimation."""
    out_dir = Path(out_dir)
    factor = config.grid.factor
    with run_manifest(out_dir, "degrade", config, argv):
        paths = list_rasters(hr_dir)
        if not paths:
            raise DataError(f"no PNG rasters in {hr_dir}")
        pairs = []
        for index, path in enumerate(paths):
            hr = read_envcf(path, area_side_m=config.grid.area_side_m, role=RoleTag.HR)
            if hr.resolution % factor:
                raise DataError(f"{path}: resolution {hr.resolution} is not divisible by factor {factor}")
            pairs.append(EnvCFPair(index=index, hr=hr, lr=downsample(hr, factor)))
        train_idx, val_idx = split_indices(len(pairs), config.dataset.split_ratio)
        dataset = SyntheticDataset(
            grid_hr=pairs[0].hr.grid,
            factor=factor,
            pairs=pairs,
            train_indices=train_idx,
            val_indices=val_idx,
        )
        save_dataset(dataset, out_dir, config)
        logger.info(f"Degraded {len(pairs)} rasters from {hr_dir} by factor {factor}")
    return dataset


# ============================================================================
# Training and sampling
# ============================================================================

def run_train(
    config: RunConfig,
    data_dir: Path | str,
    out_dir: Path | str,
    resume: bool = False,
    quiet: bool = False,
    argv: Optional[Sequence[str]] = None,
) -> TrainResult:
    """Train on the dataset under `data_dir`; `resume` continues from out_dir's checkpoint."""
    out_dir = Path(out_dir)
    with run_manifest(out_dir, "train", config, argv):
        dataset = _load(config, data_dir)
        if dataset.factor != config.grid.factor:
            raise DataError(f"dataset factor {dataset.factor} differs from config factor {config.grid.factor}")
        state = None
        checkpoint = out_dir / CHECKPOINT_NAME
        if resume and checkpoint.exists():
            loaded = load_checkpoint(checkpoint, config.denoiser, Schedule.from_config(config.schedule))
            state = loaded.state
            logger.info(f"Resuming from {checkpoint} at step {state.step}")
        return train(dataset, config, run_dir=out_dir, state=state, quiet=quiet)


def _split(dataset: SyntheticDataset, split: str) -> List[EnvCFPair]:
    if split == "validation":
        return dataset.validation
    if split == "train":
        return dataset.train
    if split == "all":
        return list(dataset.pairs)
    raise InvalidArgumentError(f"unknown split {split!r}; use validation, train or all")


def run_sample(
    config: RunConfig,
    checkpoint: Path | str,
    data_dir: Path | str,
    out_dir: Path | str,
    split: str = "validation",
    argv: Optional[Sequence[str]] = None,
) -> List[EnvCF]:
    """
    Sample HR estimates for one split of a dataset with a trained checkpoint.

    With `sampler.snapshot_every` > 0 the intermediate frames of every chain
    go to `<out_dir>/snapshots/<pair index>/`.
    """
    out_dir = Path(out_dir)
    with run_manifest(out_dir, "sample", config, argv):
        dataset = _load(config, data_dir)
        pairs = _split(dataset, split)
        snapshot_dir = out_dir / "snapshots" if config.sampler.snapshot_every else None
        outputs = _cdiff_outputs(config, checkpoint, pairs, dataset.factor, snapshot_dir=snapshot_dir)
        for pair, out in zip(pairs, outputs):
            write_envcf(out_dir / _pair_name(pair.index), out)
        logger.info(f"Wrote {len(outputs)} samples to {out_dir}")
    return outputs


def run_baseline(
    config: RunConfig,
    method: str,
    data_dir: Path | str,
    out_dir: Path | str,
    split: str = "validation",
    argv: Optional[Sequence[str]] = None,
) -> List[EnvCF]:
    """Upsample one split with a classical baseline and write the rasters."""
    if method not in baselines.METHODS:
        raise InvalidArgumentError(f"unknown baseline {method!r}; choose from {', '.join(baselines.METHODS)}")
    out_dir = Path(out_dir)
    with run_manifest(out_dir, "sample", config, argv):
        dataset = _load(config, data_dir)
        pairs = _split(dataset, split)
        outputs = _baseline_outputs(config, method, pairs, dataset.factor)
        for pair, out in zip(pairs, outputs):
            write_envcf(out_dir / _pair_name(pair.index), out)
    return outputs


def _cdiff_outputs(
    config: RunConfig,
    checkpoint: Path | str,
    pairs: Sequence[EnvCFPair],
    factor: int,
    snapshot_dir: Optional[Path] = None,
) -> List[EnvCF]:
    schedule = Schedule.from_config(config.schedule)
    model = load_model(checkpoint, config.denoiser, schedule, use_ema=config.sampler.use_ema)
    return sample_batch(
        model,
        [pair.lr for pair in pairs],
        schedule,
        seed=config.seeds.sample,
        factor=factor,
        workers=config.workers,
        clip_denoised=config.sampler.clip_denoised,
        num_samples=config.sampler.num_samples,
        snapshot_every=config.sampler.snapshot_every if snapshot_dir is not None else 0,
        snapshot_dir=snapshot_dir,
        item_ids=[pair.index for pair in pairs],
    )


def _baseline_outputs(config: RunConfig, method: str, pairs: Sequence[EnvCFPair], factor: int) -> List[EnvCF]:
    def _one(i: int) -> EnvCF:
        return baselines.upsample(method, pairs[i].lr, factor, kriging=config.kriging, rbf=config.rbf)

    logger.info(f"Running {method} on {len(pairs)} inputs")
    return _map(_one, len(pairs), config.workers)


# ============================================================================
# Evaluation
# ============================================================================

def run_eval(
    config: RunConfig,
    data_dir: Path | str,
    predictions: Dict[str, Path | str],
    out_dir: Path | str,
    mask_buildings: bool = False,
    argv: Optional[Sequence[str]] = None,
) -> EvaluationReport:
    """
    Score prediction directories (method -> dir of <index>_hr.png) against
    the validation split and write the report.
    """
    out_dir = Path(out_dir)
    with run_manifest(out_dir, "eval", config, argv):
        dataset = _load(config, data_dir)
        references = dataset.validation
        if not references:
            raise DataError("the validation split is empty")
        outputs = {}
        for method, directory in predictions.items():
            directory = Path(directory)
            items = []
            for pair in references:
                path = directory / _pair_name(pair.index)
                if not path.exists():
                    raise DataError(f"{method}: missing prediction {path}")
                items.append(read_envcf(path, area_side_m=pair.hr.grid.area_side_m))
            outputs[method] = items
        report = evaluate(
            outputs,
            [pair.hr for pair in references],
            ssim_cfg=config.ssim,
            mask_buildings=mask_buildings,
            config_hash=config.config_hash(),
            building_threshold=config.dataset.building_threshold,
        )
        write_report(report, out_dir)
    return report


def _dump_errors(out_dir: Path, method: str, pairs: Sequence[EnvCFPair], outputs: Sequence[EnvCF]) -> None:
    target = out_dir / "errors" / method
    for pair, out in zip(pairs, outputs):
        err = np.abs(out.pixels - pair.hr.pixels)
        write_envcf(target / f"{pair.index:05d}_err.png", EnvCF(grid=pair.hr.grid, pixels=err))


def run_bench(
    config: RunConfig,
    data_dir: Path | str,
    methods: Sequence[str],
    out_dir: Path | str,
    checkpoint: Optional[Path | str] = None,
    mask_buildings: bool = False,
    dump_errors: bool = False,
    argv: Optional[Sequence[str]] = None,
) -> EvaluationReport:
    """Run the selected methods on the validation split and score them in memory."""
    unknown = [m for m in methods if m not in ALL_METHODS]
    if unknown:
        raise InvalidArgumentError(f"unknown method(s) {unknown}; choose from {', '.join(ALL_METHODS)}")
    if "cdiff" in methods and checkpoint is None:
        raise InvalidArgumentError("method cdiff needs a checkpoint")
    out_dir = Path(out_dir)
    with run_manifest(out_dir, "bench", config, argv):
        dataset = _load(config, data_dir)
        pairs = dataset.validation
        if not pairs:
            raise DataError("the validation split is empty")
        outputs = {}
        for method in methods:
            if method == "cdiff":
                outputs[method] = _cdiff_outputs(config, checkpoint, pairs, dataset.factor)
            else:
                outputs[method] = _baseline_outputs(config, method, pairs, dataset.factor)
            if dump_errors:
                _dump_errors(out_dir, method, pairs, outputs[method])
        report = evaluate(
            outputs,
            [pair.hr for pair in pairs],
            ssim_cfg=config.ssim,
            mask_buildings=mask_buildings,
            config_hash=config.config_hash(),
            building_threshold=config.dataset.building_threshold,
        )
        write_report(report, out_dir)
    return report


# ============================================================================
# Smoke pipeline
# ============================================================================

def _stage(name: str, fn: Callable[[], T]) -> T:
    logger.info(f"Stage {name}")
    try:
        return fn()
    except Exception as exc:
        raise StageError(name, exc) from exc


def pipeline_smoke(
    config: RunConfig,
    out_dir: Path | str,
    quiet: bool = True,
    argv: Optional[Sequence[str]] = None,
) -> EvaluationReport:
    """
    gen-data -> train -> sample -> eval for cdiff and every baseline.

    Any stage failure is raised as StageError naming the stage.
    """
    out_dir = Path(out_dir)
    configure_determinism(config.execution.serial)
    with run_manifest(out_dir, "smoke", config, argv):
        data_dir = out_dir / "data"
        train_dir = out_dir / "train"
        samples_dir = out_dir / "samples"

        _stage("gen-data", lambda: run_gen_data(config, data_dir))
        result = _stage("train", lambda: run_train(config, data_dir, train_dir, quiet=quiet))

        def _sample_all() -> None:
            run_sample(config, result.checkpoint_path, data_dir, samples_dir / "cdiff")
            for method in baselines.METHODS:
                run_baseline(config, method, data_dir, samples_dir / method)

        _stage("sample", _sample_all)
        predictions = {method: samples_dir / method for method in ALL_METHODS}
        report = _stage("eval", lambda: run_eval(config, data_dir, predictions, out_dir / "eval"))
    return report
