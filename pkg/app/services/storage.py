"""
On-disk formats: raster PNGs with JSON sidecars, dataset trees,
checkpoints, loss logs and run manifests.

Dataset layout:

    <dir>/pairs/00000_hr.png   <dir>/pairs/00000_hr.json
    <dir>/pairs/00000_lr.png   <dir>/pairs/00000_lr.json
    ...
    <dir>/meta.json
"""

import csv
import json
import logging
import os
import re
import sys
from contextlib import contextmanager
from dataclasses import dataclass
from datetime import datetime, timezone
from importlib import metadata
from pathlib import Path
from typing import Any, Dict, Iterator, List, Optional, Sequence

import numpy as np
import torch
from PIL import Image, UnidentifiedImageError
from pydantic import BaseModel, Field

from app.config.run_config import DenoiserDescriptor, OptimizerConfig, RunConfig
from app.errors import CheckpointError, DataError, ShapeError
from app.models.rasters import DEFAULT_MAX_DB, DEFAULT_MIN_DB, EnvCF, GridSpec, RoleTag
from app.services.denoiser import TrainState, init_params
from app.services.grid import downsample
from app.services.schedule import Schedule
from app.services.synth import EnvCFPair, SyntheticDataset, split_indices

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT_VERSION = 1
MANIFEST_NAME = "manifest.json"
INCOMPLETE_MARKER = "INCOMPLETE"
_PAIR_NAME = re.compile(r"^(\d+)_hr\.png$")


# ============================================================================
# Rasters
# ============================================================================

def sidecar_path(path: Path) -> Path:
    return Path(path).with_suffix(".json")


def write_envcf(path: Path | str, f: EnvCF) -> Path:
    """Write an 8-bit grayscale PNG (round(v·255)) plus its JSON sidecar."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    gray = np.round(f.pixels * 255.0).astype(np.uint8)
    Image.fromarray(gray).save(path, format="PNG")
    meta = {
        "grid": {"area_side_m": f.grid.area_side_m, "resolution": f.grid.resolution},
        "role": f.role.value,
        "min_db": f.min_db,
        "max_db": f.max_db,
        "bs_cell": list(f.bs_cell) if f.bs_cell is not None else None,
    }
    sidecar_path(path).write_text(json.dumps(meta, indent=2, sort_keys=True), encoding="utf-8")
    return path


def read_raster(path: Path | str) -> np.ndarray:
    """Read a single-channel raster as float64 in [0, 1] (8-bit, 16-bit or RGB input)."""
    path = Path(path)
    try:
        with Image.open(path) as img:
            if img.mode in ("I;16", "I;16B", "I;16L", "I"):
                values = np.asarray(img, dtype=np.float64)
                return np.clip(values / 65535.0, 0.0, 1.0)
            if img.mode != "L":
                img = img.convert("L")
            return np.asarray(img, dtype=np.float64) / 255.0
    except FileNotFoundError:
        raise DataError(f"raster not found: {path}") from None
    except (UnidentifiedImageError, OSError) as exc:
        raise DataError(f"unreadable raster {path}: {exc}") from exc


def read_envcf(
    path: Path | str,
    area_side_m: Optional[float] = None,
    role: RoleTag = RoleTag.HR,
    min_db: float = DEFAULT_MIN_DB,
    max_db: float = DEFAULT_MAX_DB,
) -> EnvCF:
    """
    Read an EnvCF raster. The sidecar, when present, overrides the defaults;
    without sidecar or `area_side_m` the cells are taken as 1 m.
    """
    path = Path(path)
    pixels = read_raster(path)
    if pixels.ndim != 2 or pixels.shape[0] != pixels.shape[1]:
        raise ShapeError(f"{path} is not a square single-channel raster: {pixels.shape}")

    bs_cell = None
    side = area_side_m if area_side_m is not None else float(pixels.shape[0])
    meta_path = sidecar_path(path)
    if meta_path.exists():
        meta = json.loads(meta_path.read_text(encoding="utf-8"))
        side = meta["grid"]["area_side_m"]
        role = RoleTag(meta.get("role", role))
        min_db = meta.get("min_db", min_db)
        max_db = meta.get("max_db", max_db)
        if meta.get("bs_cell") is not None:
            bs_cell = tuple(meta["bs_cell"])
    grid = GridSpec(area_side_m=side, resolution=pixels.shape[0])
    return EnvCF(grid=grid, pixels=pixels, role=role, bs_cell=bs_cell, min_db=min_db, max_db=max_db)


def list_rasters(directory: Path | str) -> List[Path]:
    directory = Path(directory)
    if not directory.is_dir():
        raise DataError(f"not a directory: {directory}")
    return sorted(p for p in directory.iterdir() if p.suffix.lower() == ".png")


# ============================================================================
# Datasets
# ============================================================================

def save_dataset(dataset: SyntheticDataset, out_dir: Path | str, config: Optional[RunConfig] = None) -> Path:
    """Write a dataset tree; `meta.json` carries seeds, the split and the config."""
    out_dir = Path(out_dir)
    pairs_dir = out_dir / "pairs"
    pairs_dir.mkdir(parents=True, exist_ok=True)
    for pair in dataset.pairs:
        write_envcf(pairs_dir / f"{pair.index:05d}_hr.png", pair.hr)
        write_envcf(pairs_dir / f"{pair.index:05d}_lr.png", pair.lr)

    meta: Dict[str, Any] = {
        "n_pairs": len(dataset),
        "factor": dataset.factor,
        "grid_hr": {"area_side_m": dataset.grid_hr.area_side_m, "resolution": dataset.grid_hr.resolution},
        "train_indices": dataset.train_indices,
        "val_indices": dataset.val_indices,
        "pair_seeds": [pair.seed for pair in dataset.pairs],
    }
    if config is not None:
        meta["config"] = config.semantic_dict()
        meta["config_hash"] = config.config_hash()
    (out_dir / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True), encoding="utf-8")
    logger.info(f"Wrote {len(dataset)} pairs to {out_dir}")
    return out_dir


def load_dataset(
    directory: Path | str,
    factor: Optional[int] = None,
    area_side_m: Optional[float] = None,
    split_ratio: Sequence[int] = (4, 1),
) -> SyntheticDataset:
    """
    Load a dataset tree written by save_dataset or exported from elsewhere.

    Missing LR rasters are derived by decimation (needs `factor`); a
    missing meta.json means the default index split.
    """
    directory = Path(directory)
    pairs_dir = directory / "pairs"
    if not pairs_dir.is_dir():
        raise DataError(f"no pairs/ directory under {directory}")

    meta: Dict[str, Any] = {}
    meta_path = directory / "meta.json"
    if meta_path.exists():
        meta = json.loads(meta_path.read_text(encoding="utf-8"))
    factor = meta.get("factor", factor)
    if area_side_m is None and "grid_hr" in meta:
        area_side_m = meta["grid_hr"]["area_side_m"]

    indices = sorted(
        int(m.group(1)) for p in pairs_dir.iterdir() if (m := _PAIR_NAME.match(p.name))
    )
    if not indices:
        raise DataError(f"no *_hr.png rasters in {pairs_dir}")
    seeds = meta.get("pair_seeds") or [None] * (max(indices) + 1)

    pairs = []
    for position, index in enumerate(indices):
        hr = read_envcf(pairs_dir / f"{index:05d}_hr.png", area_side_m=area_side_m)
        lr_path = pairs_dir / f"{index:05d}_lr.png"
        if lr_path.exists():
            lr = read_envcf(lr_path, area_side_m=hr.grid.area_side_m, role=RoleTag.LR)
        elif factor:
            lr = downsample(hr, factor)
        else:
            raise DataError(f"{lr_path} is missing and no scale factor was given")
        if factor is None:
            factor = hr.resolution // lr.resolution
        if hr.resolution != lr.resolution * factor:
            raise DataError(
                f"pair {index}: HR {hr.resolution} is not LR {lr.resolution} x factor {factor}"
            )
        seed = seeds[index] if index < len(seeds) else None
        pairs.append(EnvCFPair(index=position, hr=hr, lr=lr, seed=seed))

    if "train_indices" in meta and len(meta["train_indices"]) + len(meta["val_indices"]) == len(pairs):
        train, val = meta["train_indices"], meta["val_indices"]
    else:
        train, val = split_indices(len(pairs), split_ratio)
    logger.info(f"Loaded {len(pairs)} pairs from {directory}")
    return SyntheticDataset(
        grid_hr=pairs[0].hr.grid,
        factor=int(factor),
        pairs=pairs,
        train_indices=list(train),
        val_indices=list(val),
    )


# ============================================================================
# Checkpoints
# ============================================================================

@dataclass
class LoadedCheckpoint:
    state: TrainState
    descriptor: DenoiserDescriptor
    schedule_params: Dict[str, Any]
    config_hash: Optional[str]


def save_checkpoint(
    path: Path | str,
    state: TrainState,
    schedule: Schedule,
    config_hash: Optional[str] = None,
) -> Path:
    """Write a versioned checkpoint through a temporary file and an atomic rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "descriptor": state.model.descriptor.model_dump(),
        "schedule": schedule.params(),
        "params": state.model.state_dict(),
        "ema_params": state.ema_model.state_dict(),
        "optimizer": state.optimizer.state_dict(),
        "step": state.step,
        "lr": state.lr,
        "ema_decay": state.ema_decay,
        "ema_start": state.ema_start,
        "grad_clip": state.grad_clip,
        "config_hash": config_hash,
    }
    tmp = path.with_name(path.name + ".tmp")
    torch.save(payload, tmp)
    os.replace(tmp, path)
    logger.info(f"Saved checkpoint at step {state.step} to {path}")
    return path


def load_checkpoint(
    path: Path | str,
    descriptor: Optional[DenoiserDescriptor] = None,
    schedule: Optional[Schedule] = None,
) -> LoadedCheckpoint:
    """
    Load a checkpoint, refusing a different architecture or schedule.

    Raises:
        CheckpointError: unreadable file, unknown format version or mismatch
    """
    path = Path(path)
    try:
        payload = torch.load(path, map_location="cpu", weights_only=True)
    except FileNotFoundError:
        raise CheckpointError(f"checkpoint not found: {path}") from None
    except Exception as exc:
        raise CheckpointError(f"unreadable checkpoint {path}: {exc}") from exc

    version = payload.get("format_version") if isinstance(payload, dict) else None
    if version != CHECKPOINT_FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint format {version!r}")

    stored = DenoiserDescriptor.model_validate(payload["descriptor"])
    if descriptor is not None and stored != descriptor:
        raise CheckpointError(
            f"{path}: descriptor mismatch (checkpoint {stored.model_dump()}, requested {descriptor.model_dump()})"
        )
    if schedule is not None and payload["schedule"] != schedule.params():
        raise CheckpointError(
            f"{path}: schedule mismatch (checkpoint {payload['schedule']}, requested {schedule.params()})"
        )

    dtype = next(iter(payload["params"].values())).dtype
    model = init_params(stored, seed=0, dtype=dtype)
    model.load_state_dict(payload["params"])
    state = TrainState.create(
        model,
        OptimizerConfig(
            lr=payload["lr"],
            ema_decay=payload["ema_decay"],
            ema_start=payload["ema_start"],
            grad_clip=payload.get("grad_clip"),
        ),
    )
    state.ema_model.load_state_dict(payload["ema_params"])
    state.optimizer.load_state_dict(payload["optimizer"])
    state.step = int(payload["step"])
    return LoadedCheckpoint(
        state=state,
        descriptor=stored,
        schedule_params=payload["schedule"],
        config_hash=payload.get("config_hash"),
    )


def load_model(
    path: Path | str,
    descriptor: Optional[DenoiserDescriptor] = None,
    schedule: Optional[Schedule] = None,
    use_ema: bool = True,
) -> torch.nn.Module:
    """Network (EMA weights by default) from a checkpoint, in eval mode."""
    loaded = load_checkpoint(path, descriptor, schedule)
    model = loaded.state.ema_model if use_ema else loaded.state.model
    return model.eval()


# ============================================================================
# Loss log
# ============================================================================

class LossLog:
    """Append-only CSV of (step, loss, wall_time_s)."""

    HEADER = ("step", "loss", "wall_time_s")

    def __init__(self, path: Path | str):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        if not self.path.exists():
            with self.path.open("w", newline="", encoding="utf-8") as f:
                csv.writer(f).writerow(self.HEADER)

    def append(self, rows: Sequence[tuple[int, float, float]]) -> None:
        with self.path.open("a", newline="", encoding="utf-8") as f:
            writer = csv.writer(f)
            for step, value, wall in rows:
                writer.writerow([step, f"{value:.8g}", f"{wall:.3f}"])

    def read(self) -> List[tuple[int, float, float]]:
        with self.path.open("r", newline="", encoding="utf-8") as f:
            reader = csv.DictReader(f)
            return [(int(r["step"]), float(r["loss"]), float(r["wall_time_s"])) for r in reader]


# ============================================================================
# Run manifests
# ============================================================================

class RunManifest(BaseModel):
    """Everything needed to re-run the command that produced a directory."""
    command: str
    argv: List[str] = Field(default_factory=list)
    config: Dict[str, Any] = Field(default_factory=dict)
    config_hash: str = ""
    seeds: Dict[str, int] = Field(default_factory=dict)
    versions: Dict[str, str] = Field(default_factory=dict)
    started_at: str = ""
    finished_at: Optional[str] = None
    complete: bool = False
    error: Optional[str] = None


def package_versions() -> Dict[str, str]:
    versions = {"python": sys.version.split()[0]}
    for name in ("envcf-superres", "numpy", "scipy", "torch", "pillow", "pydantic"):
        try:
            versions[name] = metadata.version(name)
        except metadata.PackageNotFoundError:
            versions[name] = "unknown"
    return versions


def write_manifest(directory: Path | str, manifest: RunManifest) -> Path:
    path = Path(directory) / MANIFEST_NAME
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(manifest.model_dump_json(indent=2), encoding="utf-8")
    return path


def read_manifest(directory: Path | str) -> RunManifest:
    path = Path(directory) / MANIFEST_NAME
    try:
        return RunManifest.model_validate_json(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise DataError(f"no manifest in {directory}") from None


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


@contextmanager
def run_manifest(
    directory: Path | str,
    command: str,
    config: RunConfig,
    argv: Optional[Sequence[str]] = None,
) -> Iterator[RunManifest]:
    """
    Bracket a command with its manifest.

    The manifest is written with complete=false up front. On success it is
    rewritten with complete=true; on failure the directory also gets an
    INCOMPLETE marker and the error is re-raised.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest = RunManifest(
        command=command,
        argv=list(argv or []),
        config=config.model_dump(mode="json"),
        config_hash=config.config_hash(),
        seeds=config.seeds.model_dump(),
        versions=package_versions(),
        started_at=_now(),
    )
    write_manifest(directory, manifest)
    marker = directory / INCOMPLETE_MARKER
    try:
        yield manifest
    except BaseException as exc:
        manifest.finished_at = _now()
        manifest.error = f"{type(exc).__name__}: {exc}"
        write_manifest(directory, manifest)
        marker.write_text(f"{command} failed: {exc}\n", encoding="utf-8")
        raise
    manifest.complete = True
    manifest.finished_at = _now()
    write_manifest(directory, manifest)
    if marker.exists():
        marker.unlink()
