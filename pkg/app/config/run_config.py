"""
Run configuration for the EnvCF toolkit.

A RunConfig bundles everything that determines the output of a run: the
grid and scale factor, the propagation simulator, the city generator, the
diffusion schedule, the denoiser architecture, the optimizer, the seeds and
the baseline/metric settings. It serializes to JSON and has a stable hash
over its semantic content (paths and execution mode are excluded).
"""

import hashlib
import math
import json
from pathlib import Path
from typing import Any, Callable, Dict, Iterable, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from app.errors import ConfigError


class GridConfig(BaseModel):
    """Target area and the HR/LR discretization."""

    area_side_m: float = Field(
        default=256.0,
        gt=0,
        description="Side length of the square target area in meters"
    )
    hr_resolution: int = Field(
        default=64,
        ge=1,
        description="Cells per side of the HR EnvCF"
    )
    factor: int = Field(
        default=4,
        ge=1,
        description="Super-resolution factor (HR cells per LR cell along one axis)"
    )

    @property
    def lr_resolution(self) -> int:
        return self.hr_resolution // self.factor


class SimulatorConfig(BaseModel):
    """Link parameters and the log-distance + wall-loss propagation model."""

    carrier_freq_hz: float = Field(default=5.9e9, gt=0, description="Carrier frequency f")
    bandwidth_hz: float = Field(default=10e6, gt=0, description="Bandwidth B")
    tx_power_dbm: float = Field(default=23.0, description="Transmit power")
    noise_psd_dbm_hz: float = Field(default=-174.0, description="Noise power spectral density N0")
    pathloss_exponent: float = Field(default=2.5, gt=0, description="Log-distance exponent n")
    wall_loss_db: float = Field(default=10.0, ge=0, description="Loss per building cell crossed")
    reference_distance_m: float = Field(default=1.0, gt=0, description="Reference distance d0")
    min_db: float = Field(default=-147.0, description="Gain mapped to gray 0")
    max_db: float = Field(default=-47.0, description="Gain mapped to gray 1")

    @model_validator(mode="after")
    def _check_db_window(self) -> "SimulatorConfig":
        if self.max_db <= self.min_db:
            raise ValueError("max_db must be greater than min_db")
        return self

    @property
    def noise_power_dbm(self) -> float:
        """Thermal noise power over the bandwidth, N0 + 10·log10(B)."""
        return self.noise_psd_dbm_hz + 10.0 * math.log10(self.bandwidth_hz)


class CityParams(BaseModel):
    """Procedural city layout parameters."""

    n_buildings: int = Field(default=12, ge=0, description="Number of rectangular buildings")
    size_range_m: tuple[float, float] = Field(
        default=(12.0, 48.0),
        description="(min, max) building side length in meters"
    )
    seed: int = Field(default=0, ge=0, lt=2**64, description="Layout seed")

    @model_validator(mode="after")
    def _check_sizes(self) -> "CityParams":
        low, high = self.size_range_m
        if low <= 0 or high < low:
            raise ValueError("size_range_m must satisfy 0 < min <= max")
        return self


class ScheduleConfig(BaseModel):
    """Linear variance schedule parameters."""

    T: int = Field(default=200, ge=2, description="Number of diffusion steps")
    beta_start: float = Field(default=1e-6, gt=0, lt=1, description="beta_1")
    beta_end: float = Field(default=5e-2, gt=0, lt=1, description="beta_T")

    @model_validator(mode="after")
    def _check_range(self) -> "ScheduleConfig":
        if self.beta_start >= self.beta_end:
            raise ValueError("beta_start must be smaller than beta_end")
        return self


class DenoiserDescriptor(BaseModel):
    """Architecture of the conditional encoder-decoder noise predictor."""

    model_config = ConfigDict(frozen=True)

    base_channels: int = Field(default=16, ge=1, description="Channel width at the finest level")
    levels: int = Field(default=2, ge=1, le=5, description="Number of resolution levels")
    kernel_size: int = Field(default=3, ge=1, description="Convolution kernel size (odd)")
    time_dim: int = Field(default=32, ge=2, description="Sinusoidal time-embedding width (even)")
    norm_groups: int = Field(default=4, ge=1, description="Group-normalization groups")

    @model_validator(mode="after")
    def _check_shapes(self) -> "DenoiserDescriptor":
        if self.kernel_size % 2 == 0:
            raise ValueError("kernel_size must be odd")
        if self.time_dim % 2:
            raise ValueError("time_dim must be even")
        if self.base_channels % self.norm_groups:
            raise ValueError("base_channels must be divisible by norm_groups")
        return self


class OptimizerConfig(BaseModel):
    """Adam, EMA and training-loop budget."""

    lr: float = Field(default=2e-4, gt=0, description="Adam learning rate")
    beta1: float = Field(default=0.9, ge=0, lt=1)
    beta2: float = Field(default=0.999, ge=0, lt=1)
    eps: float = Field(default=1e-8, gt=0)
    steps: int = Field(default=3000, ge=0, description="Training step budget")
    batch_size: int = Field(default=16, ge=1)
    ema_decay: float = Field(default=0.995, ge=0, le=1)
    ema_start: int = Field(default=200, ge=0, description="Step from which EMA averaging starts")
    grad_clip: Optional[float] = Field(default=None, gt=0, description="Global grad-norm clip")
    checkpoint_every: int = Field(default=500, ge=1)
    loss_smoothing: float = Field(
        default=0.98,
        ge=0,
        lt=1,
        description="EMA factor of the smoothed loss curve"
    )
    plateau_patience: Optional[int] = Field(
        default=None,
        ge=1,
        description="Stop when the smoothed loss has not improved for this many steps"
    )
    plateau_min_delta: float = Field(default=1e-3, ge=0)


class SeedConfig(BaseModel):
    """Seeds of every random stream."""

    data: int = Field(default=7, ge=0)
    init: int = Field(default=0, ge=0)
    train: int = Field(default=1, ge=0)
    sample: int = Field(default=2, ge=0)


class DatasetConfig(BaseModel):
    """Synthetic dataset size and split."""

    n_pairs: int = Field(default=1000, ge=0)
    split_ratio: tuple[int, int] = Field(default=(4, 1), description="train:validation")
    building_threshold: float = Field(default=1.0, gt=0, le=1)


class VariogramConfig(BaseModel):
    """Ordinary-kriging baseline settings (exponential variogram)."""

    model: Literal["exponential"] = "exponential"
    n_lags: int = Field(default=12, ge=2)
    max_lag_fraction: float = Field(default=0.5, gt=0, le=1)
    max_pairs: int = Field(default=200_000, ge=10, description="Pair subsample for the fit")
    sill: Optional[float] = Field(default=None, gt=0, description="Fixed partial sill c")
    range_m: Optional[float] = Field(default=None, gt=0, description="Fixed range a in meters")
    nugget: float = Field(default=0.0, ge=0, description="Nugget n0 (fixed unless fit_nugget)")
    fit_nugget: bool = False
    fit_loss: Literal["linear", "soft_l1"] = Field(
        default="linear",
        description="least_squares loss of the variogram fit"
    )
    neighbors: Optional[int] = Field(
        default=None,
        ge=2,
        description="Local mode: krige each cell from its k nearest samples"
    )
    dense_max_points: int = Field(default=4096, ge=2)
    nugget_ladder: tuple[float, ...] = (1e-10, 1e-8, 1e-6, 1e-4)
    chunk_size: int = Field(default=1024, ge=1)


class RbfConfig(BaseModel):
    """Radial basis function baseline settings."""

    kernel: Literal["multiquadric", "inverse_multiquadric", "gaussian", "thin_plate_spline"] = "multiquadric"
    shape_m: Optional[float] = Field(
        default=None,
        gt=0,
        description="Shape parameter c in meters; defaults to the LR sampling interval"
    )
    smoothing: float = Field(default=0.0, ge=0, description="Regularization lambda")
    degree: int = Field(default=0, ge=-1, le=1, description="Polynomial tail degree (-1 disables)")
    neighbors: Optional[int] = Field(default=None, ge=1)
    smoothing_ladder: tuple[float, ...] = (1e-12, 1e-10, 1e-8, 1e-6, 1e-4)
    max_condition: Optional[float] = Field(
        default=1e12,
        gt=1,
        description="Reject dense systems whose estimated condition number exceeds this (None disables)"
    )


class SsimConfig(BaseModel):
    """Gaussian-window SSIM parameters."""

    window_size: int = Field(default=11, ge=1)
    sigma: float = Field(default=1.5, gt=0)
    k1: float = Field(default=0.01, gt=0)
    k2: float = Field(default=0.03, gt=0)


class SamplerConfig(BaseModel):
    """Reverse-process options."""

    use_ema: bool = True
    clip_denoised: bool = Field(default=False, description="Clamp the implicit x0 at every step")
    num_samples: int = Field(default=1, ge=1, description="Chains averaged per input")
    snapshot_every: int = Field(default=0, ge=0, description="0 disables chain snapshots")


class PathConfig(BaseModel):
    """Output locations (not part of the config hash)."""

    run_dir: str = "runs/default"


class ExecutionConfig(BaseModel):
    """Execution mode (not part of the config hash)."""

    serial: bool = False
    workers: Optional[int] = Field(default=None, ge=1)


class RunConfig(BaseModel):
    """Complete configuration of a run."""

    grid: GridConfig = Field(default_factory=GridConfig)
    simulator: SimulatorConfig = Field(default_factory=SimulatorConfig)
    city: CityParams = Field(default_factory=CityParams)
    dataset: DatasetConfig = Field(default_factory=DatasetConfig)
    schedule: ScheduleConfig = Field(default_factory=ScheduleConfig)
    denoiser: DenoiserDescriptor = Field(default_factory=DenoiserDescriptor)
    optimizer: OptimizerConfig = Field(default_factory=OptimizerConfig)
    sampler: SamplerConfig = Field(default_factory=SamplerConfig)
    seeds: SeedConfig = Field(default_factory=SeedConfig)
    kriging: VariogramConfig = Field(default_factory=VariogramConfig)
    rbf: RbfConfig = Field(default_factory=RbfConfig)
    ssim: SsimConfig = Field(default_factory=SsimConfig)
    paths: PathConfig = Field(default_factory=PathConfig)
    execution: ExecutionConfig = Field(default_factory=ExecutionConfig)

    @model_validator(mode="after")
    def _check_consistency(self) -> "RunConfig":
        hr = self.grid.hr_resolution
        if hr % self.grid.factor:
            raise ValueError(
                f"hr_resolution {hr} is not divisible by factor {self.grid.factor}"
            )
        if hr % (2 ** self.denoiser.levels):
            raise ValueError(
                f"hr_resolution {hr} is not divisible by 2**levels = {2 ** self.denoiser.levels}"
            )
        if self.grid.lr_resolution < 2:
            raise ValueError("the LR grid needs at least 2 cells per side")
        return self

    def semantic_dict(self) -> Dict[str, Any]:
        """Config content that determines results (paths and execution excluded)."""
        return self.model_dump(mode="json", exclude={"paths", "execution"})

    def config_hash(self) -> str:
        return config_hash(self.semantic_dict())

    @property
    def workers(self) -> int:
        from app.config.settings import settings

        if self.execution.serial:
            return 1
        return self.execution.workers or settings.NUM_WORKERS


# 64 -> 256 training setup: batch 16, lr 5e-5, EMA 0.9999 from step 5000
FULL_SCALE_OPTIMIZER = OptimizerConfig(
    lr=5e-5,
    steps=500_000,
    batch_size=16,
    ema_decay=0.9999,
    ema_start=5000,
    checkpoint_every=10_000,
)


def config_hash(data: Dict[str, Any]) -> str:
    """SHA-256 over canonical JSON; key order never matters."""
    canonical = json.dumps(data, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def get_default_config() -> RunConfig:
    """Desk-scale configuration: 16x16 -> 64x64, T = 200, ~1k pairs."""
    return RunConfig()


def get_smoke_config() -> RunConfig:
    """Seconds-scale configuration used by the test-suite and quick pipeline checks."""
    return RunConfig(
        grid=GridConfig(area_side_m=64.0, hr_resolution=16, factor=4),
        city=CityParams(n_buildings=3, size_range_m=(8.0, 20.0)),
        dataset=DatasetConfig(n_pairs=10),
        schedule=ScheduleConfig(T=20, beta_start=1e-4, beta_end=0.3),
        denoiser=DenoiserDescriptor(base_channels=8, levels=2, time_dim=16, norm_groups=4),
        optimizer=OptimizerConfig(
            lr=1e-3,
            steps=20,
            batch_size=4,
            ema_decay=0.9,
            ema_start=0,
            checkpoint_every=10,
        ),
        kriging=VariogramConfig(n_lags=6),
        ssim=SsimConfig(window_size=7, sigma=1.0),
    )


def get_full_config() -> RunConfig:
    """Full-scale configuration: 64x64 -> 256x256 over 256 m, T = 1000, beta 1e-6 -> 1e-2."""
    return RunConfig(
        grid=GridConfig(area_side_m=256.0, hr_resolution=256, factor=4),
        dataset=DatasetConfig(n_pairs=56_000),
        schedule=ScheduleConfig(T=1000, beta_start=1e-6, beta_end=1e-2),
        denoiser=DenoiserDescriptor(base_channels=64, levels=3, time_dim=128, norm_groups=8),
        optimizer=FULL_SCALE_OPTIMIZER,
    )


PRESETS: Dict[str, Callable[[], RunConfig]] = {
    "desk": get_default_config,
    "smoke": get_smoke_config,
    "full": get_full_config,
}


def get_preset(name: str) -> RunConfig:
    try:
        return PRESETS[name]()
    except KeyError:
        raise ConfigError(
            f"Unknown preset: {name}. Use one of {', '.join(sorted(PRESETS))}"
        ) from None


def load_run_config(path: Path | str) -> RunConfig:
    """Read a RunConfig from a JSON file."""
    path = Path(path)
    try:
        return RunConfig.model_validate_json(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except ValidationError as exc:
        raise ConfigError(f"invalid config {path}: {exc}") from exc


def save_run_config(config: RunConfig, path: Path | str) -> None:
    Path(path).write_text(config.model_dump_json(indent=2), encoding="utf-8")


def apply_overrides(config: RunConfig, overrides: Iterable[str]) -> RunConfig:
    """
    Apply `dotted.key=value` overrides and re-validate.

    Values are decoded as JSON when possible (numbers, booleans, lists,
    null) and used as plain strings otherwise.
    """
    data = config.model_dump(mode="json")
    for item in overrides:
        key, sep, raw = item.partition("=")
        if not sep or not key:
            raise ConfigError(f"override must look like section.key=value: {item!r}")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = data
        parts = key.split(".")
        for part in parts[:-1]:
            if not isinstance(node.get(part), dict):
                raise ConfigError(f"unknown config section in override: {key}")
            node = node[part]
        if parts[-1] not in node:
            raise ConfigError(f"unknown config key in override: {key}")
        node[parts[-1]] = value
    try:
        return RunConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(f"invalid override: {exc}") from exc
