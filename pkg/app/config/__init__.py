"""
Configuration module for the EnvCF toolkit.

This package contains process settings and the run configuration
(grid, simulator, schedule, denoiser, optimizer, seeds and baselines).
"""

from .settings import Settings, settings
from .run_config import (
    GridConfig,
    SimulatorConfig,
    CityParams,
    DatasetConfig,
    ScheduleConfig,
    DenoiserDescriptor,
    OptimizerConfig,
    SamplerConfig,
    SeedConfig,
    VariogramConfig,
    RbfConfig,
    SsimConfig,
    PathConfig,
    ExecutionConfig,
    RunConfig,
    PRESETS,
    config_hash,
    get_default_config,
    get_smoke_config,
    get_full_config,
    get_preset,
    load_run_config,
    save_run_config,
    apply_overrides,
)

__all__ = [
    "Settings",
    "settings",
    "GridConfig",
    "SimulatorConfig",
    "CityParams",
    "DatasetConfig",
    "ScheduleConfig",
    "DenoiserDescriptor",
    "OptimizerConfig",
    "SamplerConfig",
    "SeedConfig",
    "VariogramConfig",
    "RbfConfig",
    "SsimConfig",
    "PathConfig",
    "ExecutionConfig",
    "RunConfig",
    "PRESETS",
    "config_hash",
    "get_default_config",
    "get_smoke_config",
    "get_full_config",
    "get_preset",
    "load_run_config",
    "save_run_config",
    "apply_overrides",
]
