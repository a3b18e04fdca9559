"""
Spatial discretization and EnvCF composition.

An EnvCF is the environment raster (1 = building) added to the normalized
channel gain (0 inside buildings) and clamped to [0, 1]. Downsampling is
point decimation: LR cell (i, j) is HR cell (i·factor, j·factor), which
models sensors placed every `factor` cells rather than an anti-aliased image.
"""

import logging
from typing import Optional

import numpy as np

from app.errors import InvalidArgumentError, RasterValidationError, ShapeError
from app.models.rasters import (
    DEFAULT_MAX_DB,
    DEFAULT_MIN_DB,
    ChannelGainMap,
    EnvCF,
    EnvironmentMap,
    GridSpec,
    RoleTag,
)

logger = logging.getLogger(__name__)


def make_grid(area_side_m: float, resolution: int) -> GridSpec:
    """
    Discretize a square area of side `area_side_m` into resolution x resolution cells.

    Args:
        area_side_m: Side length of the target area in meters
        resolution: Cells per side

    Returns:
        GridSpec with cell_size_m = area_side_m / resolution
    """
    if not area_side_m > 0:
        raise InvalidArgumentError(f"area_side_m must be positive, got {area_side_m}")
    if int(resolution) != resolution or resolution < 1:
        raise InvalidArgumentError(f"resolution must be a positive integer, got {resolution}")
    return GridSpec(area_side_m=float(area_side_m), resolution=int(resolution))


def gain_to_gray(
    gain_db: np.ndarray,
    min_db: float = DEFAULT_MIN_DB,
    max_db: float = DEFAULT_MAX_DB,
) -> np.ndarray:
    """Affine dB -> [0, 1] map clamped at (min_db, max_db); -inf maps to 0."""
    if max_db <= min_db:
        raise InvalidArgumentError("max_db must exceed min_db")
    gain_db = np.asarray(gain_db, dtype=np.float64)
    with np.errstate(invalid="ignore"):
        gray = (gain_db - min_db) / (max_db - min_db)
    gray = np.where(np.isneginf(gain_db), 0.0, gray)
    return np.clip(gray, 0.0, 1.0)


def gray_to_gain(gray: np.ndarray, min_db: float = DEFAULT_MIN_DB, max_db: float = DEFAULT_MAX_DB) -> np.ndarray:
    """Inverse of gain_to_gray inside the window (clamped values stay at the bounds)."""
    return min_db + np.asarray(gray, dtype=np.float64) * (max_db - min_db)


def compose_envcf(env: EnvironmentMap, gain: ChannelGainMap, role: RoleTag = RoleTag.HR) -> EnvCF:
    """Compose environment and gain into one raster with building cells equal to 1."""
    if env.grid != gain.grid:
        raise ShapeError(
            f"grid mismatch: environment {env.grid.resolution}x{env.grid.resolution} "
            f"over {env.grid.area_side_m} m vs gain {gain.grid.resolution}x{gain.grid.resolution} "
            f"over {gain.grid.area_side_m} m"
        )
    buildings = env.cells.astype(bool)
    if np.any(gain.gain_gray[buildings] != 0.0):
        raise RasterValidationError("gain must be 0 inside buildings")

    pixels = np.clip(gain.gain_gray + env.cells, 0.0, 1.0)
    return EnvCF(
        grid=env.grid,
        pixels=pixels,
        role=role,
        bs_cell=env.bs_cell,
        min_db=gain.min_db,
        max_db=gain.max_db,
    )


def decompose_envcf(
    f: EnvCF,
    building_threshold: float = 1.0,
) -> tuple[EnvironmentMap, ChannelGainMap]:
    """
    Split an EnvCF back into a binary environment and a gray-only gain map.

    Cells at or above `building_threshold` are buildings. The returned
    environment carries no BS cell.
    """
    if not 0.0 < building_threshold <= 1.0:
        raise InvalidArgumentError(f"building_threshold must be in (0, 1], got {building_threshold}")
    cells = (f.pixels >= building_threshold).astype(np.uint8)
    gray = np.where(cells == 1, 0.0, f.pixels)
    env = EnvironmentMap(grid=f.grid, cells=cells)
    gain = ChannelGainMap(grid=f.grid, gain_gray=gray, min_db=f.min_db, max_db=f.max_db)
    return env, gain


def downsample(f: EnvCF, factor: int) -> EnvCF:
    """Decimate an EnvCF: output (i, j) = input (i·factor, j·factor)."""
    if int(factor) != factor or factor < 1:
        raise InvalidArgumentError(f"factor must be a positive integer, got {factor}")
    factor = int(factor)
    if f.resolution % factor:
        raise InvalidArgumentError(
            f"factor {factor} does not divide resolution {f.resolution}"
        )
    if factor == 1:
        return f

    bs_cell: Optional[tuple[int, int]] = None
    if f.bs_cell is not None:
        bs_cell = (f.bs_cell[0] // factor, f.bs_cell[1] // factor)
    return EnvCF(
        grid=f.grid.downscaled(factor),
        pixels=f.pixels[::factor, ::factor],
        role=RoleTag.LR,
        bs_cell=bs_cell,
        min_db=f.min_db,
        max_db=f.max_db,
    )
