"""
Raster data types: grid specification, environment map, channel gain map
and the composed EnvCF.

Raster arrays are stored as read-only float64 (or uint8 for the binary
environment) numpy arrays so instances can be shared across workers.
"""

from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, computed_field

from app.errors import RasterValidationError, ShapeError

DEFAULT_MIN_DB = -147.0
DEFAULT_MAX_DB = -47.0


class RoleTag(str, Enum):
    """Whether a raster is the fine (HR) or coarse (LR) version of an area."""
    HR = "HR"
    LR = "LR"


class GridSpec(BaseModel):
    """Square discretization of a square target area."""

    model_config = ConfigDict(frozen=True)

    area_side_m: float = Field(..., gt=0, description="Side length of the target area in meters")
    resolution: int = Field(..., ge=1, description="Cells per side")

    @computed_field
    @property
    def cell_size_m(self) -> float:
        return self.area_side_m / self.resolution

    def downscaled(self, factor: int) -> "GridSpec":
        """Same area sampled every `factor` cells."""
        return GridSpec(area_side_m=self.area_side_m, resolution=self.resolution // factor)


def _frozen(array: np.ndarray, dtype) -> np.ndarray:
    out = np.array(array, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


def _check_square(name: str, array: np.ndarray, grid: GridSpec) -> None:
    expected = (grid.resolution, grid.resolution)
    if array.shape != expected:
        raise ShapeError(f"{name} has shape {array.shape}, expected {expected}")


def _check_unit_range(name: str, array: np.ndarray) -> None:
    if not np.all(np.isfinite(array)):
        raise RasterValidationError(f"{name} contains non-finite values")
    if array.size and (array.min() < 0.0 or array.max() > 1.0):
        raise RasterValidationError(
            f"{name} leaves [0, 1]: min={array.min():.6g}, max={array.max():.6g}"
        )


def _check_bs(bs_cell: Optional[tuple[int, int]], grid: GridSpec) -> Optional[tuple[int, int]]:
    if bs_cell is None:
        return None
    i, j = (int(v) for v in bs_cell)
    if not (0 <= i < grid.resolution and 0 <= j < grid.resolution):
        raise RasterValidationError(f"BS cell {(i, j)} is outside a {grid.resolution}x{grid.resolution} grid")
    return (i, j)


@dataclass(frozen=True, eq=False)
class EnvironmentMap:
    """Binary building raster (1 = building, 0 = open) plus the BS location."""

    grid: GridSpec
    cells: np.ndarray
    bs_cell: Optional[tuple[int, int]] = None

    def __post_init__(self):
        cells = np.asarray(self.cells)
        _check_square("environment", cells, self.grid)
        if not np.isin(cells, (0, 1)).all():
            raise RasterValidationError("environment cells must be 0 or 1")
        object.__setattr__(self, "cells", _frozen(cells, np.uint8))
        bs = _check_bs(self.bs_cell, self.grid)
        if bs is not None and self.cells[bs]:
            raise RasterValidationError(f"BS cell {bs} lies inside a building")
        object.__setattr__(self, "bs_cell", bs)

    @property
    def open_cells(self) -> int:
        return int(self.cells.size - self.cells.sum())


@dataclass(frozen=True, eq=False)
class ChannelGainMap:
    """
    Large-scale channel gain over the grid.

    `gain_db` holds the simulated gain with -inf marking no coverage
    (building cells); it is None when the map was recovered from gray
    values only. `gain_gray` is the clamped affine image of gain_db.
    """

    grid: GridSpec
    gain_gray: np.ndarray
    gain_db: Optional[np.ndarray] = None
    min_db: float = DEFAULT_MIN_DB
    max_db: float = DEFAULT_MAX_DB

    def __post_init__(self):
        gray = np.asarray(self.gain_gray, dtype=np.float64)
        _check_square("gain_gray", gray, self.grid)
        _check_unit_range("gain_gray", gray)
        object.__setattr__(self, "gain_gray", _frozen(gray, np.float64))
        if self.gain_db is not None:
            db = np.asarray(self.gain_db, dtype=np.float64)
            _check_square("gain_db", db, self.grid)
            if np.isnan(db).any() or np.isposinf(db).any():
                raise RasterValidationError("gain_db contains NaN or +inf")
            object.__setattr__(self, "gain_db", _frozen(db, np.float64))
        if self.max_db <= self.min_db:
            raise RasterValidationError("max_db must exceed min_db")

    def received_power_dbm(self, tx_power_dbm: float) -> np.ndarray:
        """P_rx = P_tx + G per cell; no-coverage cells are -inf."""
        if self.gain_db is None:
            raise RasterValidationError("received power needs gain_db, this map is gray-only")
        return tx_power_dbm + self.gain_db

    def snr_db(self, tx_power_dbm: float, noise_power_dbm: float) -> np.ndarray:
        """Average SNR per cell, P_tx + G - (N0 + 10 log10 B)."""
        return self.received_power_dbm(tx_power_dbm) - noise_power_dbm


@dataclass(frozen=True, eq=False)
class EnvCF:
    """
    Composed environment + channel gain raster, the model's native sample.

    Building cells are exactly 1; open cells carry the gain gray value.
    """

    grid: GridSpec
    pixels: np.ndarray
    role: RoleTag = RoleTag.HR
    bs_cell: Optional[tuple[int, int]] = None
    min_db: float = DEFAULT_MIN_DB
    max_db: float = DEFAULT_MAX_DB

    def __post_init__(self):
        pixels = np.asarray(self.pixels, dtype=np.float64)
        _check_square("EnvCF", pixels, self.grid)
        _check_unit_range("EnvCF", pixels)
        object.__setattr__(self, "pixels", _frozen(pixels, np.float64))
        object.__setattr__(self, "role", RoleTag(self.role))
        object.__setattr__(self, "bs_cell", _check_bs(self.bs_cell, self.grid))

    @property
    def resolution(self) -> int:
        return self.grid.resolution

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, EnvCF):
            return NotImplemented
        return (
            self.grid == other.grid
            and self.role == other.role
            and self.bs_cell == other.bs_cell
            and np.array_equal(self.pixels, other.pixels)
        )

