"""Request and response models for API endpoints."""

from typing import List, Literal, Optional

from pydantic import BaseModel, Field, field_validator

from app.config.run_config import CityParams, RbfConfig, SsimConfig, VariogramConfig


def _check_square(rows: List[List[float]]) -> List[List[float]]:
    n = len(rows)
    if n == 0 or any(len(row) != n for row in rows):
        raise ValueError("raster must be a non-empty square nested list")
    return rows


# ============================================================================
# Upsampling
# ============================================================================

class UpsampleRequest(BaseModel):
    """Request model for upsampling one LR EnvCF raster."""
    raster: List[List[float]] = Field(
        ...,
        description="LR EnvCF pixels, square, values in [0, 1]"
    )
    factor: int = Field(
        default=4,
        description="Integer scale factor",
        ge=1,
        le=16
    )
    method: Literal["nearest", "bilinear", "kriging", "rbf"] = Field(
        default="bilinear",
        description="Baseline method"
    )
    area_side_m: Optional[float] = Field(
        None,
        description="Side length of the area in meters (default: 1 m per LR cell)",
        gt=0
    )
    kriging: Optional[VariogramConfig] = Field(
        None,
        description="Variogram settings for method 'kriging'"
    )
    rbf: Optional[RbfConfig] = Field(
        None,
        description="Kernel settings for method 'rbf'"
    )

    @field_validator("raster")
    @classmethod
    def check_raster(cls, value: List[List[float]]) -> List[List[float]]:
        return _check_square(value)


class UpsampleResponse(BaseModel):
    """Response model for an upsampled raster."""
    method: str = Field(..., description="Method used")
    factor: int = Field(..., description="Scale factor applied")
    resolution: int = Field(..., description="Output side length in cells")
    raster: List[List[float]] = Field(..., description="HR EnvCF pixels in [0, 1]")


# ============================================================================
# Metrics
# ============================================================================

class MetricsRequest(BaseModel):
    """Request model for scoring a reconstruction against its reference."""
    prediction: List[List[float]] = Field(..., description="Reconstructed raster")
    reference: List[List[float]] = Field(..., description="Reference raster")
    ssim: Optional[SsimConfig] = Field(None, description="SSIM window settings")
    mask_buildings: bool = Field(
        default=False,
        description="Score only pixels below 1.0 in the reference (streets)"
    )

    @field_validator("prediction", "reference")
    @classmethod
    def check_rasters(cls, value: List[List[float]]) -> List[List[float]]:
        return _check_square(value)


class MetricsResponse(BaseModel):
    """Response model for PSNR/SSIM/NMSE."""
    psnr_db: float = Field(..., description="Peak signal-to-noise ratio in dB (peak 1.0, capped at 100)")
    ssim: float = Field(..., description="Mean structural similarity", ge=-1.0, le=1.0)
    nmse: float = Field(..., description="Normalized mean squared error", ge=0.0)


# ============================================================================
# Synthesis
# ============================================================================

class SynthesizeRequest(BaseModel):
    """Request model for generating one synthetic HR/LR pair."""
    seed: int = Field(
        default=0,
        description="City seed",
        ge=0
    )
    hr_resolution: int = Field(
        default=64,
        description="HR side length in cells",
        ge=2
    )
    factor: int = Field(
        default=4,
        description="Scale factor between HR and LR",
        ge=1
    )
    area_side_m: float = Field(
        default=256.0,
        description="Side length of the area in meters",
        gt=0
    )
    city: Optional[CityParams] = Field(
        None,
        description="Building layout parameters (seed is taken from 'seed')"
    )


class SynthesizeResponse(BaseModel):
    """Response model for a synthetic pair."""
    seed: int = Field(..., description="City seed used")
    bs_cell: List[int] = Field(..., description="Base station cell (row, col) on the HR grid")
    hr: List[List[float]] = Field(..., description="HR EnvCF pixels")
    lr: List[List[float]] = Field(..., description="LR EnvCF pixels")
