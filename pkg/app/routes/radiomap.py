"""
API routes for radio map reconstruction.

This module defines the FastAPI endpoints for upsampling an LR EnvCF with
a classical baseline, scoring a reconstruction and synthesizing a pair.
Domain errors raised here become 400 responses through the handler in
app.main.
"""

import logging

import numpy as np
from fastapi import APIRouter, HTTPException

from app.config import SimulatorConfig, CityParams, settings
from app.models import (
    EnvCF,
    GridSpec,
    MetricsRequest,
    MetricsResponse,
    RoleTag,
    SynthesizeRequest,
    SynthesizeResponse,
    UpsampleRequest,
    UpsampleResponse,
)
from app.services import (
    compose_envcf,
    downsample,
    gen_city,
    make_grid,
    score_pair,
    simulate_gain,
    upsample,
)

logger = logging.getLogger(__name__)

router = APIRouter()


def _check_size(resolution: int) -> None:
    if resolution > settings.MAX_API_RESOLUTION:
        raise HTTPException(
            status_code=400,
            detail=f"Output resolution {resolution} exceeds the limit of {settings.MAX_API_RESOLUTION}"
        )


@router.post(
    "/upsample",
    response_model=UpsampleResponse,
    summary="Upsample an LR EnvCF",
    description=(
        "Reconstruct an HR EnvCF from an LR one with nearest, bilinear, "
        "ordinary kriging or RBF interpolation."
    )
)
def upsample_raster(request: UpsampleRequest) -> UpsampleResponse:
    """Upsample one raster with a classical baseline."""
    n = len(request.raster)
    _check_size(n * request.factor)
    logger.info(f"Upsample: method={request.method}, {n}x{n}, factor={request.factor}")
    f_lr = EnvCF(
        grid=GridSpec(area_side_m=request.area_side_m or float(n), resolution=n),
        pixels=np.asarray(request.raster, dtype=np.float64),
        role=RoleTag.LR,
    )
    out = upsample(request.method, f_lr, request.factor, kriging=request.kriging, rbf=request.rbf)

    return UpsampleResponse(
        method=request.method,
        factor=request.factor,
        resolution=out.resolution,
        raster=out.pixels.tolist(),
    )


@router.post(
    "/metrics",
    response_model=MetricsResponse,
    summary="Score a Reconstruction",
    description="PSNR (peak 1.0), SSIM (Gaussian window) and NMSE of a prediction against its reference."
)
def score_reconstruction(request: MetricsRequest) -> MetricsResponse:
    """Compute the three reconstruction metrics for one pair."""
    prediction = np.asarray(request.prediction, dtype=np.float64)
    reference = np.asarray(request.reference, dtype=np.float64)
    mask = reference < 1.0 if request.mask_buildings else None
    score = score_pair(prediction, reference, request.ssim, mask)
    return MetricsResponse(psnr_db=score.psnr_db, ssim=score.ssim, nmse=score.nmse)


@router.post(
    "/synthesize",
    response_model=SynthesizeResponse,
    summary="Synthesize an EnvCF Pair",
    description="Generate a synthetic city, simulate its channel gain and return the HR/LR EnvCF pair."
)
def synthesize_pair(request: SynthesizeRequest) -> SynthesizeResponse:
    """Generate one HR/LR pair for a seed."""
    _check_size(request.hr_resolution)
    if request.hr_resolution % request.factor:
        raise HTTPException(
            status_code=400,
            detail=f"factor {request.factor} does not divide hr_resolution {request.hr_resolution}"
        )
    city = (request.city or CityParams()).model_copy(update={"seed": request.seed})
    logger.info(f"Synthesize: seed={request.seed}, {request.hr_resolution}x{request.hr_resolution}")
    grid = make_grid(request.area_side_m, request.hr_resolution)
    env = gen_city(grid, city)
    hr = compose_envcf(env, simulate_gain(env, SimulatorConfig()))
    lr = downsample(hr, request.factor)

    return SynthesizeResponse(
        seed=request.seed,
        bs_cell=list(hr.bs_cell),
        hr=hr.pixels.tolist(),
        lr=lr.pixels.tolist(),
    )
