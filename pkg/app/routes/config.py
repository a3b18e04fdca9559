"""
API routes for run configuration.

This module exposes the default run configuration and the named presets
together with their config hashes.
"""

import logging
from typing import Any, Dict, List

from fastapi import APIRouter, HTTPException
from pydantic import BaseModel, Field

from app.config import PRESETS, get_default_config, get_preset
from app.errors import ConfigError

logger = logging.getLogger(__name__)

router = APIRouter()


class ConfigResponse(BaseModel):
    """Response model for a run configuration."""
    preset: str = Field(..., description="Preset name")
    config_hash: str = Field(..., description="SHA-256 of the canonical config JSON")
    config: Dict[str, Any] = Field(..., description="Full run configuration")


class PresetListResponse(BaseModel):
    presets: List[str] = Field(..., description="Available preset names")


@router.get(
    "/config",
    response_model=ConfigResponse,
    summary="Get Default Configuration",
    description="The desk-scale default run configuration and its hash."
)
async def get_config() -> ConfigResponse:
    """Get the default run configuration."""
    config = get_default_config()
    return ConfigResponse(
        preset="desk",
        config_hash=config.config_hash(),
        config=config.model_dump(mode="json"),
    )


@router.get(
    "/config/presets",
    response_model=PresetListResponse,
    summary="List Presets"
)
async def list_presets() -> PresetListResponse:
    return PresetListResponse(presets=sorted(PRESETS))


@router.get(
    "/config/presets/{name}",
    response_model=ConfigResponse,
    summary="Get a Preset",
    description="A named run configuration preset ('desk', 'smoke' or 'full')."
)
async def get_named_preset(name: str) -> ConfigResponse:
    """Get one preset by name."""
    try:
        config = get_preset(name)
    except ConfigError as exc:
        raise HTTPException(status_code=404, detail=str(exc))
    logger.debug(f"Served preset {name}")
    return ConfigResponse(
        preset=name,
        config_hash=config.config_hash(),
        config=config.model_dump(mode="json"),
    )
