"""Models package for the EnvCF toolkit."""

from .rasters import (
    DEFAULT_MIN_DB,
    DEFAULT_MAX_DB,
    RoleTag,
    GridSpec,
    EnvironmentMap,
    ChannelGainMap,
    EnvCF,
)
from .requests import (
    UpsampleRequest,
    UpsampleResponse,
    MetricsRequest,
    MetricsResponse,
    SynthesizeRequest,
    SynthesizeResponse,
)

__all__ = [
    # Raster types
    "DEFAULT_MIN_DB",
    "DEFAULT_MAX_DB",
    "RoleTag",
    "GridSpec",
    "EnvironmentMap",
    "ChannelGainMap",
    "EnvCF",
    # Request/Response models
    "UpsampleRequest",
    "UpsampleResponse",
    "MetricsRequest",
    "MetricsResponse",
    "SynthesizeRequest",
    "SynthesizeResponse",
]
