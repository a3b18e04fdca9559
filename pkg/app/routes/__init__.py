"""Routes package for the EnvCF toolkit."""

from .radiomap import router as radiomap_router
from .config import router as config_router

__all__ = ["radiomap_router", "config_router"]
