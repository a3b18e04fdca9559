"""
Process settings for the EnvCF toolkit.

This module handles environment variables and process-wide settings.
Run-level knobs (grid, simulator, schedule, model, optimizer) live in
run_config.py instead.
"""

import os
import subprocess
from datetime import datetime, timezone


def get_build_version() -> str:
    """Generate build version from git commit SHA or timestamp."""
    # Try to get git commit SHA
    try:
        result = subprocess.run(
            ["git", "rev-parse", "--short", "HEAD"],
            capture_output=True,
            text=True,
            timeout=5
        )
        if result.returncode == 0:
            return result.stdout.strip()
    except Exception:
        pass

    # Fallback to timestamp
    return datetime.now(timezone.utc).strftime("%Y%m%d%H%M%S")


class Settings:
    """Process settings with environment variable support."""

    # Application info
    APP_NAME: str = "EnvCF Super-Resolution Toolkit"
    APP_VERSION: str = "1.0.0"
    APP_DESCRIPTION: str = (
        "Reconstructs high-resolution environment-aware channel gain maps from "
        "coarse ones with a conditional denoising diffusion model, and benchmarks "
        "it against classical interpolation baselines."
    )

    BUILD_VERSION: str = os.getenv("BUILD_VERSION", get_build_version())

    # Server settings
    HOST: str = os.getenv("HOST", "0.0.0.0")
    PORT: int = int(os.getenv("PORT", "8000"))

    # Logging
    LOG_LEVEL: str = os.getenv("LOG_LEVEL", "INFO").upper()

    # Where CLI runs write unless --out is given
    RUNS_DIR: str = os.getenv("ENVCF_RUNS_DIR", "runs")

    # Parallelism
    NUM_WORKERS: int = int(os.getenv("ENVCF_NUM_WORKERS", str(os.cpu_count() or 1)))
    TORCH_THREADS: int = int(os.getenv("ENVCF_TORCH_THREADS", "0"))  # 0 = torch default

    # Service limits
    MAX_API_RESOLUTION: int = 256

    # API settings
    API_PREFIX: str = "/api/radiomap"
    CORS_ORIGINS: list[str] = ["*"]


settings = Settings()
