"""
EnvCF Super-Resolution Toolkit - FastAPI Application

HTTP surface over the toolkit: classical upsampling baselines, the
reconstruction metrics, synthetic pair generation and the run config
presets. Training and diffusion sampling run through the `envcf` CLI.

Run with:
    uvicorn app.main:app --reload

or:
    envcf serve --port 8000
"""

import logging
import time
from contextlib import asynccontextmanager
from numbers import Number

import torch
from fastapi import FastAPI, Request
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse

from app.config import settings
from app.errors import EnvCFError
from app.routes import radiomap_router, config_router

# Configure logging
logging.basicConfig(
    level=getattr(logging, settings.LOG_LEVEL),
    format="%(asctime)s - %(name)s - %(levelname)s - %(message)s"
)
logger = logging.getLogger(__name__)

SLOW_REQUEST_S = 0.5


@asynccontextmanager
async def lifespan(app: FastAPI):
    """Log the build and pin torch threads before serving."""
    logger.info(f"Starting {settings.APP_NAME} v{settings.APP_VERSION} (build {settings.BUILD_VERSION})")
    if settings.TORCH_THREADS > 0:
        torch.set_num_threads(settings.TORCH_THREADS)
    logger.info(
        f"Routes under {settings.API_PREFIX}, docs at /docs, "
        f"max output {settings.MAX_API_RESOLUTION}x{settings.MAX_API_RESOLUTION}, "
        f"torch threads {torch.get_num_threads()}"
    )
    yield
    logger.info(f"Shutting down {settings.APP_NAME}")


app = FastAPI(
    title=settings.APP_NAME,
    version=settings.APP_VERSION,
    description=settings.APP_DESCRIPTION,
    docs_url="/docs",
    redoc_url="/redoc",
    lifespan=lifespan,
)

app.add_middleware(
    CORSMiddleware,
    allow_origins=settings.CORS_ORIGINS,
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"],
)


def _jsonable(value):
    if value is None or isinstance(value, (str, bool, int, float)):
        return value
    if isinstance(value, Number):
        return float(value)
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    return str(value)


@app.exception_handler(EnvCFError)
async def envcf_error_handler(request: Request, exc: EnvCFError) -> JSONResponse:
    """Domain errors are client errors: 400 with the message and diagnostics."""
    logger.info(f"{request.method} {request.url.path} rejected: {exc}")
    return JSONResponse(
        status_code=400,
        content={
            "detail": str(exc),
            "error": type(exc).__name__,
            "diagnostics": {k: _jsonable(v) for k, v in exc.diagnostics.items()},
        },
    )


@app.middleware("http")
async def add_process_time(request: Request, call_next):
    """Time each request in milliseconds; slow ones are logged as warnings."""
    start = time.perf_counter()
    response = await call_next(request)
    elapsed_ms = (time.perf_counter() - start) * 1000
    response.headers["X-Process-Time"] = f"{elapsed_ms:.2f}"

    log = logger.warning if elapsed_ms > SLOW_REQUEST_S * 1000 else logger.debug
    log(f"{request.method} {request.url.path} -> {response.status_code} in {elapsed_ms:.2f}ms")
    return response


app.include_router(radiomap_router, prefix=settings.API_PREFIX, tags=["Radio Map"])
app.include_router(config_router, prefix=settings.API_PREFIX, tags=["Configuration"])


@app.get("/", include_in_schema=False)
async def root():
    return {
        "message": settings.APP_NAME,
        "version": settings.APP_VERSION,
        "docs": "/docs",
        "api": settings.API_PREFIX,
    }


@app.get("/api/version")
async def get_version():
    """Version and build identifier."""
    return {
        "version": settings.APP_VERSION,
        "build": settings.BUILD_VERSION,
    }


@app.get("/health")
async def health_check():
    """Liveness plus the torch runtime the service samples with."""
    return {
        "status": "healthy",
        "version": settings.APP_VERSION,
        "build": settings.BUILD_VERSION,
        "torch": torch.__version__,
        "cuda_available": torch.cuda.is_available(),
    }
