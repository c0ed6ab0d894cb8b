import logging
from contextlib import asynccontextmanager
from typing import AsyncGenerator

import uvicorn
from fastapi import FastAPI, Request, status
from fastapi.responses import JSONResponse
from starlette.exceptions import HTTPException

from app.core.config import settings
from app.core.errors import CranError, InfeasibleError, NotConvergedError
from app.core.logging import initialize_logging, log_debug, log_info, log_warning
from app.core.sink import result_sink
from app.routers import health, instances, solver

# Initialize logging first
initialize_logging()
logger = logging.getLogger(__name__)


@asynccontextmanager
async def lifespan(api: FastAPI) -> AsyncGenerator[None, None]:
    # Startup
    log_debug(logger, "Initializing result sink")
    result_sink.initialize()

    yield

    # Shutdown
    result_sink.close()


app = FastAPI(
    title=settings.app_name,
    version=settings.version,
    description="Two-stage network power minimization for user-centric C-RAN",
    openapi_tags=[
        {"name": "instances", "description": "Channel realizations"},
        {"name": "solver", "description": "Admission, RRH selection and comparison methods"},
        {"name": "health", "description": "Health check endpoints"},
    ],
    lifespan=lifespan,
)

log_info(
    logger,
    f"Starting {settings.app_name} version {settings.version} on {settings.app_host()}:{settings.app_port()}",
)

# Include routers
app.include_router(health.router, tags=["health"])
app.include_router(instances.router, prefix="/api/instances", tags=["instances"])
app.include_router(solver.router, prefix="/api", tags=["solver"])


def _error_response(request: Request, status_code: int, message: str) -> JSONResponse:
    log_warning(
        logger,
        f"Request failed: {status_code} - {message}",
        status_code=status_code,
        path=str(request.url.path),
        method=request.method,
    )
    return JSONResponse(status_code=status_code, content={"message": message, "status_code": status_code})


@app.exception_handler(HTTPException)
async def custom_http_exception_handler(request: Request, ex: HTTPException) -> JSONResponse:
    message = f"HTTP {ex.status_code}: {ex.detail}"
    if ex.status_code == status.HTTP_404_NOT_FOUND:
        message = f"Resource not found: {request.url.path}"
    return _error_response(request, ex.status_code, message)


@app.exception_handler(CranError)
async def simulation_exception_handler(request: Request, ex: CranError) -> JSONResponse:
    if isinstance(ex, ValueError):
        code = status.HTTP_400_BAD_REQUEST
    elif isinstance(ex, InfeasibleError):
        code = status.HTTP_409_CONFLICT
    elif isinstance(ex, NotConvergedError):
        code = status.HTTP_422_UNPROCESSABLE_ENTITY
    else:
        code = status.HTTP_500_INTERNAL_SERVER_ERROR
    return _error_response(request, code, f"{type(ex).__name__}: {ex}")


@app.exception_handler(Exception)
async def general_exception_handler(request: Request, ex: Exception) -> JSONResponse:
    log_warning(
        logger,
        f"Unhandled exception occurred: {type(ex).__name__}",
        exc_info=ex,
        path=str(request.url.path),
        method=request.method,
    )

    return JSONResponse(
        status_code=status.HTTP_500_INTERNAL_SERVER_ERROR,
        content={
            "message": f"Internal server error: {type(ex).__name__}",
            "status_code": status.HTTP_500_INTERNAL_SERVER_ERROR,
            "path": str(request.url.path),
        },
    )


def serve(host: str = "", port: int = 0) -> None:
    uvicorn.run(
        app,
        host=host or settings.app_host(),
        port=port or settings.app_port(),
        log_config=None,
        log_level=None,
    )


if __name__ == "__main__":
    serve()
