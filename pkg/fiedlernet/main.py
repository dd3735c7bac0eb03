from fastapi import FastAPI, Request
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse
from contextlib import asynccontextmanager
import structlog

from fiedlernet.api import bounds, experiments, graphs
from fiedlernet.config import settings
from fiedlernet.core.errors import FiedlerNetError
from fiedlernet.core.log import configure_logging, is_configured
from fiedlernet.database.database import init_db

logger = structlog.get_logger()


@asynccontextmanager
async def lifespan(app: FastAPI):
    """Application lifespan events"""
    if not is_configured():
        configure_logging()
    init_db()
    logger.info("Starting FiedlerNet API", version=settings.app_version)

    yield

    logger.info("Shutting down FiedlerNet API")


# Create FastAPI app
app = FastAPI(
    title=f"{settings.app_name} API",
    version=settings.app_version,
    description="Spectral connectivity, Fiedler-regularized training runs and generalization bounds",
    docs_url="/docs",
    redoc_url="/redoc",
    lifespan=lifespan,
)

# Add middleware
app.add_middleware(
    CORSMiddleware,
    allow_origins=settings.allowed_origins,
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"],
)

app.include_router(bounds.router, prefix="/bounds", tags=["bounds"])
app.include_router(graphs.router, prefix="/graphs", tags=["graphs"])
app.include_router(experiments.router, prefix="/experiments", tags=["experiments"])


@app.get("/")
async def root():
    """Root endpoint"""
    return {
        "message": f"{settings.app_name} API",
        "version": settings.app_version,
        "status": "running"
    }


@app.get("/health")
async def health_check():
    """Health check endpoint"""
    return {
        "status": "healthy",
        "message": "API is running"
    }


@app.exception_handler(FiedlerNetError)
async def domain_error_handler(request: Request, exc: FiedlerNetError):
    """Domain errors that escape a router become 400s"""
    logger.warning("Unhandled domain error", path=request.url.path, error=str(exc))
    return JSONResponse(status_code=400, content={"error": str(exc), "type": type(exc).__name__})


if __name__ == "__main__":
    import uvicorn
    uvicorn.run(
        "fiedlernet.main:app",
        host=settings.api_host,
        port=settings.api_port,
        reload=settings.debug,
        log_level=settings.log_level.lower()
    )
