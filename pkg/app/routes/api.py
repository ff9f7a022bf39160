"""
REST API endpoints for the workbench.
"""
import structlog
from fastapi import APIRouter

from app.config import get_settings
from app.models.config_models import RunConfig
from app.models.response_models import (
    ConfluenceRequest,
    ConfluenceResponse,
    IdentityRequest,
    IdentityResponse,
    NormalizeRequest,
    NormalizeResponse,
    VerifyRequest,
    VerifyResponse,
)
from app.services.workbench_service import workbench_service

logger = structlog.get_logger()
router = APIRouter(prefix="/api/v1", tags=["api"])
settings = get_settings()


@router.post("/normalize", response_model=NormalizeResponse)
async def normalize(request: NormalizeRequest) -> NormalizeResponse:
    """
    Bring an expression into normal form.

    Args:
        request: expression and number of generators

    Returns:
        NormalizeResponse: canonical text of the normal form
    """
    normal_form = workbench_service.normalize(request.expr, request.n)
    logger.info("Expression normalized", n=request.n, length=len(request.expr))
    return NormalizeResponse(expr=request.expr, n=request.n, normal_form=normal_form)


@router.post("/identity", response_model=IdentityResponse)
async def identity(request: IdentityRequest) -> IdentityResponse:
    result = workbench_service.identity(request.lhs, request.rhs, request.n)
    return IdentityResponse(holds=result.holds, residual=str(result.residual))


@router.post("/confluence", response_model=ConfluenceResponse)
async def confluence(request: ConfluenceRequest) -> ConfluenceResponse:
    report = workbench_service.confluence(request.n, request.max_len, seed=request.seed)
    return ConfluenceResponse(confluent=report.confluent, report=report)


@router.post("/verify", response_model=VerifyResponse)
async def verify(request: VerifyRequest) -> VerifyResponse:
    """
    Run the selected verification suites on a small truncation.

    Args:
        request: run parameters

    Returns:
        VerifyResponse: overall verdict and the sorted records
    """
    config = RunConfig(**request.model_dump(exclude_none=True))
    records = workbench_service.run_verification(config)
    passed = all(r.passed for r in records)
    logger.info("Verification requested", n=config.n, q=config.q, passed=passed)
    return VerifyResponse(passed=passed, records=records)
