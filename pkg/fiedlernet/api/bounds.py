from fastapi import APIRouter, HTTPException, status
from pydantic import BaseModel
from typing import Optional
import math
import structlog

from fiedlernet.core.errors import FiedlerNetError
from fiedlernet.services.bounds import BoundInputs, generalization_bound, network_rademacher_bound

logger = structlog.get_logger()
router = APIRouter()


class BoundsResponse(BaseModel):
    rademacher: Optional[float] = None
    generalization: Optional[float] = None
    unbounded: bool
    weighted: bool


@router.post("", response_model=BoundsResponse)
async def compute_bounds(inputs: BoundInputs):
    """Network Rademacher bound and the generalization bound built on it"""
    try:
        rademacher = network_rademacher_bound(inputs)
    except (FiedlerNetError, ValueError) as e:
        logger.error("Failed to compute bounds", error=str(e))
        raise HTTPException(status_code=status.HTTP_400_BAD_REQUEST, detail=str(e))

    # JSON has no infinity; unbounded results come back as null
    if math.isinf(rademacher):
        return BoundsResponse(unbounded=True, weighted=inputs.c_vectors is not None)
    return BoundsResponse(
        rademacher=rademacher,
        generalization=generalization_bound(inputs, rademacher),
        unbounded=False,
        weighted=inputs.c_vectors is not None,
    )
