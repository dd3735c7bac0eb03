from fastapi import APIRouter, HTTPException, status
from pydantic import BaseModel, Field, model_validator
from typing import List, Literal, Optional
import structlog

from fiedlernet.config import settings
from fiedlernet.core.errors import FiedlerNetError
from fiedlernet.core.graph import import_edge_list
from fiedlernet.services.inspection import GraphInspection, inspect_graph, inspect_model
from fiedlernet.services.network import init_model

logger = structlog.get_logger()
router = APIRouter()


class InspectRequest(BaseModel):
    layer_dims: Optional[List[int]] = None
    seed: int = 0
    activation: Literal["relu", "tanh"] = "relu"
    include_biases: bool = False
    edge_list: Optional[str] = Field(None, description="'n m' header followed by 'a b w' lines")

    @model_validator(mode="after")
    def _one_source(self):
        if (self.layer_dims is None) == (self.edge_list is None):
            raise ValueError("give exactly one of layer_dims or edge_list")
        return self


@router.post("/inspect", response_model=GraphInspection)
async def inspect(request: InspectRequest):
    """Connectivity summary of a freshly initialised architecture or an explicit edge list"""
    try:
        if request.edge_list is not None:
            return inspect_graph(import_edge_list(request.edge_list))
        if sum(request.layer_dims) > 50 * settings.dense_solver_max_n:
            raise HTTPException(
                status_code=status.HTTP_422_UNPROCESSABLE_ENTITY,
                detail="architecture too large for an interactive request",
            )
        model = init_model(request.layer_dims, activation=request.activation, seed=request.seed)
        return inspect_model(model, include_biases=request.include_biases)
    except HTTPException:
        raise
    except (FiedlerNetError, ValueError) as e:
        logger.error("Failed to inspect graph", error=str(e))
        raise HTTPException(status_code=status.HTTP_400_BAD_REQUEST, detail=str(e))
