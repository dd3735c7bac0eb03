from fastapi import APIRouter, Depends, HTTPException, Query, status
from sqlalchemy.orm import Session
from typing import List, Optional, Dict, Any
import structlog

from fiedlernet.database.database import get_db
from fiedlernet.database.models import ExperimentRun

logger = structlog.get_logger()
router = APIRouter()


@router.get("/runs", response_model=List[Dict[str, Any]])
async def list_runs(
    experiment: Optional[str] = None,
    limit: int = Query(100, ge=1, le=1000),
    db: Session = Depends(get_db),
):
    """Recorded (regularizer, seed) runs, newest first"""
    try:
        query = db.query(ExperimentRun)
        if experiment:
            query = query.filter(ExperimentRun.experiment == experiment)
        runs = query.order_by(ExperimentRun.id.desc()).limit(limit).all()
        return [run.to_dict() for run in runs]
    except Exception as e:
        logger.error("Failed to list experiment runs", experiment=experiment, error=str(e))
        raise HTTPException(
            status_code=status.HTTP_500_INTERNAL_SERVER_ERROR,
            detail="Failed to list experiment runs"
        )
