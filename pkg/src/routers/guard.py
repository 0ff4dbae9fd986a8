from fastapi import APIRouter, Depends, HTTPException, status

from apps.guard.guardService import GuardService
from schemas.guard import CycleOut, GuardStatus
from utils.dependencies import get_guard_service
from utils.errors import CycleInProgress

router = APIRouter(prefix="/guard", tags=["guard"])


@router.get("/status", response_model=GuardStatus)
async def get_status(guard: GuardService = Depends(get_guard_service)) -> GuardStatus:
    last = guard.last_cycle
    return GuardStatus(
        mode=guard.config.mode,
        cycles_completed=guard.cycles_completed,
        cycles_skipped=guard.cycles_skipped,
        in_flight=guard.in_flight,
        last_cycle=CycleOut.from_cycle(last) if last else None,
    )


@router.post("/cycles", response_model=CycleOut)
async def trigger_cycle(guard: GuardService = Depends(get_guard_service)) -> CycleOut:
    try:
        result = await guard.run_cycle()
    except CycleInProgress:
        raise HTTPException(
            status_code=status.HTTP_409_CONFLICT,
            detail="A guard cycle is already running",
        )
    return CycleOut.from_cycle(result)
