import anyio
from fastapi import APIRouter, Depends, HTTPException, status

from apps.guard.guardService import GuardService
from apps.validator.validatorService import validate_block
from models.models import BlockVerdict
from schemas.guard import BlockOut, FileOut, LedgerOut
from utils.dependencies import get_guard_service
from utils.errors import BlockOutOfRange, UnreadableLayout

router = APIRouter(prefix="/ledger", tags=["ledger"])


@router.get("", response_model=LedgerOut)
async def get_ledger(guard: GuardService = Depends(get_guard_service)) -> LedgerOut:
    store = guard.store
    return LedgerOut(
        height=store.height,
        files=[FileOut.from_layout(f) for f in store.files()],
    )


@router.get("/blocks/{number}", response_model=BlockOut)
async def get_block(
    number: int, guard: GuardService = Depends(get_guard_service)
) -> BlockOut:
    store = guard.store
    try:
        layout = store.file_of(number)
    except BlockOutOfRange:
        raise HTTPException(
            status_code=status.HTTP_404_NOT_FOUND, detail="Block not found"
        )
    loc = store.location(number)
    try:
        raw = await anyio.to_thread.run_sync(store.read_block_bytes, number)
        verdict = validate_block(raw, guard.trust)
    except UnreadableLayout:
        verdict = BlockVerdict.MALFORMED
    return BlockOut(
        number=number,
        file_id=layout.file_id,
        offset=loc.offset if loc else None,
        length=loc.length if loc else None,
        verdict=verdict,
    )
