from fastapi import HTTPException, Request, status

from apps.guard.guardService import GuardService


async def get_guard_service(request: Request) -> GuardService:
    guard = getattr(request.app.state, "guard", None)
    if guard is None:
        raise HTTPException(
            status_code=status.HTTP_503_SERVICE_UNAVAILABLE,
            detail="No guard service is attached",
        )
    return guard
