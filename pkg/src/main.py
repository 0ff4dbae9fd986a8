import logging

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from routers.guard import router as guard_router
from routers.ledger import router as ledger_router

logger = logging.getLogger(__name__)

app = FastAPI(title="ledgerguard", summary="Control API of a running guard")


@app.middleware("http")
async def catch_exceptions_middleware(request: Request, call_next):
    try:
        return await call_next(request)
    except Exception:
        logger.exception("Unhandled error during %s %s", request.method, request.url)
        return JSONResponse(
            status_code=500,
            content={"detail": "Internal server error"},
        )


app.include_router(guard_router)
app.include_router(ledger_router)
