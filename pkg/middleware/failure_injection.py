from __future__ import annotations

import logging
from datetime import date
from typing import List, NamedTuple

from starlette.middleware.base import BaseHTTPMiddleware
from starlette.requests import Request
from starlette.responses import JSONResponse

logger = logging.getLogger(__name__)


class LoggedRequest(NamedTuple):
    method: str
    path: str
    query: str
    status: int


class FailureInjectionMiddleware(BaseHTTPMiddleware):
    """Records every request and answers 503 for injected (dataset, date) pairs.

    State lives on the app: ``app.state.request_log`` (list of LoggedRequest) and
    ``app.state.failures`` (set of (dataset, date)).
    """

    async def dispatch(self, request: Request, call_next):
        state = request.app.state
        parts = request.url.path.strip("/").split("/")
        if len(parts) == 3 and parts[0] == "datasets" and parts[2] == "data":
            try:
                day = date.fromisoformat(request.query_params.get("date", ""))
            except ValueError:
                day = None
            if day is not None and (parts[1], day) in state.failures:
                state.request_log.append(LoggedRequest(request.method, request.url.path, request.url.query, 503))
                logger.info("injected failure", extra={"fields": {"dataset": parts[1], "date": day.isoformat()}})
                return JSONResponse(status_code=503, content={"detail": "Injected failure"})
        response = await call_next(request)
        state.request_log.append(LoggedRequest(request.method, request.url.path, request.url.query, response.status_code))
        return response


def data_requests(log: List[LoggedRequest]) -> List[LoggedRequest]:
    return [r for r in log if r.path.startswith("/datasets/")]
