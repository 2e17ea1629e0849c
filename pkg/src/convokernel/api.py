"""HTTP surface over the conversation engine.

Routes mirror the engine's public operations one-to-one; all request and
response bodies are UTF-8 JSON.  Malformed requests are rejected by the
engine's own event validation and surface as 400s with an ``error`` field,
so no session state is ever created for a bad request.
"""

from __future__ import annotations

from typing import Any

from fastapi import Body, FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse

from .engine import Engine, TurnEvent
from .errors import PackValidationError, ProtocolError

__all__ = ["create_app"]


def _error(status_code: int, message: str) -> JSONResponse:
    return JSONResponse(status_code=status_code, content={"error": message})


def create_app(engine: Engine) -> FastAPI:
    """Build the JSON API for one engine instance."""
    app = FastAPI(title="convokernel", docs_url=None, redoc_url=None)
    app.state.engine = engine

    @app.exception_handler(ProtocolError)
    async def protocol_error(_request: Request, err: ProtocolError):
        return _error(400, str(err))

    @app.exception_handler(RequestValidationError)
    async def validation_error(_request: Request, err: RequestValidationError):
        return _error(400, "request body must be a JSON object")

    @app.post("/v1/conversations/{conversation_id}/turns")
    def post_turn(conversation_id: str, payload: dict[str, Any] = Body(...)):
        event = TurnEvent(
            conversation_id=conversation_id,
            user_id=payload.get("user_id"),
            utterance=payload.get("utterance"),
            asr_confidence=payload.get("asr_confidence", 1.0),
            timestamp_ms=payload.get("timestamp_ms", 0),
        )
        return engine.handle_turn(event).to_dict()

    @app.post("/v1/conversations/{conversation_id}/rating")
    def post_rating(conversation_id: str, payload: dict[str, Any] = Body(...)):
        if not engine.has_conversation(conversation_id):
            return _error(404, f"unknown conversation {conversation_id!r}")
        rating = payload.get("rating")
        engine.rate(conversation_id, rating)
        return {"conversation_id": conversation_id, "rating": rating}

    @app.get("/v1/conversations/{conversation_id}/trace")
    def get_trace(conversation_id: str):
        if not engine.has_conversation(conversation_id):
            return _error(404, f"unknown conversation {conversation_id!r}")
        return engine.trace_for(conversation_id)

    @app.post("/v1/admin/reload")
    def post_reload():
        try:
            engine.reload_flows()
        except PackValidationError as err:
            return _error(400, str(err))
        return {"status": "reloaded"}

    @app.get("/v1/health")
    def get_health():
        return {"status": "ok"}

    return app
