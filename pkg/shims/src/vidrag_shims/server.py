"""FastAPI server exposing one engine kind behind the wire protocol.

POST /v1/extract accepts the shared envelope, validates the request payload
against the published schemas, dispatches to the engine, and validates its
own result before replying. GET /healthz reports the kind, model and ready
flag. Engines are stateless per request; the model loads once at startup.
"""

from __future__ import annotations

import logging

import jsonschema
from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .engines import Engine, ShimRequestError, build_engine
from .schemas import SchemaSet

logger = logging.getLogger(__name__)


def _error(code: str, message: str, status: int = 200) -> JSONResponse:
    return JSONResponse(
        {"ok": False, "error": {"code": code, "message": message}}, status_code=status
    )


def create_app(kind: str, model: str = "builtin", schemas_dir=None,
               engine: Engine | None = None) -> FastAPI:
    schemas = SchemaSet(schemas_dir)
    if engine is None:
        engine, model_label = build_engine(kind, model)
    else:
        model_label = model
    app = FastAPI(title=f"vidrag {kind} shim")

    @app.get("/healthz")
    async def healthz():
        return {"kind": kind, "model": model_label, "ready": True}

    @app.post("/v1/extract")
    async def extract(request: Request):
        try:
            body = await request.json()
        except Exception:
            return _error("malformed_request", "body is not JSON", status=400)
        try:
            jsonschema.validate(body, schemas.envelope("request"))
        except jsonschema.ValidationError as exc:
            return _error("malformed_request", exc.message, status=400)
        if body["kind"] != kind:
            return _error(
                "wrong_kind", f"this server handles {kind!r}, not {body['kind']!r}", status=400
            )
        payload = body["payload"]
        try:
            jsonschema.validate(payload, schemas.payload(kind, "request"))
        except jsonschema.ValidationError as exc:
            return _error("malformed_request", exc.message, status=400)

        try:
            result = engine(payload)
        except ShimRequestError as exc:
            return _error(exc.code, exc.message)
        except Exception as exc:  # noqa: BLE001 - model errors map to the envelope
            logger.exception("engine failure")
            return _error("internal_error", str(exc))

        try:
            jsonschema.validate(result, schemas.payload(kind, "result"))
        except jsonschema.ValidationError as exc:
            logger.error("engine produced schema-invalid result: %s", exc.message)
            return _error("internal_error", f"shim result failed schema: {exc.message}")
        return {"ok": True, "result": result}

    return app
