"""HTTP surface over the shared engine.

Only natural-language questions are accepted; there is no endpoint that
takes SQL for execution.
"""
from __future__ import annotations

import json
from datetime import datetime
from typing import Literal

from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from pydantic import BaseModel, Field

from thor.audit import AuditFilter
from thor.clock import utc
from thor.domain import FinalStatus
from thor.engine import Engine, OutOfScope, UnknownDatasource
from thor.errors import AuditFailure, DatasourceUnavailable, PreconditionError, ProviderUnavailable


class QueryRequest(BaseModel):
    question: str = Field(min_length=1)
    datasource_id: str | None = None
    verbosity: Literal["concise", "detailed"] = "concise"


def answer_document(answer) -> dict:
    """The QueryAnswer document shared by HTTP and ``thor ask --format json``."""
    return answer.to_dict()


def _error(status: int, kind: str, message: str, **extra) -> JSONResponse:
    return JSONResponse(status_code=status, content={"error": kind, "message": message, **extra})


def create_app(engine: Engine) -> FastAPI:
    app = FastAPI(title="thor", version="0.1.0")

    @app.exception_handler(RequestValidationError)
    async def malformed(_request: Request, err: RequestValidationError):
        fields = [
            {"field": ".".join(str(p) for p in e["loc"] if p != "body"), "message": e["msg"]} for e in err.errors()
        ]
        return _error(400, "malformed_request", "request body failed validation", fields=fields)

    # plain ``def`` handlers run in the worker pool, one pipeline per request
    @app.post("/v1/query")
    def query(req: QueryRequest):
        try:
            answer = engine.ask(req.question, req.datasource_id, verbosity=req.verbosity)
        except OutOfScope as err:
            return _error(422, "out_of_scope", err.decision.explanation)
        except UnknownDatasource as err:
            return _error(404, "unknown_datasource", str(err.args[0]))
        except (DatasourceUnavailable, ProviderUnavailable, AuditFailure) as err:
            return _error(503, "unavailable", str(err))
        except PreconditionError as err:
            return _error(400, "malformed_request", str(err))
        doc = answer_document(answer)
        if answer.final_status is FinalStatus.REFUSED:
            verdict = answer.refusal
            return JSONResponse(
                status_code=403,
                content={
                    "error": "refused",
                    "reason": verdict.refusal_reason.value,
                    "detail": list(verdict.detail),
                    "answer": doc,
                },
            )
        return doc

    @app.get("/v1/audit")
    def audit(
        session_id: str | None = None,
        since: datetime | None = None,
        until: datetime | None = None,
        final_status: str | None = None,
        kind: str | None = None,
    ):
        if engine.audit is None:
            return {"records": []}
        flt = AuditFilter(
            session_id,
            utc(since) if since else None,
            utc(until) if until else None,
            final_status,
            kind,
        )
        return {"records": [json.loads(r.to_json()) for r in engine.audit.query(flt)]}

    @app.get("/v1/schema/{datasource_id}")
    def schema(datasource_id: str):
        if datasource_id not in engine.datasources:
            return _error(404, "unknown_datasource", f"unknown datasource {datasource_id!r}")
        return engine.datasources[datasource_id].catalog.to_dict()

    @app.get("/v1/health")
    def health():
        return {"status": "ok", "datasources": sorted(engine.datasources)}

    return app
