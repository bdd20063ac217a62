"""HTTP surface for the workbench UI and other clients.

Read-mostly: the only mutation is POST /ingest/confirm, the UI's one write
need. All bodies are canonical JSON (sorted keys) so responses stay
byte-stable; errors serialize as {code, detail} with 404 for unknown ids
and 400 for bad input.
"""

from __future__ import annotations

from typing import Optional

from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse, RedirectResponse
from pydantic import BaseModel

from .engine import Engine
from .errors import EngineError
from .jsonutil import canonical


class CanonicalJSONResponse(JSONResponse):
    def render(self, content) -> bytes:
        return canonical(content).encode("utf-8")


class QueryBody(BaseModel):
    text: str


class SuggestBody(BaseModel):
    label: str
    k: Optional[int] = None


class ConfirmBody(BaseModel):
    form: str
    field: str
    cvt: str
    concept: Optional[str] = None


def create_app(engine: Engine, ui_dir: Optional[str] = None) -> FastAPI:
    app = FastAPI(title="idm", default_response_class=CanonicalJSONResponse)

    @app.exception_handler(EngineError)
    async def engine_error(request: Request, exc: EngineError):
        status = 404 if exc.not_found else 400
        return CanonicalJSONResponse({"code": exc.code, "detail": exc.detail},
                                     status_code=status)

    @app.exception_handler(RequestValidationError)
    async def bad_body(request: Request, exc: RequestValidationError):
        return CanonicalJSONResponse({"code": "BadRequest", "detail": str(exc)},
                                     status_code=400)

    @app.get("/schema/cvts")
    def schema_cvts():
        return [engine.schema.cvt_descriptor(c) for c in engine.schema.all_cvts()]

    @app.get("/schema/mets")
    def schema_mets():
        return [engine.schema.met_descriptor(m) for m in engine.schema.all_mets()]

    @app.get("/schema/classifications")
    def schema_classifications():
        return engine.schema.classification_records()

    @app.get("/schema/units")
    def schema_units():
        return {"dimensions": engine.units.dimension_records(),
                "units": engine.units.unit_records()}

    @app.get("/patients/{patient_id}/record")
    def patient_record(patient_id: str):
        return engine.get_patient_record(patient_id)

    @app.get("/concepts/{uri}/expand")
    def concept_expand(uri: str, predicate: str, direction: str = "forward"):
        return engine.expand_concept(uri, predicate, direction)

    @app.get("/concepts/{uri}/cvts")
    def concept_cvts(uri: str):
        return {"cvts": engine.concepts.cvts_for_concept(uri), "uri": uri}

    @app.get("/concepts")
    def concepts_listing():
        return [engine.concepts.concept_body(c)
                for c in engine.concepts.all_concepts()]

    @app.post("/query")
    def run_query(body: QueryBody):
        return engine.run_query(body.text)

    @app.post("/query/explain")
    def explain_query(body: QueryBody):
        return engine.explain_query(body.text)

    @app.post("/ingest/suggest")
    def ingest_suggest(body: SuggestBody):
        return {"label": body.label, "suggestions": engine.suggest(body.label, body.k)}

    @app.post("/ingest/confirm")
    def ingest_confirm(body: ConfirmBody):
        return engine.confirm_mapping(body.form, body.field, body.cvt, body.concept)

    @app.get("/ingest/mappings")
    def ingest_mappings(form: Optional[str] = None):
        return engine.list_mappings(form)

    if ui_dir is not None:
        from fastapi.staticfiles import StaticFiles

        app.mount("/ui", StaticFiles(directory=ui_dir, html=True), name="ui")

        @app.get("/")
        def root():
            return RedirectResponse("/ui/")

    return app
