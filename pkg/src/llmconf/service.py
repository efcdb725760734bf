"""HTTP API over the search pipeline.

The service is configured once at startup from a small YAML document naming
the latency databases and any extra model files, loads everything eagerly so
bad paths fail at boot, and keeps the loaded databases alive so the
estimator's memo cache carries across requests.

Error contract: 400 malformed request (with the offending field), 404 unknown
database or model name, 413 candidate space too large, 422 no configuration
meets the objectives.
"""

from __future__ import annotations

from dataclasses import fields
from pathlib import Path
from typing import Any, Mapping

import yaml
from fastapi import FastAPI, Request, Response
from fastapi.exceptions import RequestValidationError
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel, ConfigDict, Field

from . import __version__
from .generator import BackendProfile, GeneratorError, emit_launch_plan, plan_from_entry
from .model import BACKENDS, ModelConfigError, ModelSpec, load_model_spec
from .perfdb import PerfDatabase, load_db
from .search import CandidateSpace, enumerate_candidates, run_search
from .serving_modes import SERVING_MODES, WorkloadError, WorkloadSpec

MAX_CANDIDATES = 10_000
MAX_JOBS = 16

_DATA_DIR = Path(__file__).parent
_CONFIG_KEYS = {"databases", "models", "static_dir", "cors_origins"}


class ApiError(Exception):
    """Maps straight to an HTTP status with a field-scoped message."""

    def __init__(self, status: int, message: str, field: str | None = None,
                 extra: Mapping[str, Any] | None = None) -> None:
        super().__init__(message)
        self.status = status
        self.detail: dict[str, Any] = {"error": message}
        if field:
            self.detail["field"] = field
        if extra:
            self.detail.update(extra)


class SearchRequest(BaseModel):
    model_config = ConfigDict(extra="forbid", protected_namespaces=())

    db: str
    model: str | dict
    workload: dict
    space: dict | None = None
    jobs: int = Field(default=1, ge=1, le=MAX_JOBS)


class GenerateRequest(BaseModel):
    """A frontier entry echoed back, plus enough context to rebuild the plan."""

    model_config = ConfigDict(extra="forbid", protected_namespaces=())

    model: str | dict
    workload: dict
    entry: dict
    backend: str | None = None


def load_config(path: str | Path) -> dict:
    with open(path, encoding="utf-8") as f:
        doc = yaml.safe_load(f) or {}
    if not isinstance(doc, dict):
        raise ValueError(f"{path}: service config must be a mapping")
    unknown = set(doc) - _CONFIG_KEYS
    if unknown:
        raise ValueError(f"{path}: unknown config keys {sorted(unknown)}")
    return doc


def _bundled_models() -> dict[str, ModelSpec]:
    out = {}
    for p in sorted((_DATA_DIR / "models").glob("*.json")):
        spec = load_model_spec(p)
        out[spec.name] = spec
    return out


def _workload_from_doc(doc: dict) -> WorkloadSpec:
    try:
        return WorkloadSpec.from_doc(doc)
    except (WorkloadError, TypeError, ValueError) as e:
        raise ApiError(400, str(e), field="workload")


def _model_from_request(value: str | dict, models: Mapping[str, ModelSpec]) -> ModelSpec:
    """A server-loaded model by name, or an inline specification document."""
    if isinstance(value, str):
        model = models.get(value)
        if model is None:
            raise ApiError(404, f"unknown model {value!r}", field="model",
                           extra={"available": sorted(models)})
        return model
    try:
        return ModelSpec.from_doc(value)
    except (ModelConfigError, TypeError, ValueError) as e:
        raise ApiError(400, str(e), field="model")


def _space_from_doc(doc: dict | None) -> CandidateSpace:
    if doc is None:
        return CandidateSpace()
    known = {f.name for f in fields(CandidateSpace)}
    unknown = sorted(set(doc) - known)
    if unknown:
        raise ApiError(400, f"unknown space fields: {unknown}", field=f"space.{unknown[0]}")
    kwargs = {
        key: tuple(value) if isinstance(value, list) else value
        for key, value in doc.items()
    }
    try:
        return CandidateSpace(**kwargs)
    except (TypeError, ValueError) as e:
        raise ApiError(400, str(e), field="space")


def create_app(config: str | Path | Mapping | None = None) -> FastAPI:
    """Build the application; ``config`` is a YAML path or an equivalent mapping."""
    if config is None:
        config = {}
    elif not isinstance(config, Mapping):
        config = load_config(config)

    databases: dict[str, PerfDatabase] = {
        name: load_db(path) for name, path in sorted((config.get("databases") or {}).items())
    }
    models = _bundled_models()
    for name, path in sorted((config.get("models") or {}).items()):
        models[name] = load_model_spec(path)

    app = FastAPI(title="llmconf", version=__version__)
    app.add_middleware(
        CORSMiddleware,
        allow_origins=list(config.get("cors_origins") or ["*"]),
        allow_methods=["*"],
        allow_headers=["*"],
    )

    @app.exception_handler(ApiError)
    async def on_api_error(request: Request, exc: ApiError) -> JSONResponse:
        return JSONResponse(status_code=exc.status, content={"detail": exc.detail})

    @app.exception_handler(RequestValidationError)
    async def on_validation_error(request: Request, exc: RequestValidationError) -> JSONResponse:
        # surface the first offending field as a dotted path, not a 422 blob
        first = exc.errors()[0]
        field = ".".join(str(part) for part in first["loc"] if part != "body")
        return JSONResponse(
            status_code=400,
            content={"detail": {"error": first["msg"], "field": field or "body"}},
        )

    def resolve(req: SearchRequest) -> tuple[PerfDatabase, ModelSpec, WorkloadSpec, CandidateSpace]:
        db = databases.get(req.db)
        if db is None:
            raise ApiError(404, f"unknown database {req.db!r}", field="db",
                           extra={"available": sorted(databases)})
        model = _model_from_request(req.model, models)
        workload = _workload_from_doc(req.workload)
        space = _space_from_doc(req.space)
        n = len(enumerate_candidates(model, space, workload, db))
        if n > MAX_CANDIDATES:
            raise ApiError(413, f"{n} candidates exceed the {MAX_CANDIDATES} limit",
                           field="space")
        return db, model, workload, space

    hardware = {db.hardware.name: db.hardware for db in databases.values()}
    profiles = [BackendProfile.load(backend) for backend in BACKENDS]

    @app.get("/api/v1/meta")
    async def meta() -> dict:
        return {
            "version": __version__,
            "modes": list(SERVING_MODES),
            "backends": list(BACKENDS),
            "databases": [
                {
                    "name": name,
                    "backend": db.backend,
                    "backend_version": db.backend_version,
                    "hardware": db.hardware.name,
                    "records": len(db.records),
                }
                for name, db in sorted(databases.items())
            ],
            "models": [
                {
                    "name": spec.name,
                    "num_layers": spec.num_layers,
                    "hidden_size": spec.hidden_size,
                    "moe": spec.moe is not None,
                    "weight_quant": spec.weight_quant,
                }
                for spec in sorted(models.values(), key=lambda s: s.name)
            ],
            "hardware": [
                {
                    "name": hw.name,
                    "gpu_memory": hw.gpu_memory,
                    "mem_bandwidth": hw.mem_bandwidth,
                    "gpus_per_node": hw.gpus_per_node,
                }
                for hw in sorted(hardware.values(), key=lambda h: h.name)
            ],
            "profiles": [
                {"backend": p.backend, "version": p.version, "launcher": p.launcher}
                for p in profiles
            ],
        }

    @app.post("/api/v1/search")
    async def search(req: SearchRequest) -> Response:
        db, model, workload, space = resolve(req)
        report = run_search(db, model, workload, space, jobs=req.jobs)
        if report.best is None:
            doc = report.to_doc()
            raise ApiError(422, "no configuration meets the objectives",
                           extra={"diagnostics": doc["diagnostics"], "counts": doc["counts"]})
        # reuse the canonical serializer so CLI and API bytes agree
        return Response(content=report.to_json(), media_type="application/json")

    @app.post("/api/v1/generate")
    async def generate(req: GenerateRequest) -> Response:
        if req.backend is not None and req.backend not in BACKENDS:
            raise ApiError(400, f"unknown backend {req.backend!r}", field="backend")
        model = _model_from_request(req.model, models)
        workload = _workload_from_doc(req.workload)
        try:
            plan = plan_from_entry(req.entry, model, workload, backend=req.backend)
        except GeneratorError as e:
            # a tampered or internally inconsistent entry, not a server fault
            raise ApiError(400, str(e), field="entry")
        return Response(content=emit_launch_plan(plan), media_type="application/yaml")

    static_dir = config.get("static_dir")
    if static_dir:
        app.mount("/", StaticFiles(directory=static_dir, html=True), name="ui")

    return app
