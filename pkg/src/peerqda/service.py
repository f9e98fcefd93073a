"""HTTP API for run management and interactive selection (versioned /v1).

Thin adapter over the pipeline and evaluator: every behavior maps to a
pipeline or metrics operation, and handlers only read persisted state or
enqueue work; they never block on LLM calls.  Errors use one shape:
{"status", "kind", "message"} with kind in {not_found, validation,
conflict, backend, internal}.
"""

from __future__ import annotations

import json
import threading
import uuid
from pathlib import Path

from fastapi import Depends, FastAPI, Header, HTTPException, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from pydantic import BaseModel, Field

from .errors import (
    BackendConfigError,
    ContractError,
    DatasetError,
    QdaError,
    ReplayMissError,
    StateConflictError,
    TransportError,
)
from .evaluate import evaluate_run
from .gateway import ModelConfig
from .pipeline import (
    EventLog,
    PipelineRunner,
    RunConfig,
    SelectionPolicy,
    build_gateway,
)


class RunRequest(BaseModel):
    dataset: str
    policy: str = "interactive"
    model: dict = Field(default_factory=dict)
    backend: str = "http"
    cassette: str | None = None
    cassette_mode: str | None = None
    include_self_refine: bool = False
    workers: int = 2
    attempt_budget: int = 3
    run_id: str | None = None


class SelectionRequest(BaseModel):
    perspective: str


class RunHandle:
    def __init__(self, run_dir: Path, config: RunConfig):
        self.run_dir = run_dir
        self.config = config
        self.events = EventLog()
        self.thread: threading.Thread | None = None
        self.lock = threading.Lock()

    def launch(self) -> None:
        with self.lock:
            if self.thread is not None and self.thread.is_alive():
                return

            def work():
                try:
                    runner = PipelineRunner(
                        self.run_dir, self.config, build_gateway(self.config), events=self.events
                    )
                    runner.run()
                except QdaError as e:
                    self.events.emit("error", message=str(e))

            self.thread = threading.Thread(target=work, daemon=True)
            self.thread.start()


def _manifest_summary(run_dir: Path) -> dict:
    manifest = json.loads((run_dir / "manifest.json").read_text("utf-8"))
    return {
        "run_id": manifest["run_id"],
        "status": manifest["status"],
        "awaiting": manifest["awaiting"],
        "failure": manifest["failure"],
        "dataset": manifest["dataset"],
        "research_question": manifest["research_question"],
        "interviews": manifest["interviews"],
        "policy": manifest["config"]["policy"],
    }


def create_app(runs_root: str | Path, auth_token: str | None = None) -> FastAPI:
    runs_root = Path(runs_root)
    runs_root.mkdir(parents=True, exist_ok=True)
    app = FastAPI(title="peerqda service", version="1")
    registry: dict[str, RunHandle] = {}

    def require_auth(x_auth_token: str | None = Header(default=None)) -> None:
        if auth_token is not None and x_auth_token != auth_token:
            raise HTTPException(status_code=401, detail="missing or wrong X-Auth-Token")

    def api_error(status: int, kind: str, message: str) -> JSONResponse:
        return JSONResponse(
            status_code=status,
            content={"status": status, "kind": kind, "message": message},
        )

    @app.exception_handler(RequestValidationError)
    async def invalid_body(request: Request, exc: RequestValidationError):
        return api_error(422, "validation", str(exc.errors()[:3]))

    @app.exception_handler(QdaError)
    async def qda_error(request: Request, exc: QdaError):
        if isinstance(exc, StateConflictError):
            return api_error(409, "conflict", str(exc))
        if isinstance(exc, (DatasetError, ContractError)):
            return api_error(422, "validation", str(exc))
        if isinstance(exc, (TransportError, BackendConfigError, ReplayMissError)):
            return api_error(502, "backend", str(exc))
        return api_error(500, "internal", str(exc))

    @app.exception_handler(HTTPException)
    async def http_error(request: Request, exc: HTTPException):
        kind = {401: "validation", 404: "not_found", 409: "conflict", 422: "validation"}.get(
            exc.status_code, "internal"
        )
        return api_error(exc.status_code, kind, str(exc.detail))

    def handle_for(run_id: str) -> RunHandle:
        if run_id in registry:
            return registry[run_id]
        run_dir = runs_root / run_id
        if not (run_dir / "manifest.json").exists():
            raise HTTPException(status_code=404, detail=f"unknown run {run_id!r}")
        manifest = json.loads((run_dir / "manifest.json").read_text("utf-8"))
        handle = RunHandle(run_dir, RunConfig.from_json(manifest["config"]))
        registry[run_id] = handle
        return handle

    @app.post("/v1/runs", status_code=201, dependencies=[Depends(require_auth)])
    def create_run(body: RunRequest):
        run_id = body.run_id or uuid.uuid4().hex[:12]
        if (runs_root / run_id / "manifest.json").exists():
            raise StateConflictError(f"run {run_id!r} already exists")
        config = RunConfig(
            dataset=body.dataset,
            model=ModelConfig.from_json(body.model) if body.model else ModelConfig(),
            policy=SelectionPolicy.parse(body.policy),
            include_self_refine=body.include_self_refine,
            workers=body.workers,
            attempt_budget=body.attempt_budget,
            backend=body.backend,
            cassette=body.cassette,
            cassette_mode=body.cassette_mode,
        )
        handle = RunHandle(runs_root / run_id, config)
        # constructing the runner validates the dataset and writes the manifest
        PipelineRunner(handle.run_dir, config, build_gateway(config), events=handle.events,
                       run_id=run_id)
        registry[run_id] = handle
        handle.launch()
        return {"run_id": run_id}

    @app.get("/v1/runs/{run_id}", dependencies=[Depends(require_auth)])
    def get_run(run_id: str):
        handle = handle_for(run_id)
        return _manifest_summary(handle.run_dir)

    @app.get(
        "/v1/runs/{run_id}/interviews/{iid}/stages/{stage}",
        dependencies=[Depends(require_auth)],
    )
    def get_stage(run_id: str, iid: str, stage: str):
        handle = handle_for(run_id)
        manifest = json.loads((handle.run_dir / "manifest.json").read_text("utf-8"))
        if iid not in manifest["interviews"]:
            raise HTTPException(status_code=404, detail=f"unknown interview {iid!r}")
        if stage not in manifest["interviews"][iid]["stages"]:
            raise HTTPException(status_code=404, detail=f"unknown stage {stage!r}")
        entry = manifest["interviews"][iid]["stages"][stage]

        def read(condition: str):
            path = handle.run_dir / iid / stage / f"{condition}.json"
            if not path.exists():
                return None
            return json.loads(path.read_text("utf-8"))

        perspectives = [p.value for p in handle.config.perspectives()]
        return {
            "interview": iid,
            "stage": stage,
            "state": entry["state"],
            "selection": entry["selection"],
            "failures": entry["failures"],
            "initial": read("initial"),
            "refinements": {p: read(p) for p in perspectives},
        }

    @app.post(
        "/v1/runs/{run_id}/interviews/{iid}/stages/{stage}/selection",
        dependencies=[Depends(require_auth)],
    )
    def post_selection(run_id: str, iid: str, stage: str, body: SelectionRequest):
        handle = handle_for(run_id)
        runner = PipelineRunner(
            handle.run_dir, handle.config, build_gateway(handle.config), events=handle.events
        )
        runner.submit_selection(iid, stage, body.perspective)
        handle.launch()  # resume the pipeline
        return _manifest_summary(handle.run_dir)

    @app.get("/v1/runs/{run_id}/report", dependencies=[Depends(require_auth)])
    def get_report(
        run_id: str,
        provider: str = "hash",
        tau: float = 0.7,
        embed_definitions: bool = False,
    ):
        handle = handle_for(run_id)
        return evaluate_run(
            handle.run_dir, provider=provider, tau=tau, embed_definitions=embed_definitions
        )

    @app.get("/v1/runs/{run_id}/events", dependencies=[Depends(require_auth)])
    def get_events(run_id: str, since: int = 0, timeout: float = 0.0):
        handle = handle_for(run_id)
        events = handle.events.since(since, timeout=min(timeout, 25.0))
        next_seq = events[-1]["seq"] + 1 if events else since
        return {"events": events, "next": next_seq, "status": _manifest_summary(handle.run_dir)["status"]}

    frontend_dist = Path(__file__).parent.parent.parent / "frontend" / "dist"
    if frontend_dist.exists():  # UI is optional; the API works without it
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=frontend_dist, html=True), name="ui")

    return app
