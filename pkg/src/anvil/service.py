"""Local HTTP facade over the run store and orchestrator.

Every mutation goes through the same validation functions the CLI uses, so
an artifact that would be rejected on ``resume`` is rejected identically on
``PUT``. The service is meant to be bound to loopback (the configured default)
and run single-instance next to its run store.

Error contract:
  400  the submitted artifact or request failed validation; the body is a
       serialized ValidationReport envelope
  404  unknown run, stage, or missing artifact/video
  409  stage-order conflict, missing prerequisite, or the run is busy
"""

from __future__ import annotations

import logging
import threading
from typing import Callable, Optional

from fastapi import FastAPI, Request, Response
from fastapi.responses import FileResponse, JSONResponse
from filelock import Timeout

from . import __version__
from . import pipeline as pipeline_mod
from .config import AnvilConfig, build_gateway
from .errors import (
    AnvilError,
    ParseError,
    PreconditionError,
    SchemaValidationError,
    StageOrderError,
    UnknownStageError,
    ValidationRejected,
)
from .fidelity import score_fidelity
from .judge import score as judge_score
from .model import (
    STAGES,
    Analogy,
    AssetCatalog,
    RunStatus,
    Screenplay,
    ValidationReport,
    VideoMeta,
)
from .pipeline import Orchestrator, orchestrator_for
from .runstore import CodeBundle, RunStore, run_summary
from .screenplay_layer import ElementList
from .serialization import build_model, deserialize, model_payload, parse_json, serialize

logger = logging.getLogger(__name__)

ARTIFACT_TYPES = {
    "analogy": Analogy,
    "elements": ElementList,
    "screenplay": Screenplay,
    "code": CodeBundle,
    "render": VideoMeta,
}


def _error(status_code: int, code: str, message: str) -> JSONResponse:
    return JSONResponse({"error": code, "message": message}, status_code=status_code)


def _report_response(report: ValidationReport, status_code: int = 400) -> Response:
    return Response(
        serialize(report), status_code=status_code, media_type="application/json"
    )


def _rejection(kind: str, message: str) -> Response:
    return _report_response(
        ValidationReport(passed=False, kind=kind, issues=(message,))
    )


def create_app(
    config: AnvilConfig,
    *,
    store: Optional[RunStore] = None,
    orchestrator_factory: Optional[Callable[[str], Orchestrator]] = None,
    gateway_factory: Optional[Callable[[str], object]] = None,
    console_dir: Optional[str] = None,
) -> FastAPI:
    """Build the application. The factory hooks exist for tests that need
    scripted providers; production callers pass only the config.

    ``console_dir`` mounts a built review-console bundle at ``/console``
    so the browser UI and the API share one origin."""
    store = store if store is not None else RunStore(config.runstore_root)

    def default_orchestrator(run_id: str) -> Orchestrator:
        return orchestrator_for(config, store, run_id)

    def default_gateway(run_id: str):
        return build_gateway(
            config, transcript_dir=store.run_dir(run_id) / "transcripts"
        )

    make_orchestrator = orchestrator_factory or default_orchestrator
    make_gateway = gateway_factory or default_gateway

    app = FastAPI(title="anvil", version=__version__, docs_url=None, redoc_url=None)
    app.state.store = store
    app.state.active = {}
    app.state.active_lock = threading.Lock()

    if console_dir:
        from fastapi.staticfiles import StaticFiles

        app.mount("/console", StaticFiles(directory=console_dir, html=True), name="console")

    def catalog() -> AssetCatalog:
        if config.assets_dir:
            return AssetCatalog.load(config.assets_dir)
        return AssetCatalog(entries=(), root_path="")

    @app.get("/")
    def index():
        return {"service": "anvil", "version": __version__}

    @app.get("/runs")
    def list_runs():
        return {"runs": [run_summary(store.load_run(rid)) for rid in store.run_ids()]}

    @app.get("/runs/{run_id}")
    def get_run(run_id: str):
        if not store.exists(run_id):
            return _error(404, "unknown_run", f"no run named {run_id!r}")
        return run_summary(store.load_run(run_id))

    @app.get("/runs/{run_id}/artifacts/{stage}")
    def get_artifact(run_id: str, stage: str):
        if not store.exists(run_id):
            return _error(404, "unknown_run", f"no run named {run_id!r}")
        if stage not in ARTIFACT_TYPES:
            return _error(404, "unknown_stage", f"unknown stage {stage!r}")
        artifact = store.load_artifact(run_id, stage)
        if artifact is None:
            return _error(404, "not_found", f"run {run_id!r} has no {stage} artifact")
        return Response(serialize(artifact), media_type="application/json")

    @app.put("/runs/{run_id}/artifacts/{stage}")
    async def put_artifact(run_id: str, stage: str, request: Request):
        if not store.exists(run_id):
            return _error(404, "unknown_run", f"no run named {run_id!r}")
        if stage not in ARTIFACT_TYPES:
            return _error(404, "unknown_stage", f"unknown stage {stage!r}")
        expected = ARTIFACT_TYPES[stage]
        text = (await request.body()).decode("utf-8", errors="replace")
        try:
            payload = parse_json(text)
            if isinstance(payload, dict) and "kind" in payload and "data" in payload:
                artifact = deserialize(text, expected)
            else:
                artifact = build_model(expected, payload)
        except (ParseError, SchemaValidationError) as exc:
            return _rejection(f"{stage}_artifact", str(exc))
        run = store.load_run(run_id)
        report = pipeline_mod.validate_stage_artifact(
            stage,
            artifact,
            concept=run.concept,
            elements=run.elements,
            catalog=catalog(),
        )
        if not report.passed:
            return _report_response(report)
        with app.state.active_lock:
            if run_id in app.state.active:
                return _error(409, "run_busy", f"run {run_id!r} is resuming")
        lock = store.writer_lock(run_id)
        try:
            lock.acquire(timeout=0)
        except Timeout:
            return _error(409, "run_busy", f"run {run_id!r} is busy executing a stage")
        try:
            store.persist_stage(run_id, stage, artifact)
            store.archive_downstream(run_id, stage)
            store.set_status(run_id, RunStatus(state="awaiting_review", stage=stage))
        except StageOrderError as exc:
            return _error(409, exc.code, str(exc))
        except PreconditionError as exc:
            return _error(409, exc.code, str(exc))
        finally:
            lock.release()
        return Response(serialize(artifact), media_type="application/json")

    def background_resume(orch: Orchestrator, run_id: str, stage: str) -> None:
        try:
            orch.resume(run_id, from_stage=stage)
        except AnvilError as exc:
            logger.warning("async resume of %s stopped: %s (%s)", run_id, exc, exc.code)
        except Exception:
            logger.exception("async resume of %s crashed", run_id)
        finally:
            with app.state.active_lock:
                app.state.active.pop(run_id, None)

    @app.post("/runs/{run_id}/resume")
    def post_resume(run_id: str, request: Request):
        if not store.exists(run_id):
            return _error(404, "unknown_run", f"no run named {run_id!r}")
        from_stage = request.query_params.get("from")
        with app.state.active_lock:
            if run_id in app.state.active:
                return _error(409, "run_busy", f"run {run_id!r} is already resuming")
        orch = make_orchestrator(run_id)
        try:
            stage = orch.resume_preflight(run_id, from_stage)
        except ValidationRejected as exc:
            return _report_response(exc.report)
        except UnknownStageError as exc:
            return _error(404, exc.code, str(exc))
        except (StageOrderError, PreconditionError) as exc:
            return _error(409, exc.code, str(exc))
        lock = store.writer_lock(run_id)
        try:
            lock.acquire(timeout=0)
        except Timeout:
            return _error(409, "run_busy", f"run {run_id!r} is busy executing a stage")
        lock.release()
        thread = threading.Thread(
            target=background_resume,
            args=(orch, run_id, stage),
            name=f"resume-{run_id}",
            daemon=True,
        )
        with app.state.active_lock:
            if run_id in app.state.active:
                return _error(409, "run_busy", f"run {run_id!r} is already resuming")
            app.state.active[run_id] = thread
        thread.start()
        return JSONResponse(
            {"run_id": run_id, "resumed_from": stage, "status_url": f"/runs/{run_id}"},
            status_code=202,
        )

    @app.get("/runs/{run_id}/diagnostics")
    def get_diagnostics(run_id: str):
        if not store.exists(run_id):
            return _error(404, "unknown_run", f"no run named {run_id!r}")
        bundle = store.load_artifact(run_id, "code")
        if bundle is None:
            return _error(404, "not_found", f"run {run_id!r} has no code artifact yet")
        return Response(serialize(bundle.trace), media_type="application/json")

    @app.get("/runs/{run_id}/video")
    def get_video(run_id: str):
        if not store.exists(run_id):
            return _error(404, "unknown_run", f"no run named {run_id!r}")
        path = store.video_path(run_id)
        if not path.is_file() or path.stat().st_size == 0:
            return _error(404, "not_found", f"run {run_id!r} has no rendered video")
        return FileResponse(path, media_type="video/mp4")

    @app.get("/runs/{run_id}/evaluations")
    def list_evaluations(run_id: str):
        if not store.exists(run_id):
            return _error(404, "unknown_run", f"no run named {run_id!r}")
        entries = store.load_evaluations(run_id)
        return {
            "evaluations": [
                {
                    "file": entry["file"],
                    "kind": entry["kind"],
                    "report": model_payload(entry["report"]),
                }
                for entry in entries
            ]
        }

    @app.post("/runs/{run_id}/evaluations")
    async def create_evaluation(run_id: str, request: Request):
        if not store.exists(run_id):
            return _error(404, "unknown_run", f"no run named {run_id!r}")
        try:
            body = parse_json((await request.body()).decode("utf-8", errors="replace"))
        except ParseError as exc:
            return _rejection("evaluation_request", str(exc))
        if not isinstance(body, dict):
            return _rejection("evaluation_request", "request body must be an object")
        kind = body.get("kind")
        runs = body.get("runs", 3)
        if kind not in ("analogy", "fidelity"):
            return _rejection(
                "evaluation_request", "kind must be 'analogy' or 'fidelity'"
            )
        if not isinstance(runs, int) or isinstance(runs, bool) or runs < 1:
            return _rejection("evaluation_request", "runs must be a positive integer")
        run = store.load_run(run_id)
        try:
            gateway = make_gateway(run_id)
            if kind == "analogy":
                if run.analogy is None:
                    raise PreconditionError(f"run {run_id!r} has no analogy yet")
                report = judge_score(gateway, run.concept, run.analogy, runs=runs)
            else:
                if run.screenplay is None:
                    raise PreconditionError(f"run {run_id!r} has no screenplay yet")
                video_path = store.video_path(run_id)
                if not video_path.is_file():
                    raise PreconditionError(f"run {run_id!r} has no rendered video")
                report = score_fidelity(
                    gateway,
                    target=run.screenplay,
                    video_path=video_path,
                    runs=runs,
                    duration_s=run.video.duration_s if run.video else None,
                )
        except PreconditionError as exc:
            return _error(409, exc.code, str(exc))
        except AnvilError as exc:
            return _error(500, exc.code, str(exc))
        store.save_evaluation(run_id, report)
        return Response(
            serialize(report), status_code=201, media_type="application/json"
        )

    return app
