"""Stage orchestration: run the pipeline forward, pause, validate, resume.

The orchestrator owns no state beyond its collaborators; every fact about a
run lives in the run store. Stage execution holds the run's writer lock for
its whole duration, so concurrent mutation attempts fail fast as RunBusyError
instead of interleaving.
"""

from __future__ import annotations

import logging
from typing import Optional

from filelock import Timeout

from .code_layer import generate_script, render, repair_loop
from .errors import (
    AnvilError,
    PreconditionError,
    RepairExhausted,
    RepairLoopAborted,
    RunBusyError,
    StageOrderError,
    UnknownStageError,
    ValidationRejected,
)
from .gateway import Gateway
from .model import (
    STAGES,
    AssetCatalog,
    ConceptDefinition,
    PipelineRun,
    RepairPolicy,
    RunStatus,
    ValidationReport,
)
from .runstore import CodeBundle, RunStore
from .screenplay_layer import (
    DEFAULT_MAX_SCENES,
    ElementList,
    define_elements,
    generate_screenplay,
)
from .textual import generate_analogy
from .validation import validate_analogy, validate_elements, validate_screenplay

logger = logging.getLogger(__name__)

PAUSEABLE_STAGES = STAGES[:-1]


def validate_stage_artifact(
    stage: str,
    value,
    *,
    concept: Optional[ConceptDefinition] = None,
    elements=None,
    catalog: Optional[AssetCatalog] = None,
) -> ValidationReport:
    """The one semantic gate used by CLI resume and HTTP artifact edits alike."""
    if stage == "analogy":
        if concept is None:
            raise PreconditionError("analogy validation needs the concept")
        return validate_analogy(concept, value)
    if stage == "elements":
        specs = value.elements if isinstance(value, ElementList) else tuple(value)
        return validate_elements(
            specs, catalog or AssetCatalog(entries=(), root_path="")
        )
    if stage == "screenplay":
        return validate_screenplay(value, list(elements or ()))
    if stage in STAGES:
        return ValidationReport(passed=True, kind=f"{stage}_artifact")
    raise UnknownStageError(f"unknown stage {stage!r}")


def orchestrator_for(
    config,
    store: RunStore,
    run_id: Optional[str] = None,
    *,
    provider_mode: Optional[str] = None,
    toolchain_mode: Optional[str] = None,
    max_repair: Optional[int] = None,
) -> "Orchestrator":
    """Assemble an orchestrator from configuration, with optional overrides."""
    from .config import build_configured_toolchain, build_gateway

    transcript_dir = store.run_dir(run_id) / "transcripts" if run_id else None
    gateway = build_gateway(config, transcript_dir=transcript_dir, mode=provider_mode)
    toolchain = build_configured_toolchain(config, mode=toolchain_mode)
    policy = config.repair
    if max_repair is not None:
        policy = RepairPolicy(
            max_iterations=max_repair,
            runtime_timeout_s=policy.runtime_timeout_s,
            treat_warnings_as_errors=policy.treat_warnings_as_errors,
        )
    return Orchestrator(
        store,
        gateway,
        toolchain,
        assets_dir=config.assets_dir,
        max_scenes=config.max_scenes,
        policy=policy,
    )


class Orchestrator:
    """Drives a run through analogy, elements, screenplay, code and render."""

    def __init__(
        self,
        store: RunStore,
        gateway: Gateway,
        toolchain,
        *,
        assets_dir=None,
        max_scenes: int = DEFAULT_MAX_SCENES,
        policy: Optional[RepairPolicy] = None,
    ):
        self.store = store
        self.gateway = gateway
        self.toolchain = toolchain
        self.assets_dir = assets_dir
        self.max_scenes = max_scenes
        self.policy = policy or RepairPolicy()

    def catalog(self) -> AssetCatalog:
        """Re-scanned on every use; educators add and remove files freely."""
        if self.assets_dir is None:
            return AssetCatalog(entries=(), root_path="")
        return AssetCatalog.load(self.assets_dir)

    # -- entry points -------------------------------------------------------

    def start(self, concept, run_id: Optional[str] = None, pause_after=None) -> PipelineRun:
        rid = self.store.create_run(concept, run_id=run_id)
        return self.execute(rid, pause_after=pause_after)

    def execute(self, run_id: str, pause_after: Optional[str] = None) -> PipelineRun:
        """Run every stage whose artifact is missing, in order."""
        if pause_after is not None and pause_after not in PAUSEABLE_STAGES:
            raise PreconditionError(
                f"pause point must be one of {', '.join(PAUSEABLE_STAGES)}"
            )
        lock = self.store.writer_lock(run_id)
        try:
            lock.acquire(timeout=0)
        except Timeout:
            raise RunBusyError(f"run {run_id!r} is busy executing a stage") from None
        try:
            run = self.store.load_run(run_id)
            remaining = [s for s in STAGES if not self._has_artifact(run, s)]
            for stage in remaining:
                paused = self._run_stage(run_id, stage, pause_after)
                if paused:
                    break
            return self.store.load_run(run_id)
        finally:
            lock.release()

    def resume(
        self,
        run_id: str,
        from_stage: Optional[str] = None,
        pause_after: Optional[str] = None,
    ) -> PipelineRun:
        """Keep ``from_stage``'s artifact, re-validate it, re-run what follows."""
        lock = self.store.writer_lock(run_id)
        try:
            lock.acquire(timeout=0)
        except Timeout:
            raise RunBusyError(f"run {run_id!r} is busy executing a stage") from None
        try:
            stage = self.resume_preflight(run_id, from_stage)
            self.store.archive_downstream(run_id, stage)
            self.store.set_status(
                run_id, RunStatus(state="stage_complete", stage=stage)
            )
            return self.execute(run_id, pause_after=pause_after)
        finally:
            lock.release()

    def resume_preflight(self, run_id: str, from_stage: Optional[str] = None) -> str:
        """Resolve the resume stage and re-validate the kept chain; mutates nothing."""
        run = self.store.load_run(run_id)
        stage = from_stage or self._default_resume_stage(run)
        if stage not in STAGES:
            raise UnknownStageError(f"unknown stage {stage!r}")
        if stage == "render":
            raise PreconditionError("nothing runs after render; resume from code or earlier")
        if not self._has_artifact(run, stage):
            raise StageOrderError(
                f"cannot resume from {stage!r}: no artifact on record"
            )
        self._validate_chain(run, through=stage)
        return stage

    # -- internals ------------------------------------------------------------

    @staticmethod
    def _has_artifact(run: PipelineRun, stage: str) -> bool:
        return {
            "analogy": run.analogy is not None,
            "elements": run.elements is not None,
            "screenplay": run.screenplay is not None,
            "code": bool(run.scripts),
            "render": run.video is not None,
        }[stage]

    @staticmethod
    def _default_resume_stage(run: PipelineRun) -> str:
        if run.status.stage is not None:
            return run.status.stage
        present = [s for s in STAGES if Orchestrator._has_artifact(run, s)]
        if not present:
            raise StageOrderError("run has no stage artifacts to resume from")
        return present[-1]

    def _validate_chain(self, run: PipelineRun, through: str) -> None:
        """Validate every persisted artifact up to and including ``through``."""
        catalog = self.catalog()
        limit = STAGES.index(through)
        for stage in STAGES[: limit + 1]:
            artifact = self.store.load_artifact(run.run_id, stage)
            if artifact is None:
                continue
            report = validate_stage_artifact(
                stage,
                artifact,
                concept=run.concept,
                elements=run.elements,
                catalog=catalog,
            )
            if not report.passed:
                raise ValidationRejected(
                    f"{stage} artifact failed re-validation: "
                    + "; ".join(report.issues),
                    report=report,
                )

    def _run_stage(self, run_id: str, stage: str, pause_after: Optional[str]) -> bool:
        """Execute one stage; returns True when execution should pause."""
        try:
            paused = getattr(self, f"_stage_{stage}")(run_id)
        except AnvilError as exc:
            self.store.append_event(
                run_id, "stage_failed", stage=stage, code=exc.code, message=str(exc)
            )
            self.store.set_status(
                run_id, RunStatus(state="failed", stage=stage, reason=exc.code)
            )
            raise
        if paused:
            return True
        if stage == "render":
            self.store.set_status(run_id, RunStatus(state="rendered"))
            return False
        if stage == pause_after:
            self.store.set_status(
                run_id, RunStatus(state="awaiting_review", stage=stage)
            )
            return True
        self.store.set_status(run_id, RunStatus(state="stage_complete", stage=stage))
        return False

    def _stage_analogy(self, run_id: str) -> bool:
        run = self.store.load_run(run_id)
        result = generate_analogy(self.gateway, run.concept)
        self.store.persist_stage(run_id, "analogy", result.analogy)
        if result.coverage_failed:
            self.store.append_event(
                run_id,
                "coverage_failed",
                uncovered=list(result.report.uncovered_properties),
                reasks=result.reasks,
            )
            self.store.set_status(
                run_id, RunStatus(state="awaiting_review", stage="analogy")
            )
            logger.warning(
                "run %s: analogy left properties uncovered after re-ask; "
                "paused for review",
                run_id,
            )
            return True
        return False

    def _stage_elements(self, run_id: str) -> bool:
        run = self.store.load_run(run_id)
        result = define_elements(self.gateway, run.analogy, self.catalog())
        self.store.persist_stage(run_id, "elements", result.elements)
        if result.association_warnings:
            self.store.append_event(
                run_id,
                "association_warnings",
                warnings=list(result.association_warnings),
            )
        return False

    def _stage_screenplay(self, run_id: str) -> bool:
        run = self.store.load_run(run_id)
        result = generate_screenplay(
            self.gateway, run.analogy, run.elements, max_scenes=self.max_scenes
        )
        self.store.persist_stage(run_id, "screenplay", result.screenplay)
        return False

    def _stage_code(self, run_id: str) -> bool:
        run = self.store.load_run(run_id)
        script = generate_script(self.gateway, run.elements, run.screenplay)
        try:
            final, trace = repair_loop(self.gateway, self.toolchain, script, self.policy)
        except RepairLoopAborted as exc:
            if exc.trace is not None:
                scripts = (script, *(it.script_out for it in exc.trace.iterations))
                self.store.persist_stage(
                    run_id, "code", CodeBundle(scripts=scripts, trace=exc.trace)
                )
            raise
        scripts = (script, *(it.script_out for it in trace.iterations))
        self.store.persist_stage(
            run_id, "code", CodeBundle(scripts=scripts, trace=trace)
        )
        if trace.outcome.kind == "exhausted":
            raise RepairExhausted(
                f"repair loop exhausted after {len(trace.iterations)} iteration(s) "
                f"with errors remaining",
                trace=trace,
            )
        return False

    def _stage_render(self, run_id: str) -> bool:
        run = self.store.load_run(run_id)
        bundle = self.store.load_artifact(run_id, "code")
        final = bundle.scripts[-1]
        meta = render(
            self.toolchain, final, bundle.trace, self.store.video_path(run_id)
        )
        self.store.persist_stage(run_id, "render", meta)
        return False
