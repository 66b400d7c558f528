"""Filesystem store for pipeline runs and the robustness accounting over them.

One directory per run, one canonical-JSON file per artifact, an append-only
JSONL event log. Writes are atomic (temp file + rename) and serialized by a
per-run writer lock; readers never lock. Status and timestamps are carried by
the event log alone, so replaying it reconstructs the status history.
"""

from __future__ import annotations

import json
import logging
import os
import re
import tempfile
import threading
from datetime import datetime, timezone
from fractions import Fraction
from math import floor
from pathlib import Path
from typing import Iterable, Optional, Sequence, Union

from filelock import FileLock
from pydantic import Field, field_validator

from .errors import (
    EmptyCollection,
    PreconditionError,
    StageOrderError,
    UnknownRunError,
    UnknownStageError,
)
from .fidelity import FidelityReport
from .judge import JudgeReport
from .model import (
    STAGES,
    Analogy,
    ConceptDefinition,
    DomainModel,
    ElementSpec,
    PipelineRun,
    RepairTrace,
    RunStatus,
    Screenplay,
    ScriptArtifact,
    VideoMeta,
)
from .screenplay_layer import ElementList
from .serialization import build_model, deserialize, register_type, serialize

logger = logging.getLogger(__name__)

DEFAULT_ROOT = "runstore"
ENV_ROOT = "ANVIL_RUNSTORE"

STAGE_FILES = {
    "analogy": "analogy.json",
    "elements": "elements.json",
    "screenplay": "screenplay.json",
    "code": "repair_trace.json",
    "render": "video.json",
}

VIDEO_FILE = "video.mp4"
EVENTS_FILE = "events.log"
CONCEPT_FILE = "concept.json"

_SCRIPT_RE = re.compile(r"^script_v(\d+)\.py$")

OUTCOME_KINDS = ("clean_without_repair", "repaired", "exhausted")


@register_type
class CodeBundle(DomainModel):
    """Everything the code stage produced: script versions plus the trace."""

    scripts: tuple[ScriptArtifact, ...]
    trace: RepairTrace

    @field_validator("scripts")
    @classmethod
    def _non_empty(cls, v: tuple[ScriptArtifact, ...]) -> tuple[ScriptArtifact, ...]:
        if not v:
            raise ValueError("code bundle needs at least one script")
        return v


@register_type
class BucketStat(DomainModel):
    count: int = Field(ge=0)
    percent: float = Field(ge=0.0, le=100.0)


@register_type
class RobustnessReport(DomainModel):
    """Distribution of repair-iteration counts over a run collection."""

    total_runs: int = Field(gt=0)
    by_iterations: dict[str, BucketStat]
    would_fail_without_repair_percent: float
    exhausted_count: int = Field(ge=0)


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


def _atomic_write(path: Path, data: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(dir=str(path.parent), prefix=path.name + ".")
    try:
        with os.fdopen(fd, "wb") as handle:
            handle.write(data)
        os.replace(tmp_name, path)
    except BaseException:
        try:
            os.unlink(tmp_name)
        except OSError:
            pass
        raise


def _slug(text: str) -> str:
    cleaned = re.sub(r"[^a-z0-9]+", "-", text.lower()).strip("-")
    return cleaned or "run"


def iteration_count(trace: RepairTrace) -> int:
    """Repair iterations a run needed: 0 for clean, k for repaired(k)."""
    if trace.outcome.kind == "clean_without_repair":
        return 0
    if trace.outcome.kind == "repaired":
        return trace.outcome.iterations
    return len(trace.iterations)


def percent_1dp(numerator: int, denominator: int) -> float:
    """Percentage at one decimal place, half-up."""
    scaled = Fraction(1000 * numerator, denominator)
    return floor(scaled + Fraction(1, 2)) / 10.0


def robustness_from_outcomes(
    outcomes: Sequence[tuple[str, int]]
) -> RobustnessReport:
    """Aggregate (outcome_kind, iterations) pairs into the distribution."""
    if not outcomes:
        raise EmptyCollection("no runs with code-layer records to report on")
    for kind, iterations in outcomes:
        if kind not in OUTCOME_KINDS:
            raise PreconditionError(f"unknown repair outcome kind {kind!r}")
        if iterations < 0:
            raise PreconditionError("iteration counts cannot be negative")
    total = len(outcomes)
    buckets = {"0": 0, "1": 0, "2": 0, "3+": 0}
    repair_invoked = 0
    exhausted = 0
    for kind, iterations in outcomes:
        key = str(iterations) if iterations < 3 else "3+"
        buckets[key] += 1
        if iterations >= 1:
            repair_invoked += 1
        if kind == "exhausted":
            exhausted += 1
    return RobustnessReport(
        total_runs=total,
        by_iterations={
            key: BucketStat(count=count, percent=percent_1dp(count, total))
            for key, count in buckets.items()
        },
        would_fail_without_repair_percent=percent_1dp(repair_invoked, total),
        exhausted_count=exhausted,
    )


def load_outcome_records(path) -> list[tuple[str, int]]:
    """Read a fixture log: a JSON list of {run_id, outcome, iterations}."""
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(payload, list):
        raise PreconditionError("fixture log must be a JSON list of run records")
    records = []
    for i, record in enumerate(payload):
        if not isinstance(record, dict) or "outcome" not in record:
            raise PreconditionError(f"fixture record {i} lacks an outcome")
        records.append((str(record["outcome"]), int(record.get("iterations", 0))))
    return records


def run_summary(run: PipelineRun) -> dict:
    """The listing view of a run: identity, status, progress, timestamps."""
    return {
        "run_id": run.run_id,
        "concept_name": run.concept.concept_name,
        "status": run.status.model_dump(mode="json"),
        "timestamps": dict(run.timestamps),
        "artifacts": {
            "analogy": run.analogy is not None,
            "elements": run.elements is not None,
            "screenplay": run.screenplay is not None,
            "code": bool(run.scripts),
            "render": run.video is not None,
        },
    }


class RunStore:
    """Run directories under one root; safe for concurrent use."""

    def __init__(self, root=None):
        if root is None:
            root = os.environ.get(ENV_ROOT, DEFAULT_ROOT)
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self._locks: dict[str, FileLock] = {}
        self._locks_guard = threading.Lock()

    # -- paths and locks ----------------------------------------------------

    def run_dir(self, run_id: str) -> Path:
        return self.root / run_id

    def video_path(self, run_id: str) -> Path:
        return self.run_dir(run_id) / VIDEO_FILE

    def exists(self, run_id: str) -> bool:
        return (self.run_dir(run_id) / CONCEPT_FILE).is_file()

    def _require(self, run_id: str) -> Path:
        if not self.exists(run_id):
            raise UnknownRunError(f"no run named {run_id!r}")
        return self.run_dir(run_id)

    def writer_lock(self, run_id: str) -> FileLock:
        """The per-run writer lock; reentrant within a thread."""
        with self._locks_guard:
            lock = self._locks.get(run_id)
            if lock is None:
                lock_path = self.run_dir(run_id) / ".writer.lock"
                lock_path.parent.mkdir(parents=True, exist_ok=True)
                lock = FileLock(str(lock_path))
                self._locks[run_id] = lock
        return lock

    # -- events -------------------------------------------------------------

    def append_event(self, run_id: str, event: str, **payload) -> None:
        record = {"ts": _now(), "event": event, **payload}
        line = json.dumps(record, sort_keys=True, ensure_ascii=False)
        with open(self.run_dir(run_id) / EVENTS_FILE, "a", encoding="utf-8") as handle:
            handle.write(line + "\n")

    def events(self, run_id: str) -> list[dict]:
        path = self._require(run_id) / EVENTS_FILE
        if not path.is_file():
            return []
        records = []
        for i, line in enumerate(path.read_text(encoding="utf-8").splitlines()):
            if not line.strip():
                continue
            try:
                records.append(json.loads(line))
            except json.JSONDecodeError:
                logger.warning("run %s: skipping malformed event line %d", run_id, i + 1)
        return records

    # -- lifecycle ----------------------------------------------------------

    def create_run(
        self, concept: Union[ConceptDefinition, dict], run_id: Optional[str] = None
    ) -> str:
        if not isinstance(concept, ConceptDefinition):
            concept = build_model(ConceptDefinition, concept)
        if run_id is None:
            run_id = f"{_slug(concept.concept_name)}-{os.urandom(4).hex()}"
        if self.exists(run_id):
            raise PreconditionError(f"run {run_id!r} already exists")
        with self.writer_lock(run_id):
            _atomic_write(
                self.run_dir(run_id) / CONCEPT_FILE, serialize(concept).encode("utf-8")
            )
            self.append_event(run_id, "run_created")
            self.set_status(run_id, RunStatus(state="pending"))
        return run_id

    def run_ids(self) -> list[str]:
        if not self.root.is_dir():
            return []
        return sorted(
            entry.name
            for entry in self.root.iterdir()
            if entry.is_dir() and (entry / CONCEPT_FILE).is_file()
        )

    def set_status(self, run_id: str, status: RunStatus) -> None:
        self._require(run_id)
        with self.writer_lock(run_id):
            self.append_event(run_id, "status", status=status.model_dump(mode="json"))

    # -- artifacts ----------------------------------------------------------

    def _check_stage_order(self, run_dir: Path, stage: str) -> None:
        index = STAGES.index(stage)
        for earlier in STAGES[:index]:
            if not (run_dir / STAGE_FILES[earlier]).is_file():
                raise StageOrderError(
                    f"cannot persist {stage!r} before {earlier!r} exists"
                )

    @staticmethod
    def _coerce_artifact(stage: str, artifact):
        if stage == "analogy":
            return artifact if isinstance(artifact, Analogy) else build_model(Analogy, artifact)
        if stage == "elements":
            if isinstance(artifact, ElementList):
                return artifact
            if isinstance(artifact, dict):
                return build_model(ElementList, artifact)
            return ElementList(elements=tuple(artifact))
        if stage == "screenplay":
            return (
                artifact
                if isinstance(artifact, Screenplay)
                else build_model(Screenplay, artifact)
            )
        if stage == "code":
            if isinstance(artifact, CodeBundle):
                return artifact
            if isinstance(artifact, dict):
                return build_model(CodeBundle, artifact)
            scripts, trace = artifact
            return CodeBundle(scripts=tuple(scripts), trace=trace)
        if isinstance(artifact, VideoMeta):
            return artifact
        return build_model(VideoMeta, artifact)

    def persist_stage(self, run_id: str, stage: str, artifact) -> None:
        if stage not in STAGES:
            raise UnknownStageError(f"unknown stage {stage!r}")
        run_dir = self._require(run_id)
        value = self._coerce_artifact(stage, artifact)
        with self.writer_lock(run_id):
            self._check_stage_order(run_dir, stage)
            if stage == "render":
                video = run_dir / value.path
                if not video.is_file() or video.stat().st_size == 0:
                    raise PreconditionError(
                        f"render metadata names {value.path!r} but no such video "
                        f"file exists in the run directory"
                    )
            _atomic_write(
                run_dir / STAGE_FILES[stage], serialize(value).encode("utf-8")
            )
            if stage == "code":
                self._write_script_files(run_dir, value.scripts)
            self.append_event(run_id, "stage_persisted", stage=stage)

    def _write_script_files(self, run_dir: Path, scripts: Sequence[ScriptArtifact]) -> None:
        for entry in run_dir.iterdir():
            if _SCRIPT_RE.match(entry.name):
                entry.unlink()
        for k, script in enumerate(scripts, start=1):
            _atomic_write(
                run_dir / f"script_v{k}.py", script.source_text.encode("utf-8")
            )

    def load_artifact(self, run_id: str, stage: str):
        """The stored artifact for one stage, or None when absent."""
        if stage not in STAGES:
            raise UnknownStageError(f"unknown stage {stage!r}")
        run_dir = self._require(run_id)
        path = run_dir / STAGE_FILES[stage]
        if not path.is_file():
            return None
        return deserialize(path.read_text(encoding="utf-8"))

    def load_run(self, run_id: str) -> PipelineRun:
        run_dir = self._require(run_id)
        concept = deserialize(
            (run_dir / CONCEPT_FILE).read_text(encoding="utf-8"), ConceptDefinition
        )
        fields: dict = {"run_id": run_id, "concept": concept}
        analogy = self.load_artifact(run_id, "analogy")
        if analogy is not None:
            fields["analogy"] = analogy
        elements = self.load_artifact(run_id, "elements")
        if elements is not None:
            fields["elements"] = elements.elements
        screenplay = self.load_artifact(run_id, "screenplay")
        if screenplay is not None:
            fields["screenplay"] = screenplay
        bundle = self.load_artifact(run_id, "code")
        if bundle is not None:
            fields["scripts"] = bundle.scripts
            fields["repair_trace"] = bundle.trace
        video = self.load_artifact(run_id, "render")
        if video is not None:
            fields["video"] = video

        status = RunStatus(state="pending")
        timestamps: dict[str, str] = {}
        for record in self.events(run_id):
            kind = record.get("event")
            if kind == "run_created":
                timestamps["created"] = record.get("ts", "")
            elif kind == "stage_persisted":
                timestamps[str(record.get("stage"))] = record.get("ts", "")
            elif kind == "status":
                status = build_model(RunStatus, record.get("status", {}))
        fields["status"] = status
        fields["timestamps"] = timestamps
        return PipelineRun(**fields)

    # -- archive ------------------------------------------------------------

    def archive_downstream(self, run_id: str, after_stage: str) -> list[str]:
        """Move artifacts of stages after ``after_stage`` into archive/NNN/."""
        if after_stage not in STAGES:
            raise UnknownStageError(f"unknown stage {after_stage!r}")
        run_dir = self._require(run_id)
        downstream = STAGES[STAGES.index(after_stage) + 1 :]
        with self.writer_lock(run_id):
            moved: list[str] = []
            targets: list[Path] = []
            for stage in downstream:
                candidate = run_dir / STAGE_FILES[stage]
                if candidate.is_file():
                    targets.append(candidate)
                if stage == "code":
                    targets.extend(
                        entry
                        for entry in run_dir.iterdir()
                        if _SCRIPT_RE.match(entry.name)
                    )
                if stage == "render" and (run_dir / VIDEO_FILE).is_file():
                    targets.append(run_dir / VIDEO_FILE)
            if not targets:
                return []
            archive_root = run_dir / "archive"
            archive_root.mkdir(exist_ok=True)
            existing = [
                int(entry.name)
                for entry in archive_root.iterdir()
                if entry.is_dir() and entry.name.isdigit()
            ]
            slot = archive_root / f"{(max(existing) + 1 if existing else 1):03d}"
            slot.mkdir()
            for target in targets:
                target.rename(slot / target.name)
                moved.append(target.name)
            self.append_event(
                run_id,
                "artifacts_archived",
                after_stage=after_stage,
                into=slot.name,
                files=sorted(moved),
            )
            return sorted(moved)

    # -- evaluations ----------------------------------------------------------

    def save_evaluation(
        self, run_id: str, report: Union[JudgeReport, FidelityReport]
    ) -> str:
        run_dir = self._require(run_id)
        kind = "analogy" if isinstance(report, JudgeReport) else "fidelity"
        with self.writer_lock(run_id):
            directory = run_dir / "evaluations"
            directory.mkdir(exist_ok=True)
            seq = len(list(directory.glob("*.json"))) + 1
            name = f"{seq:03d}_{kind}.json"
            _atomic_write(directory / name, serialize(report).encode("utf-8"))
            self.append_event(run_id, "evaluation_saved", kind=kind, file=name)
        return name

    def load_evaluations(self, run_id: str) -> list[dict]:
        run_dir = self._require(run_id)
        directory = run_dir / "evaluations"
        if not directory.is_dir():
            return []
        results = []
        for path in sorted(directory.glob("*.json")):
            report = deserialize(path.read_text(encoding="utf-8"))
            kind = "analogy" if isinstance(report, JudgeReport) else "fidelity"
            results.append({"file": path.name, "kind": kind, "report": report})
        return results

    # -- robustness -----------------------------------------------------------

    def robustness_report(
        self, run_ids: Optional[Iterable[str]] = None
    ) -> RobustnessReport:
        ids = list(run_ids) if run_ids is not None else self.run_ids()
        outcomes: list[tuple[str, int]] = []
        for run_id in ids:
            run = self.load_run(run_id)
            if run.repair_trace is None:
                logger.warning(
                    "run %s has no code-layer record; excluded from robustness report",
                    run_id,
                )
                continue
            outcomes.append(
                (run.repair_trace.outcome.kind, iteration_count(run.repair_trace))
            )
        return robustness_from_outcomes(outcomes)
