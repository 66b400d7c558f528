"""Core domain types: concepts, analogies, elements, screenplays, scripts, runs.

All types are immutable value objects (frozen pydantic models with tuple
collections) so they can be shared freely between threads. Unknown fields are
accepted and preserved on round-trip so stored artifacts survive schema
evolution.
"""

from __future__ import annotations

import re
from typing import Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

IDENTIFIER_RE = re.compile(r"^[A-Za-z][A-Za-z0-9_]*$")

#: The nine named screen regions: top/center/bottom rows crossed with
#: left/center/right columns ("center" is the middle cell).
REGIONS = (
    "top_left",
    "top_center",
    "top_right",
    "center_left",
    "center",
    "center_right",
    "bottom_left",
    "bottom_center",
    "bottom_right",
)

Region = Literal[
    "top_left",
    "top_center",
    "top_right",
    "center_left",
    "center",
    "center_right",
    "bottom_left",
    "bottom_center",
    "bottom_right",
]

TopicArea = Literal["data_structures", "algorithms", "se_patterns", "other"]

STAGES = ("analogy", "elements", "screenplay", "code", "render")
Stage = Literal["analogy", "elements", "screenplay", "code", "render"]


def collapse_whitespace(text: str) -> str:
    """Collapse runs of whitespace to single spaces and strip the ends."""
    return " ".join(text.split())


class DomainModel(BaseModel):
    """Base for all domain values: frozen, unknown fields preserved."""

    model_config = ConfigDict(frozen=True, extra="allow")


class ConceptDefinition(DomainModel):
    """A target concept: name, prose definition and its enumerated properties."""

    concept_name: str
    definition: str
    properties: tuple[str, ...]
    topic_area: TopicArea = "other"

    @field_validator("concept_name", "definition")
    @classmethod
    def _non_empty(cls, v: str) -> str:
        if not v.strip():
            raise ValueError("must be non-empty")
        return v

    @field_validator("properties")
    @classmethod
    def _properties_valid(cls, v: tuple[str, ...]) -> tuple[str, ...]:
        if not v:
            raise ValueError("properties must be non-empty")
        seen: set[str] = set()
        for p in v:
            if not p.strip():
                raise ValueError("properties must be non-empty strings")
            norm = collapse_whitespace(p)
            if norm in seen:
                raise ValueError(f"duplicate property after whitespace normalization: {norm!r}")
            seen.add(norm)
        return v


class Mapping(DomainModel):
    """One property-to-property correspondence in an analogy."""

    target_property: str
    source_counterpart: str
    rationale: str

    @field_validator("target_property", "source_counterpart", "rationale")
    @classmethod
    def _non_empty(cls, v: str) -> str:
        if not v.strip():
            raise ValueError("must be non-empty")
        return v


class Analogy(DomainModel):
    """A familiar source scenario explaining a concept via explicit mappings."""

    source_domain: str
    narrative: str
    mappings: tuple[Mapping, ...]

    @field_validator("mappings")
    @classmethod
    def _mappings_non_empty(cls, v: tuple[Mapping, ...]) -> tuple[Mapping, ...]:
        if not v:
            raise ValueError("mappings must be non-empty")
        return v


class RenderSource(DomainModel):
    """How an element is drawn: a catalog SVG asset or procedural primitives."""

    kind: Literal["asset", "procedural"]
    filename: Optional[str] = None

    @model_validator(mode="after")
    def _check(self) -> "RenderSource":
        if self.kind == "asset":
            if not self.filename:
                raise ValueError("asset render source requires a filename")
        elif self.filename is not None:
            raise ValueError("procedural render source must not carry a filename")
        return self


class ElementSpec(DomainModel):
    """A visual element: name, role, animatable actions and its render template."""

    name: str
    role: str
    actions: tuple[str, ...]
    render_source: RenderSource
    render_template: str

    @field_validator("name")
    @classmethod
    def _identifier(cls, v: str) -> str:
        if not IDENTIFIER_RE.match(v):
            raise ValueError(f"element name {v!r} is not a valid identifier")
        return v

    @field_validator("actions")
    @classmethod
    def _actions_non_empty(cls, v: tuple[str, ...]) -> tuple[str, ...]:
        if not v:
            raise ValueError("actions must be non-empty")
        return v


class AssetCatalog(DomainModel):
    """The set of SVG filenames available under a catalog directory."""

    entries: tuple[str, ...]
    root_path: str

    @field_validator("entries")
    @classmethod
    def _svg_entries(cls, v: tuple[str, ...]) -> tuple[str, ...]:
        for name in v:
            if not name.endswith(".svg"):
                raise ValueError(f"catalog entry {name!r} is not an .svg filename")
        if len(set(v)) != len(v):
            raise ValueError("catalog entries must be unique")
        return tuple(sorted(v))

    def __contains__(self, filename: object) -> bool:
        return filename in self.entries

    @classmethod
    def load(cls, root_path) -> "AssetCatalog":
        """Scan ``root_path`` for .svg files; entries mirror the directory."""
        from pathlib import Path

        root = Path(root_path)
        names = sorted(p.name for p in root.glob("*.svg") if p.is_file())
        return cls(entries=tuple(names), root_path=str(root))


class Coordinates(DomainModel):
    """Explicit normalized screen position, origin at top-left."""

    x: float = Field(ge=0.0, le=1.0)
    y: float = Field(ge=0.0, le=1.0)


Placement = Union[Region, Coordinates]


class SceneAction(DomainModel):
    """One state change in a scene, ordered by ``order`` within the scene."""

    subject: str
    verb: str
    parameters: dict[str, str] = Field(default_factory=dict)
    order: int = Field(gt=0)


class Scene(DomainModel):
    """One scene: which elements appear, where, what happens, what text shows."""

    index: int = Field(gt=0)
    elements_present: tuple[str, ...] = ()
    placements: dict[str, Placement] = Field(default_factory=dict)
    actions: tuple[SceneAction, ...] = ()
    display_text: tuple[str, ...] = ()

    @model_validator(mode="after")
    def _references(self) -> "Scene":
        present = set(self.elements_present)
        for name in self.placements:
            if name not in present:
                raise ValueError(f"placements.{name}: element not in elements_present")
        orders = []
        for i, action in enumerate(self.actions):
            if action.subject not in present:
                raise ValueError(f"actions.{i}.subject: {action.subject!r} not in elements_present")
            orders.append(action.order)
        if any(b <= a for a, b in zip(orders, orders[1:])):
            raise ValueError("action order values must be strictly increasing within a scene")
        return self


class Screenplay(DomainModel):
    """An ordered, contiguously indexed list of scenes."""

    scenes: tuple[Scene, ...]

    @field_validator("scenes")
    @classmethod
    def _contiguous(cls, v: tuple[Scene, ...]) -> tuple[Scene, ...]:
        if not v:
            raise ValueError("no scenes")
        for i, scene in enumerate(v):
            if scene.index != i + 1:
                raise ValueError(f"scenes.{i}.index: expected {i + 1}, got {scene.index}")
        return v

    def referenced_elements(self) -> set[str]:
        names: set[str] = set()
        for scene in self.scenes:
            names.update(scene.elements_present)
            names.update(scene.placements)
            names.update(a.subject for a in scene.actions)
        return names


class ProducedBy(DomainModel):
    """Provenance of a script: the generator or repair iteration ``k``."""

    kind: Literal["generator", "repair_iteration"]
    iteration: Optional[int] = None

    @model_validator(mode="after")
    def _check(self) -> "ProducedBy":
        if self.kind == "repair_iteration":
            if self.iteration is None or self.iteration < 1:
                raise ValueError("repair_iteration requires iteration >= 1")
        elif self.iteration is not None:
            raise ValueError("generator scripts carry no iteration")
        return self


class ScriptArtifact(DomainModel):
    """Generated animation-toolchain source plus provenance."""

    source_text: str
    template_id: str
    produced_by: ProducedBy

    @field_validator("source_text")
    @classmethod
    def _non_empty(cls, v: str) -> str:
        if not v.strip():
            raise ValueError("source_text must be non-empty")
        return v


class Diagnostic(DomainModel):
    """One finding from the static analyzer or the runtime check."""

    phase: Literal["static", "runtime"]
    severity: Literal["error", "warning"]
    message: str
    line: Optional[int] = None
    column: Optional[int] = None
    tool: str = ""
    excerpt: str = ""

    @model_validator(mode="after")
    def _runtime_excerpt(self) -> "Diagnostic":
        if self.phase == "runtime" and not self.excerpt:
            raise ValueError("runtime diagnostics must carry a captured output excerpt")
        return self


class RepairIteration(DomainModel):
    """One diagnose -> repair -> verify round."""

    diagnostics_in: tuple[Diagnostic, ...]
    script_out: ScriptArtifact
    diagnostics_after: tuple[Diagnostic, ...]


class RepairOutcome(DomainModel):
    """Terminal state of the repair loop."""

    kind: Literal["clean_without_repair", "repaired", "exhausted"]
    iterations: Optional[int] = None

    @model_validator(mode="after")
    def _check(self) -> "RepairOutcome":
        if self.kind == "repaired":
            if self.iterations is None or self.iterations < 1:
                raise ValueError("repaired outcome requires iterations >= 1")
        elif self.iterations is not None:
            raise ValueError(f"{self.kind} outcome carries no iteration count")
        return self


class RepairTrace(DomainModel):
    """Full record of the bounded diagnose-repair-verify loop."""

    iterations: tuple[RepairIteration, ...]
    outcome: RepairOutcome

    @model_validator(mode="after")
    def _consistent(self) -> "RepairTrace":
        if self.outcome.kind == "clean_without_repair" and self.iterations:
            raise ValueError("clean_without_repair implies zero iterations")
        if self.outcome.kind == "repaired":
            k = self.outcome.iterations
            if len(self.iterations) != k:
                raise ValueError(f"repaired({k}) requires exactly {k} iterations")
            last = self.iterations[-1]
            if any(d.severity == "error" for d in last.diagnostics_after):
                raise ValueError("repaired outcome requires an error-free final iteration")
        return self


class RepairPolicy(DomainModel):
    """Bounds for the repair loop."""

    max_iterations: int = Field(default=3, ge=1)
    runtime_timeout_s: float = Field(default=60.0, gt=0)
    treat_warnings_as_errors: bool = False


class VideoMeta(DomainModel):
    """Rendered video facts; ``path`` is relative to the run directory."""

    path: str
    duration_s: float = Field(ge=0.0)
    width: int = Field(gt=0)
    height: int = Field(gt=0)
    frame_count: int = Field(ge=0)

    @field_validator("path")
    @classmethod
    def _relative(cls, v: str) -> str:
        if not v or v.startswith(("/", "\\")) or (len(v) > 1 and v[1] == ":"):
            raise ValueError("video path must be relative to the run directory")
        return v


class RunStatus(DomainModel):
    """Tagged run state; ``stage``/``reason`` accompany the states that need them."""

    state: Literal["pending", "stage_complete", "awaiting_review", "failed", "rendered"]
    stage: Optional[Stage] = None
    reason: Optional[str] = None

    @model_validator(mode="after")
    def _check(self) -> "RunStatus":
        needs_stage = self.state in ("stage_complete", "awaiting_review", "failed")
        if needs_stage and self.stage is None:
            raise ValueError(f"status {self.state} requires a stage")
        if not needs_stage and self.stage is not None:
            raise ValueError(f"status {self.state} carries no stage")
        if self.state == "failed" and not self.reason:
            raise ValueError("failed status requires a reason")
        if self.state != "failed" and self.reason is not None:
            raise ValueError("only failed status carries a reason")
        return self


class PipelineRun(DomainModel):
    """A run and everything it produced so far.

    Stage artifacts are monotone: a later-stage artifact exists only if all
    earlier-stage artifacts exist.
    """

    run_id: str
    concept: ConceptDefinition
    analogy: Optional[Analogy] = None
    elements: Optional[tuple[ElementSpec, ...]] = None
    screenplay: Optional[Screenplay] = None
    scripts: tuple[ScriptArtifact, ...] = ()
    repair_trace: Optional[RepairTrace] = None
    video: Optional[VideoMeta] = None
    status: RunStatus = RunStatus(state="pending")
    timestamps: dict[str, str] = Field(default_factory=dict)

    @model_validator(mode="after")
    def _monotone(self) -> "PipelineRun":
        chain = [
            ("analogy", self.analogy is not None),
            ("elements", self.elements is not None),
            ("screenplay", self.screenplay is not None),
            ("code", bool(self.scripts)),
            ("render", self.video is not None),
        ]
        for i in range(1, len(chain)):
            if chain[i][1] and not chain[i - 1][1]:
                raise ValueError(
                    f"stage artifacts must be monotone: {chain[i][0]} present "
                    f"without {chain[i - 1][0]}"
                )
        return self


class CoverageEntry(DomainModel):
    """Per-property coverage verdict from analogy validation."""

    property: str
    covered: bool
    mapping: Optional[Mapping] = None


class ValidationReport(DomainModel):
    """Outcome of a validator; failures are report content, not faults."""

    passed: bool
    kind: str
    issues: tuple[str, ...] = ()
    coverage: tuple[CoverageEntry, ...] = ()
    uncovered_properties: tuple[str, ...] = ()
    undefined_elements: tuple[str, ...] = ()
    warnings: tuple[str, ...] = ()
