"""Screenplay-to-video fidelity proxy.

A VLM reconstructs an observed screenplay from the rendered video alone;
a judge then aligns each target scene to observed segments and labels
Scene/Element/Action fidelity. The video is observed once and judged
``runs`` times. By construction this module never sees the analogy or the
concept: it audits the video against the screenplay, nothing else.
"""

from __future__ import annotations

from fractions import Fraction
from pathlib import Path
from typing import Optional, Sequence

from pydantic import Field, field_validator, model_validator

from .errors import (
    AnvilError,
    EmptyCollection,
    EvaluationError,
    PreconditionError,
    UnreadableMediaError,
)
from .gateway import Gateway
from .judge import BASELINE_THRESHOLD, dimension_summary, round_half_up
from .model import DomainModel, Screenplay
from .prompting import get_template
from .serialization import canonical_json, model_payload, register_type


@register_type
class ObservedScene(DomainModel):
    """One segment a viewer can describe: when, who, what happened, what text."""

    start_s: float = Field(ge=0.0)
    end_s: float = Field(ge=0.0)
    entities: tuple[str, ...] = ()
    actions: tuple[str, ...] = ()
    on_screen_text: tuple[str, ...] = ()

    @model_validator(mode="after")
    def _ordered(self) -> "ObservedScene":
        if self.end_s < self.start_s:
            raise ValueError("end_s must not precede start_s")
        return self


@register_type
class ObservedScreenplay(DomainModel):
    """What the video shows, segment by segment, ordered by start time."""

    scenes: tuple[ObservedScene, ...] = ()

    @field_validator("scenes")
    @classmethod
    def _sorted(cls, v: tuple[ObservedScene, ...]) -> tuple[ObservedScene, ...]:
        starts = [s.start_s for s in v]
        if any(b < a for a, b in zip(starts, starts[1:])):
            raise ValueError("scenes must be ordered by start_s")
        return v


@register_type
class SceneFidelityLabel(DomainModel):
    """Rubric labels for one target scene against the observed screenplay."""

    target_scene_index: int = Field(ge=1)
    aligned_observed: tuple[int, ...] = ()
    scene_label: int = Field(ge=1, le=4)
    element_label: int = Field(ge=1, le=4)
    action_label: int = Field(ge=1, le=4)
    evidence: tuple[str, ...] = ()

    @model_validator(mode="after")
    def _unaligned_floor(self) -> "SceneFidelityLabel":
        if any(i < 0 for i in self.aligned_observed):
            raise ValueError("aligned_observed indices are zero-based, non-negative")
        if not self.aligned_observed and self.scene_label != 1:
            raise ValueError("a target scene with no aligned observation has scene_label 1")
        return self


@register_type
class FidelityResponse(DomainModel):
    """Raw judge output for one run."""

    labels: tuple[SceneFidelityLabel, ...]


@register_type
class FidelityRun(DomainModel):
    """One run's labels with per-dimension means over target scenes."""

    labels: tuple[SceneFidelityLabel, ...]
    scene_raw: float = Field(ge=1.0, le=4.0)
    element_raw: float = Field(ge=1.0, le=4.0)
    action_raw: float = Field(ge=1.0, le=4.0)


@register_type
class FidelityBaseline(DomainModel):
    scene: bool
    element: bool
    action: bool


@register_type
class FidelityReport(DomainModel):
    """Multi-run aggregate over the three fidelity dimensions."""

    per_run: tuple[FidelityRun, ...]
    scene_mean: float
    element_mean: float
    action_mean: float
    scene_final: int = Field(ge=1, le=4)
    element_final: int = Field(ge=1, le=4)
    action_final: int = Field(ge=1, le=4)
    meets_baseline: FidelityBaseline
    judge_runs: int = Field(default=3, ge=1)

    @field_validator("per_run")
    @classmethod
    def _non_empty(cls, v: tuple[FidelityRun, ...]) -> tuple[FidelityRun, ...]:
        if not v:
            raise ValueError("per_run must be non-empty")
        return v


def run_raws(labels: Sequence[SceneFidelityLabel]) -> tuple[Fraction, Fraction, Fraction]:
    """Exact per-dimension means over target scenes."""
    if not labels:
        raise PreconditionError("fidelity run has no scene labels")
    n = len(labels)
    return (
        Fraction(sum(l.scene_label for l in labels), n),
        Fraction(sum(l.element_label for l in labels), n),
        Fraction(sum(l.action_label for l in labels), n),
    )


def observe_screenplay(
    gateway: Gateway, video_path, duration_s: Optional[float] = None
) -> ObservedScreenplay:
    path = Path(video_path)
    try:
        size = path.stat().st_size
    except OSError as exc:
        raise UnreadableMediaError(f"cannot read video file {path}: {exc}") from exc
    if size == 0:
        raise UnreadableMediaError(f"video file {path} is empty")
    prompt = get_template("observe_v1").render(
        {"duration_s": f"{duration_s:g}" if duration_s is not None else "unknown"}
    )
    observed, _ = gateway.describe_media("vlm", path, prompt, ObservedScreenplay)
    return observed


def judge_fidelity_once(
    gateway: Gateway,
    target: Screenplay,
    observed: ObservedScreenplay,
    template_id: str = "fidelity_judge_v1",
) -> FidelityRun:
    prompt = get_template(template_id).render(
        {
            "target_json": canonical_json(model_payload(target)),
            "observed_json": canonical_json(model_payload(observed)),
        }
    )
    response, _ = gateway.complete_structured("judge", prompt, FidelityResponse)
    labels = tuple(sorted(response.labels, key=lambda l: l.target_scene_index))

    expected = [scene.index for scene in target.scenes]
    got = [l.target_scene_index for l in labels]
    if got != expected:
        raise EvaluationError(
            f"judge must label each target scene exactly once: expected "
            f"indices {expected}, got {got}"
        )
    bound = len(observed.scenes)
    for label in labels:
        out_of_range = [i for i in label.aligned_observed if i >= bound]
        if out_of_range:
            raise EvaluationError(
                f"scene {label.target_scene_index} aligns to observed indices "
                f"{out_of_range} but only {bound} observed scenes exist"
            )
    scene_raw, element_raw, action_raw = run_raws(labels)
    return FidelityRun(
        labels=labels,
        scene_raw=float(scene_raw),
        element_raw=float(element_raw),
        action_raw=float(action_raw),
    )


def aggregate_fidelity(runs: Sequence[FidelityRun]) -> FidelityReport:
    if not runs:
        raise PreconditionError("cannot aggregate zero fidelity runs")
    sums = [Fraction(0)] * 3
    for run in runs:
        raws = run_raws(run.labels)
        sums = [acc + value for acc, value in zip(sums, raws)]
    means = [Fraction(total, len(runs)) for total in sums]
    finals = [round_half_up(m) for m in means]
    return FidelityReport(
        per_run=tuple(runs),
        scene_mean=float(means[0]),
        element_mean=float(means[1]),
        action_mean=float(means[2]),
        scene_final=finals[0],
        element_final=finals[1],
        action_final=finals[2],
        meets_baseline=FidelityBaseline(
            scene=finals[0] >= BASELINE_THRESHOLD,
            element=finals[1] >= BASELINE_THRESHOLD,
            action=finals[2] >= BASELINE_THRESHOLD,
        ),
        judge_runs=len(runs),
    )


def batch_summary(reports: Sequence[FidelityReport]) -> dict:
    """Corpus-level table over many audited videos: per dimension, the share
    meeting the baseline plus mean and population spread of per-report means."""
    if not reports:
        raise EmptyCollection("cannot summarize an empty report batch")
    table: dict = {"reports": len(reports)}
    for dim in ("scene", "element", "action"):
        table[dim] = dimension_summary(
            [Fraction(getattr(r, f"{dim}_mean")) for r in reports],
            sum(1 for r in reports if getattr(r.meets_baseline, dim)),
        )
    return table


def score_fidelity(
    gateway: Gateway,
    target: Screenplay,
    video_path,
    runs: int = 3,
    duration_s: Optional[float] = None,
) -> FidelityReport:
    """Observe the video once, judge it ``runs`` times, aggregate."""
    if runs < 1:
        raise PreconditionError("fidelity scoring needs at least one run")
    observed = observe_screenplay(gateway, video_path, duration_s=duration_s)
    completed: list[FidelityRun] = []
    for _ in range(runs):
        try:
            completed.append(judge_fidelity_once(gateway, target, observed))
        except AnvilError as exc:
            raise EvaluationError(
                f"fidelity run {len(completed) + 1} of {runs} failed: {exc}",
                partial_runs=[model_payload(r) for r in completed],
            ) from exc
    return aggregate_fidelity(completed)
