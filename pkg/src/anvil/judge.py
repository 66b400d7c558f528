"""Rubric judge for analogies: per-property labels, multi-run aggregation.

Each run extracts properties and labels them independently; aggregation
averages per-run scores (not pooled labels) and rounds half-up onto the
1..4 scale. Coverage means tcc_label >= 2, and mapping strength averages
over covered properties only, flooring at 1.0 when nothing is covered.
All aggregation is exact rational arithmetic until the report is built.
"""

from __future__ import annotations

import math
import random
from fractions import Fraction
from typing import Optional, Sequence

from pydantic import Field, field_validator, model_validator

from .errors import (
    AnvilError,
    EmptyCollection,
    EvaluationError,
    JudgeNoProperties,
    PreconditionError,
)
from .gateway import Gateway
from .model import Analogy, ConceptDefinition, DomainModel
from .prompting import get_template
from .serialization import canonical_json, model_payload, register_type

#: Attribute-level (non-relational) justifications for surface_similarity
#: negatives. Deliberately about looks and names, never about structure.
SURFACE_PHRASES = (
    "both have a similar shape and color",
    "both names sound alike when spoken",
    "both look busy and move around quickly",
    "both are large and easy to notice in a room",
    "both appear shiny and pleasant to look at",
)

NEGATIVE_MODES = ("drop_property", "cross_mapping", "surface_similarity")

BASELINE_THRESHOLD = 3


@register_type
class PropertyJudgment(DomainModel):
    """Labels for one extracted property: coverage and mapping strength."""

    property: str
    tcc_label: int = Field(ge=1, le=4)
    ms_label: Optional[int] = Field(default=None, ge=1, le=4)
    evidence: str = ""

    @model_validator(mode="after")
    def _coverage_contract(self) -> "PropertyJudgment":
        if self.tcc_label >= 2:
            if self.ms_label is None:
                raise ValueError("covered property requires an ms_label")
            if not self.evidence.strip():
                raise ValueError("covered property requires non-empty evidence")
        elif self.ms_label is not None:
            raise ValueError("missing property must not carry an ms_label")
        return self


@register_type
class JudgeResponse(DomainModel):
    """Raw judge output for one run."""

    judgments: tuple[PropertyJudgment, ...]


@register_type
class JudgeRun(DomainModel):
    """One run's judgments with its aggregate scores."""

    judgments: tuple[PropertyJudgment, ...]
    tcc_raw: float = Field(ge=1.0, le=4.0)
    ms_raw: float = Field(ge=1.0, le=4.0)


@register_type
class BaselineFlags(DomainModel):
    tcc: bool
    ms: bool


@register_type
class JudgeReport(DomainModel):
    """Multi-run aggregate: means, rounded finals, baseline screening."""

    per_run: tuple[JudgeRun, ...]
    tcc_mean: float
    ms_mean: float
    tcc_final: int = Field(ge=1, le=4)
    ms_final: int = Field(ge=1, le=4)
    meets_baseline: BaselineFlags
    judge_runs: int = Field(default=3, ge=1)

    @field_validator("per_run")
    @classmethod
    def _non_empty(cls, v: tuple[JudgeRun, ...]) -> tuple[JudgeRun, ...]:
        if not v:
            raise ValueError("per_run must be non-empty")
        return v


def round_half_up(value: Fraction) -> int:
    """Round to nearest integer, ties away from zero upward, clamped to 1..4."""
    rounded = math.floor(value + Fraction(1, 2))
    return max(1, min(4, rounded))


def run_scores(judgments: Sequence[PropertyJudgment]) -> tuple[Fraction, Fraction]:
    """Exact (tcc_raw, ms_raw) for one run's judgment list."""
    if not judgments:
        raise JudgeNoProperties("judge extracted no properties")
    tcc_raw = Fraction(sum(j.tcc_label for j in judgments), len(judgments))
    covered = [j for j in judgments if j.tcc_label >= 2]
    if covered:
        ms_raw = Fraction(sum(j.ms_label for j in covered), len(covered))
    else:
        ms_raw = Fraction(1)
    return tcc_raw, ms_raw


def judge_once(
    gateway: Gateway,
    concept: ConceptDefinition,
    analogy: Analogy,
    template_id: str = "analogy_judge_v1",
) -> JudgeRun:
    prompt = get_template(template_id).render(
        {
            "concept_json": canonical_json(model_payload(concept)),
            "analogy_json": canonical_json(model_payload(analogy)),
        }
    )
    response, _ = gateway.complete_structured("judge", prompt, JudgeResponse)
    tcc_raw, ms_raw = run_scores(response.judgments)
    return JudgeRun(
        judgments=response.judgments, tcc_raw=float(tcc_raw), ms_raw=float(ms_raw)
    )


def aggregate_runs(runs: Sequence[JudgeRun]) -> JudgeReport:
    """Fold per-run scores into means, finals and baseline flags."""
    if not runs:
        raise PreconditionError("cannot aggregate zero judge runs")
    tcc_values = [run_scores(r.judgments)[0] for r in runs]
    ms_values = [run_scores(r.judgments)[1] for r in runs]
    tcc_mean = Fraction(sum(tcc_values), len(runs))
    ms_mean = Fraction(sum(ms_values), len(runs))
    tcc_final = round_half_up(tcc_mean)
    ms_final = round_half_up(ms_mean)
    return JudgeReport(
        per_run=tuple(runs),
        tcc_mean=float(tcc_mean),
        ms_mean=float(ms_mean),
        tcc_final=tcc_final,
        ms_final=ms_final,
        meets_baseline=BaselineFlags(
            tcc=tcc_final >= BASELINE_THRESHOLD, ms=ms_final >= BASELINE_THRESHOLD
        ),
        judge_runs=len(runs),
    )


def score(
    gateway: Gateway,
    concept: ConceptDefinition,
    analogy: Analogy,
    runs: int = 3,
    template_id: str = "analogy_judge_v1",
) -> JudgeReport:
    if runs < 1:
        raise PreconditionError("judge needs at least one run")
    completed: list[JudgeRun] = []
    for _ in range(runs):
        try:
            completed.append(judge_once(gateway, concept, analogy, template_id))
        except AnvilError as exc:
            raise EvaluationError(
                f"judge run {len(completed) + 1} of {runs} failed: {exc}",
                partial_runs=[model_payload(r) for r in completed],
            ) from exc
    return aggregate_runs(completed)


def dimension_summary(means: Sequence[Fraction], meets_count: int) -> dict:
    n = len(means)
    mean = sum(means, Fraction(0)) / n
    variance = sum((m - mean) ** 2 for m in means) / n
    return {
        "meets_baseline_pct": float(Fraction(100 * meets_count, n)),
        "mean": float(mean),
        "sd": math.sqrt(variance),
    }


def batch_summary(reports: Sequence[JudgeReport]) -> dict:
    """Corpus-level table over many scored analogies: per dimension, the
    share meeting the baseline plus mean and population spread of the
    per-report mean scores. Exact rational arithmetic up to the final sqrt."""
    if not reports:
        raise EmptyCollection("cannot summarize an empty report batch")
    table: dict = {"reports": len(reports)}
    for dim in ("tcc", "ms"):
        table[dim] = dimension_summary(
            [Fraction(getattr(r, f"{dim}_mean")) for r in reports],
            sum(1 for r in reports if getattr(r.meets_baseline, dim)),
        )
    return table


def make_controlled_negative(
    analogy: Analogy, mode: str, seed: int = 0
) -> Analogy:
    """A deliberately corrupted analogy for evaluator-sensitivity checks."""
    if mode not in NEGATIVE_MODES:
        raise PreconditionError(f"unknown negative mode {mode!r}")
    if len(analogy.mappings) < 2:
        raise PreconditionError(f"{mode} needs at least 2 mappings")
    rng = random.Random(seed)
    mappings = list(analogy.mappings)
    if mode == "drop_property":
        del mappings[rng.randrange(len(mappings))]
    elif mode == "cross_mapping":
        i, j = rng.sample(range(len(mappings)), 2)
        swapped_i = mappings[i].model_copy(
            update={"source_counterpart": mappings[j].source_counterpart}
        )
        swapped_j = mappings[j].model_copy(
            update={"source_counterpart": mappings[i].source_counterpart}
        )
        mappings[i], mappings[j] = swapped_i, swapped_j
    else:
        idx = rng.randrange(len(mappings))
        phrase = SURFACE_PHRASES[rng.randrange(len(SURFACE_PHRASES))]
        mappings[idx] = mappings[idx].model_copy(update={"rationale": phrase})
    return analogy.model_copy(update={"mappings": tuple(mappings)})
