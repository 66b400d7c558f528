"""Stage 1: produce a coverage-constrained analogy for a concept.

The prompt instructs relational (structure-mapping) correspondences and lists
every concept property verbatim; coverage is then enforced post-hoc by
validate_analogy. One corrective re-ask listing the uncovered properties is
issued on failure; a still-failing analogy is returned flagged, so the run can
pause for human review instead of looping.
"""

from __future__ import annotations

import logging

from pydantic import BaseModel, ConfigDict

from .gateway import Gateway
from .model import Analogy, ConceptDefinition, ValidationReport
from .prompting import get_template
from .serialization import canonical_json, model_payload
from .validation import validate_analogy

logger = logging.getLogger(__name__)


class AnalogyResult(BaseModel):
    model_config = ConfigDict(frozen=True)

    analogy: Analogy
    report: ValidationReport
    coverage_failed: bool
    reasks: int


def bullet_list(items) -> str:
    return "\n".join(f"- {item}" for item in items)


def analogy_prompt(concept: ConceptDefinition, template_id: str = "analogy_v1") -> str:
    return get_template(template_id).render(
        {
            "concept_name": concept.concept_name,
            "definition": concept.definition,
            "properties": bullet_list(concept.properties),
        }
    )


def generate_analogy(
    gateway: Gateway,
    concept: ConceptDefinition,
    template_id: str = "analogy_v1",
) -> AnalogyResult:
    prompt = analogy_prompt(concept, template_id)
    analogy, _ = gateway.complete_structured("textual", prompt, Analogy)
    report = validate_analogy(concept, analogy)
    if report.passed:
        return AnalogyResult(analogy=analogy, report=report, coverage_failed=False, reasks=0)

    logger.info(
        "analogy for %s left properties uncovered: %s",
        concept.concept_name,
        list(report.uncovered_properties),
    )
    correction = get_template("analogy_coverage_reask_v1").render(
        {
            "previous_analogy": canonical_json(model_payload(analogy)),
            "uncovered_properties": bullet_list(report.uncovered_properties),
        }
    )
    analogy, _ = gateway.complete_structured("textual", prompt + "\n\n" + correction, Analogy)
    report = validate_analogy(concept, analogy)
    return AnalogyResult(
        analogy=analogy, report=report, coverage_failed=not report.passed, reasks=1
    )
