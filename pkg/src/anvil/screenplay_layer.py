"""Stage 2: lower the analogy into element specs and a screenplay.

Element definitions see the asset catalog inside the prompt and may only
reference cataloged filenames; screenplays may only reference defined element
names. Each constraint gets one corrective re-ask, then a typed failure.
"""

from __future__ import annotations

import logging
from typing import Sequence

from pydantic import BaseModel, ConfigDict, field_validator

from .errors import ElementAssetUnknown, ScreenplayUndefinedElements, ValidationRejected
from .gateway import Gateway
from .model import Analogy, AssetCatalog, DomainModel, ElementSpec, Screenplay, ValidationReport
from .prompting import get_template
from .serialization import canonical_json, model_payload, register_type
from .validation import normalize_for_match, validate_elements, validate_screenplay

logger = logging.getLogger(__name__)

#: Soft cap appended to the screenplay prompt; config can override.
DEFAULT_MAX_SCENES = 8

#: Words too common to signal that an element represents a counterpart.
_STOPWORDS = frozenset(
    "a an the of to in on at and or for with by as is are was its it this that".split()
)


@register_type
class ElementList(DomainModel):
    """Wrapper for the element-definition response."""

    elements: tuple[ElementSpec, ...]

    @field_validator("elements")
    @classmethod
    def _non_empty(cls, v: tuple[ElementSpec, ...]) -> tuple[ElementSpec, ...]:
        if not v:
            raise ValueError("elements must be non-empty")
        return v


class ElementsResult(BaseModel):
    model_config = ConfigDict(frozen=True)

    elements: tuple[ElementSpec, ...]
    report: ValidationReport
    association_warnings: tuple[str, ...]
    reasks: int


class ScreenplayResult(BaseModel):
    model_config = ConfigDict(frozen=True)

    screenplay: Screenplay
    report: ValidationReport
    reasks: int


def _catalog_block(catalog: AssetCatalog) -> str:
    if not catalog.entries:
        return "(the catalog is empty: use only procedural render sources)"
    return "\n".join(f"- {name}" for name in catalog.entries)


def association_warnings(
    analogy: Analogy, elements: Sequence[ElementSpec]
) -> tuple[str, ...]:
    """Mappings whose source counterpart no element plausibly represents.

    Word-overlap check between the counterpart text and each element's
    name/role; warning-level only, never a failure.
    """
    warnings = []
    element_words: set[str] = set()
    for el in elements:
        element_words.update(normalize_for_match(el.name.replace("_", " ")).split())
        element_words.update(normalize_for_match(el.role).split())
    element_words -= _STOPWORDS
    for mapping in analogy.mappings:
        counterpart_words = (
            set(normalize_for_match(mapping.source_counterpart).split()) - _STOPWORDS
        )
        if counterpart_words and not (counterpart_words & element_words):
            warnings.append(
                f"mapping counterpart {mapping.source_counterpart!r} is not "
                f"clearly represented by any element"
            )
    return tuple(warnings)


def define_elements(
    gateway: Gateway,
    analogy: Analogy,
    catalog: AssetCatalog,
    template_id: str = "elements_v1",
) -> ElementsResult:
    prompt = get_template(template_id).render(
        {
            "analogy_json": canonical_json(model_payload(analogy)),
            "asset_filenames": _catalog_block(catalog),
        }
    )
    listing, _ = gateway.complete_structured("screenplay", prompt, ElementList)
    report = validate_elements(listing.elements, catalog)
    reasks = 0
    if not report.passed:
        logger.info("element list rejected: %s", list(report.issues))
        correction = get_template("elements_asset_reask_v1").render(
            {
                "previous_elements": canonical_json(model_payload(listing)),
                "unknown_assets": "\n".join(f"- {a}" for a in report.undefined_elements)
                or "(none; see issues below)\n" + "\n".join(report.issues),
                "asset_filenames": _catalog_block(catalog),
            }
        )
        listing, _ = gateway.complete_structured(
            "screenplay", prompt + "\n\n" + correction, ElementList
        )
        report = validate_elements(listing.elements, catalog)
        reasks = 1
        if not report.passed:
            if report.undefined_elements:
                raise ElementAssetUnknown(
                    f"elements reference unknown assets after corrective re-ask: "
                    f"{list(report.undefined_elements)}",
                    unknown_assets=list(report.undefined_elements),
                )
            raise ValidationRejected(
                "element list failed validation after corrective re-ask: "
                + "; ".join(report.issues),
                report=report,
            )
    return ElementsResult(
        elements=listing.elements,
        report=report,
        association_warnings=association_warnings(analogy, listing.elements),
        reasks=reasks,
    )


def generate_screenplay(
    gateway: Gateway,
    analogy: Analogy,
    elements: Sequence[ElementSpec],
    template_id: str = "screenplay_v1",
    max_scenes: int = DEFAULT_MAX_SCENES,
) -> ScreenplayResult:
    names = [el.name for el in elements]
    prompt = get_template(template_id).render(
        {
            "analogy_json": canonical_json(model_payload(analogy)),
            "elements_json": canonical_json([model_payload(el) for el in elements]),
            "element_names": ", ".join(names),
            "max_scenes": max_scenes,
        }
    )
    screenplay, _ = gateway.complete_structured("screenplay", prompt, Screenplay)
    report = validate_screenplay(screenplay, list(elements))
    reasks = 0
    if not report.passed:
        logger.info("screenplay rejected: %s", list(report.issues))
        correction = get_template("screenplay_reask_v1").render(
            {
                "previous_screenplay": canonical_json(model_payload(screenplay)),
                "undefined_elements": "\n".join(f"- {n}" for n in report.undefined_elements),
                "element_names": ", ".join(names),
            }
        )
        screenplay, _ = gateway.complete_structured(
            "screenplay", prompt + "\n\n" + correction, Screenplay
        )
        report = validate_screenplay(screenplay, list(elements))
        reasks = 1
        if not report.passed:
            raise ScreenplayUndefinedElements(
                f"screenplay references undefined elements after corrective re-ask: "
                f"{list(report.undefined_elements)}",
                undefined=list(report.undefined_elements),
            )
    return ScreenplayResult(screenplay=screenplay, report=report, reasks=reasks)
