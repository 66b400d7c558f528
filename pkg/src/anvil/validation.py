"""Deterministic validators for analogies, element specs and screenplays.

Property matching is normalized exact match (lowercase, punctuation stripped,
whitespace collapsed) — no semantic similarity here; that slack belongs to the
judge. Validation failures are report content, never exceptions; raw dict
inputs that violate the schema also surface as failed reports so HTTP handlers
can return them verbatim.
"""

from __future__ import annotations

import string
from typing import Iterable, Sequence, Union

from .errors import SchemaValidationError
from .model import (
    Analogy,
    AssetCatalog,
    ConceptDefinition,
    CoverageEntry,
    ElementSpec,
    Screenplay,
    ValidationReport,
    collapse_whitespace,
)
from .serialization import build_model

_PUNCT_TABLE = str.maketrans({c: " " for c in string.punctuation})


def normalize_for_match(text: str) -> str:
    """Lowercase, strip punctuation, collapse whitespace."""
    return collapse_whitespace(text.lower().translate(_PUNCT_TABLE))


def _schema_failure(kind: str, exc: SchemaValidationError) -> ValidationReport:
    issues = tuple(exc.field_paths) if exc.field_paths else (str(exc),)
    return ValidationReport(passed=False, kind=kind, issues=issues)


def _coerce(cls, value, kind: str):
    """Parse raw input into a model; schema violations become a failed report."""
    if isinstance(value, cls):
        return value, None
    try:
        return build_model(cls, value), None
    except SchemaValidationError as exc:
        return None, _schema_failure(kind, exc)


def validate_analogy(
    concept: Union[ConceptDefinition, dict], analogy: Union[Analogy, dict]
) -> ValidationReport:
    """Check the coverage constraint: every concept property needs a mapping.

    The report lists each property as covered/uncovered with the matching
    mapping for covered ones; ``passed`` iff no property is uncovered.
    """
    concept, failure = _coerce(ConceptDefinition, concept, "analogy_coverage")
    if failure:
        return failure
    analogy, failure = _coerce(Analogy, analogy, "analogy_coverage")
    if failure:
        return failure

    by_target = {}
    for mapping in analogy.mappings:
        by_target.setdefault(normalize_for_match(mapping.target_property), mapping)

    coverage = []
    uncovered = []
    matched_keys = set()
    for prop in concept.properties:
        key = normalize_for_match(prop)
        mapping = by_target.get(key)
        if mapping is None:
            uncovered.append(prop)
            coverage.append(CoverageEntry(property=prop, covered=False))
        else:
            matched_keys.add(key)
            coverage.append(CoverageEntry(property=prop, covered=True, mapping=mapping))

    extra = [
        m.target_property
        for m in analogy.mappings
        if normalize_for_match(m.target_property) not in matched_keys
    ]
    warnings = tuple(
        f"mapping target {t!r} matches no concept property" for t in dict.fromkeys(extra)
    )
    return ValidationReport(
        passed=not uncovered,
        kind="analogy_coverage",
        issues=tuple(f"uncovered property: {p}" for p in uncovered),
        coverage=tuple(coverage),
        uncovered_properties=tuple(uncovered),
        warnings=warnings,
    )


def _defined_names(elements: Iterable[Union[ElementSpec, dict]]) -> set[str]:
    names = set()
    for el in elements:
        names.add(el.name if isinstance(el, ElementSpec) else str(el.get("name", "")))
    return names


def validate_screenplay(
    screenplay: Union[Screenplay, dict],
    elements: Sequence[Union[ElementSpec, dict]],
) -> ValidationReport:
    """Flag every element name a scene references without a definition."""
    screenplay, failure = _coerce(Screenplay, screenplay, "screenplay_elements")
    if failure:
        return failure

    defined = _defined_names(elements)
    undefined = sorted(screenplay.referenced_elements() - defined)
    return ValidationReport(
        passed=not undefined,
        kind="screenplay_elements",
        issues=tuple(f"undefined element: {n}" for n in undefined),
        undefined_elements=tuple(undefined),
    )


def validate_elements(
    elements: Sequence[Union[ElementSpec, dict]], catalog: AssetCatalog
) -> ValidationReport:
    """Check element uniqueness and that asset references exist in the catalog."""
    parsed = []
    for i, el in enumerate(elements):
        if isinstance(el, ElementSpec):
            parsed.append(el)
            continue
        try:
            parsed.append(build_model(ElementSpec, el))
        except SchemaValidationError as exc:
            paths = [f"{i}.{p}" for p in exc.field_paths] or [f"{i}: {exc}"]
            return ValidationReport(passed=False, kind="element_specs", issues=tuple(paths))

    issues = []
    if not parsed:
        issues.append("no elements")
    seen = set()
    unknown_assets = []
    for el in parsed:
        if el.name in seen:
            issues.append(f"duplicate element name: {el.name}")
        seen.add(el.name)
        if el.render_source.kind == "asset" and el.render_source.filename not in catalog:
            unknown_assets.append(el.render_source.filename)
            issues.append(f"unknown asset: {el.render_source.filename} (element {el.name})")
    return ValidationReport(
        passed=not issues,
        kind="element_specs",
        issues=tuple(issues),
        undefined_elements=tuple(unknown_assets),
    )
