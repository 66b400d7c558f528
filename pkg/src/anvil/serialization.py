"""Canonical JSON serialization for domain types.

Canonical form: UTF-8, sorted object keys, two-space indent, LF line endings,
a single trailing newline, and no NaN/Infinity. Equal values always serialize
to identical bytes; ``deserialize(serialize(x)) == x`` for every registered
type. Unknown fields inside the payload are preserved (with a warning) so
stored artifacts survive prompt/schema evolution.
"""

from __future__ import annotations

import json
import logging
from typing import Any, Type, TypeVar

from pydantic import BaseModel, ValidationError

from .errors import ParseError, SchemaValidationError

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1

_REGISTRY: dict[str, Type[BaseModel]] = {}

M = TypeVar("M", bound=BaseModel)


def register_type(cls: Type[M]) -> Type[M]:
    """Register a model under its class name for envelope round-trips."""
    _REGISTRY[cls.__name__] = cls
    return cls


def registered_types() -> dict[str, Type[BaseModel]]:
    return dict(_REGISTRY)


def _register_core_types() -> None:
    from . import model

    for name in (
        "ConceptDefinition",
        "Mapping",
        "Analogy",
        "RenderSource",
        "ElementSpec",
        "AssetCatalog",
        "Coordinates",
        "SceneAction",
        "Scene",
        "Screenplay",
        "ProducedBy",
        "ScriptArtifact",
        "Diagnostic",
        "RepairIteration",
        "RepairOutcome",
        "RepairTrace",
        "RepairPolicy",
        "VideoMeta",
        "RunStatus",
        "PipelineRun",
        "CoverageEntry",
        "ValidationReport",
    ):
        register_type(getattr(model, name))


def canonical_json(payload: Any) -> str:
    """Dump any JSON-able payload in canonical form (ends with one LF)."""
    return (
        json.dumps(payload, ensure_ascii=False, sort_keys=True, indent=2, allow_nan=False)
        + "\n"
    )


def model_payload(value: BaseModel) -> Any:
    """JSON-mode dump of a model, unknown extra fields included."""
    return value.model_dump(mode="json")


def serialize(value: BaseModel) -> str:
    """Serialize a registered domain value to canonical enveloped JSON."""
    kind = type(value).__name__
    if kind not in _REGISTRY:
        raise SchemaValidationError(f"type {kind} is not registered for serialization")
    envelope = {
        "schema_version": SCHEMA_VERSION,
        "kind": kind,
        "data": model_payload(value),
    }
    return canonical_json(envelope)


def parse_json(text: str) -> Any:
    """Parse JSON text, converting syntax errors to ParseError with position."""
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"malformed JSON: {exc.msg}", line=exc.lineno, column=exc.colno) from exc


def validation_error_paths(exc: ValidationError) -> list[str]:
    """Flatten a pydantic error into ``path: message`` strings."""
    paths = []
    for err in exc.errors():
        loc = ".".join(str(part) for part in err["loc"]) or "<root>"
        paths.append(f"{loc}: {err['msg']}")
    return paths


def build_model(cls: Type[M], payload: Any) -> M:
    """Validate a payload into a model, mapping failures to SchemaValidationError."""
    try:
        return cls.model_validate(payload)
    except ValidationError as exc:
        raise SchemaValidationError(
            f"{cls.__name__} failed validation", field_paths=validation_error_paths(exc)
        ) from exc


def _warn_unknown_fields(cls: Type[BaseModel], payload: Any, prefix: str = "") -> None:
    if not isinstance(payload, dict):
        return
    known = set(cls.model_fields)
    unknown = [k for k in payload if k not in known]
    if unknown:
        logger.warning(
            "%s: unknown fields preserved on %s: %s", prefix or cls.__name__, cls.__name__, unknown
        )


def deserialize(text: str, expected: Type[M] | None = None) -> M:
    """Parse canonical enveloped JSON back into its domain value.

    Raises ParseError for malformed text, SchemaValidationError (with field
    paths) for payloads violating the type's schema or an unexpected kind.
    """
    payload = parse_json(text)
    if not isinstance(payload, dict):
        raise SchemaValidationError("artifact envelope must be a JSON object")
    missing = [k for k in ("kind", "data") if k not in payload]
    if missing:
        raise SchemaValidationError(
            "artifact envelope incomplete", field_paths=[f"{k}: missing" for k in missing]
        )
    kind = payload["kind"]
    cls = _REGISTRY.get(kind)
    if cls is None:
        raise SchemaValidationError(f"unknown artifact kind {kind!r}")
    if expected is not None and cls is not expected:
        raise SchemaValidationError(f"expected {expected.__name__}, found {kind}")
    version = payload.get("schema_version")
    if version not in (None, SCHEMA_VERSION):
        logger.warning("artifact schema_version %r read by version %d", version, SCHEMA_VERSION)
    _warn_unknown_fields(cls, payload["data"], prefix=kind)
    return build_model(cls, payload["data"])  # type: ignore[return-value]


def json_schema_for(cls: Type[BaseModel]) -> dict:
    """JSON schema document for a registered type, stamped with schema_version."""
    schema = cls.model_json_schema()
    schema["schema_version"] = SCHEMA_VERSION
    return schema


def export_schemas(directory) -> list[str]:
    """Write one schema document per registered type into ``directory``."""
    from pathlib import Path

    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for name, cls in sorted(_REGISTRY.items()):
        path = out / f"{name}.json"
        path.write_text(canonical_json(json_schema_for(cls)), encoding="utf-8")
        written.append(str(path))
    return written


_register_core_types()
