"""Exception hierarchy shared across the pipeline, evaluators and services.

Every error carries a stable ``code`` string so the CLI can map error classes
to distinct exit codes and the HTTP service can map them to status codes.
"""

from __future__ import annotations


class AnvilError(Exception):
    """Base class for all package errors."""

    code = "error"


class ParseError(AnvilError):
    """Malformed artifact text; carries the parser position."""

    code = "parse_error"

    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        self.line = line
        self.column = column
        if line is not None:
            message = f"{message} (line {line}, column {column})"
        super().__init__(message)


class SchemaValidationError(AnvilError):
    """A value failed schema validation; carries per-field paths."""

    code = "schema_validation"

    def __init__(self, message: str, field_paths: list[str] | None = None):
        self.field_paths = list(field_paths or [])
        if self.field_paths:
            message = message + "\n  " + "\n  ".join(self.field_paths)
        super().__init__(message)


class RoleUnboundError(AnvilError):
    code = "role_unbound"


class TransportError(AnvilError):
    """Provider transport failure that survived the retry budget."""

    code = "transport"


class SchemaInvalidAfterRetries(AnvilError):
    """Model output never conformed to the requested schema; keeps the last raw output."""

    code = "schema_invalid_after_retries"

    def __init__(self, message: str, last_raw: str = ""):
        self.last_raw = last_raw
        super().__init__(message)


class ReplayMissError(AnvilError):
    """Replay mode found no recorded transcript for a request."""

    code = "replay_miss"

    def __init__(self, role: str, digest: str, sequence: int = 0):
        self.role = role
        self.digest = digest
        self.sequence = sequence
        super().__init__(
            f"no replay fixture for role={role} digest={digest} sequence={sequence}"
        )


class UnreadableMediaError(AnvilError):
    code = "unreadable_media"


class TemplateError(AnvilError):
    """Prompt template missing, or rendering left/required slots unresolved."""

    code = "template"


class ElementAssetUnknown(AnvilError):
    """An element kept referencing an asset missing from the catalog after the corrective re-ask."""

    code = "element_asset_unknown"

    def __init__(self, message: str, unknown_assets: list[str] | None = None):
        self.unknown_assets = list(unknown_assets or [])
        super().__init__(message)


class ScreenplayUndefinedElements(AnvilError):
    """The screenplay kept referencing undefined elements after the corrective re-ask."""

    code = "screenplay_undefined_elements"

    def __init__(self, message: str, undefined: list[str] | None = None):
        self.undefined = list(undefined or [])
        super().__init__(message)


class ToolchainUnavailable(AnvilError):
    code = "toolchain_unavailable"


class RepairLoopAborted(AnvilError):
    """A provider error interrupted the repair loop; carries the trace so far."""

    code = "repair_aborted"

    def __init__(self, message: str, trace=None):
        self.trace = trace
        super().__init__(message)


class RepairExhausted(AnvilError):
    """The repair loop hit its iteration cap with errors remaining."""

    code = "repair_exhausted"

    def __init__(self, message: str, trace=None):
        self.trace = trace
        super().__init__(message)


class RenderError(AnvilError):
    """The renderer exited nonzero or timed out; carries an output excerpt."""

    code = "render"

    def __init__(self, message: str, excerpt: str = ""):
        self.excerpt = excerpt
        super().__init__(message)


class PreconditionError(AnvilError):
    """An operation was invoked outside its contract (caller bug, not data)."""

    code = "precondition"


class JudgeNoProperties(AnvilError):
    code = "judge_no_properties"


class EvaluationError(AnvilError):
    """A judge run failed part-way; carries per-run partial results."""

    code = "evaluation"

    def __init__(self, message: str, partial_runs=None):
        self.partial_runs = list(partial_runs or [])
        super().__init__(message)


class UndefinedAgreement(AnvilError):
    """Agreement coefficient is undefined (no expected disagreement)."""

    code = "undefined_agreement"


class InsufficientData(AnvilError):
    code = "insufficient_data"


class EmptyCollection(AnvilError):
    code = "empty_collection"


class StageOrderError(AnvilError):
    """An artifact was persisted (or mutated) out of stage order."""

    code = "stage_order"


class UnknownRunError(AnvilError):
    code = "unknown_run"


class UnknownStageError(AnvilError):
    code = "unknown_stage"


class ValidationRejected(AnvilError):
    """An edited artifact failed re-validation; carries the ValidationReport."""

    code = "validation_rejected"

    def __init__(self, message: str, report=None):
        self.report = report
        super().__init__(message)


class RunBusyError(AnvilError):
    """The run is currently executing a stage; mutation refused."""

    code = "run_busy"


class ConfigError(AnvilError):
    code = "config"
