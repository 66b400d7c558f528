"""Stage 3: script generation, the bounded diagnose-repair-verify loop, render.

The repair loop runs only when errors are detected: warnings never trigger it
(unless policy says otherwise), and a clean first diagnosis means zero
repair-model calls. The loop is capped by policy.max_iterations and every
round is recorded in the RepairTrace.
"""

from __future__ import annotations

import logging
from pathlib import Path
from typing import Sequence

from pydantic import field_validator

from .errors import AnvilError, PreconditionError, RepairLoopAborted, SchemaInvalidAfterRetries
from .gateway import Gateway
from .model import (
    Diagnostic,
    DomainModel,
    ElementSpec,
    ProducedBy,
    RepairIteration,
    RepairOutcome,
    RepairPolicy,
    RepairTrace,
    Screenplay,
    ScriptArtifact,
    VideoMeta,
)
from .prompting import get_template, load_code_template, utility_block
from .serialization import canonical_json, model_payload, register_type
from .toolchain import Toolchain

logger = logging.getLogger(__name__)


@register_type
class ScriptResponse(DomainModel):
    """Model response wrapper carrying generated program text."""

    source_text: str

    @field_validator("source_text")
    @classmethod
    def _non_empty(cls, v: str) -> str:
        if not v.strip():
            raise ValueError("source_text must be non-empty")
        return v


def format_diagnostics(diagnostics: Sequence[Diagnostic]) -> str:
    """Human-readable diagnostic block used in prompts and CLI output."""
    if not diagnostics:
        return "(none)"
    lines = []
    for d in diagnostics:
        location = f" (line {d.line})" if d.line is not None else ""
        excerpt = f"\n  output: {d.excerpt}" if d.excerpt else ""
        lines.append(f"- [{d.phase} {d.severity}] {d.message}{location}{excerpt}")
    return "\n".join(lines)


def generate_script(
    gateway: Gateway,
    elements: Sequence[ElementSpec],
    screenplay: Screenplay,
    template_id: str = "lesson_v1",
) -> ScriptArtifact:
    template_text = load_code_template(template_id)
    block = utility_block(template_text)
    prompt = get_template("script_v1").render(
        {
            "elements_json": canonical_json([model_payload(el) for el in elements]),
            "screenplay_json": canonical_json(model_payload(screenplay)),
            "script_template": template_text,
        }
    )
    response, _ = gateway.complete_structured("code", prompt, ScriptResponse)
    source = response.source_text
    if block not in source:
        logger.info("generated script dropped the utility block; issuing corrective re-ask")
        correction = get_template("script_utility_reask_v1").render({"utility_block": block})
        response, _ = gateway.complete_structured(
            "code", prompt + "\n\n" + correction, ScriptResponse
        )
        source = response.source_text
        if block not in source:
            raise SchemaInvalidAfterRetries(
                "generated script still lacks the required utility block "
                "after the corrective re-ask",
                last_raw=source,
            )
    return ScriptArtifact(
        source_text=source,
        template_id=template_id,
        produced_by=ProducedBy(kind="generator"),
    )


def has_errors(diagnostics: Sequence[Diagnostic], policy: RepairPolicy) -> bool:
    for d in diagnostics:
        if d.severity == "error":
            return True
        if policy.treat_warnings_as_errors and d.severity == "warning":
            return True
    return False


def diagnose(
    toolchain: Toolchain, script: ScriptArtifact, policy: RepairPolicy
) -> list[Diagnostic]:
    """Static phase always; runtime phase only when static finds no errors."""
    static = list(toolchain.analyze(script.source_text))
    if has_errors(static, policy):
        return static
    runtime = list(toolchain.execute(script.source_text))
    return static + runtime


def _repair_prompt(script: ScriptArtifact, diagnostics: Sequence[Diagnostic]) -> str:
    return get_template("repair_v1").render(
        {
            "script": script.source_text,
            "diagnostics": format_diagnostics(diagnostics),
        }
    )


def repair_loop(
    gateway: Gateway,
    toolchain: Toolchain,
    script: ScriptArtifact,
    policy: RepairPolicy,
) -> tuple[ScriptArtifact, RepairTrace]:
    """Diagnose, and while errors remain, repair and re-diagnose, capped."""
    current = script
    diagnostics = diagnose(toolchain, current, policy)
    if not has_errors(diagnostics, policy):
        return current, RepairTrace(
            iterations=(), outcome=RepairOutcome(kind="clean_without_repair")
        )

    iterations: list[RepairIteration] = []
    for k in range(1, policy.max_iterations + 1):
        try:
            response, _ = gateway.complete_structured(
                "repair", _repair_prompt(current, diagnostics), ScriptResponse
            )
        except AnvilError as exc:
            partial = RepairTrace(
                iterations=tuple(iterations), outcome=RepairOutcome(kind="exhausted")
            )
            raise RepairLoopAborted(
                f"repair iteration {k} failed: {exc}", trace=partial
            ) from exc
        repaired = ScriptArtifact(
            source_text=response.source_text,
            template_id=current.template_id,
            produced_by=ProducedBy(kind="repair_iteration", iteration=k),
        )
        after = diagnose(toolchain, repaired, policy)
        iterations.append(
            RepairIteration(
                diagnostics_in=tuple(diagnostics),
                script_out=repaired,
                diagnostics_after=tuple(after),
            )
        )
        current = repaired
        if not has_errors(after, policy):
            return current, RepairTrace(
                iterations=tuple(iterations),
                outcome=RepairOutcome(kind="repaired", iterations=k),
            )
        diagnostics = after

    logger.info("repair budget exhausted after %d iterations", policy.max_iterations)
    return current, RepairTrace(
        iterations=tuple(iterations), outcome=RepairOutcome(kind="exhausted")
    )


def render(
    toolchain: Toolchain,
    script: ScriptArtifact,
    trace: RepairTrace,
    output_path,
) -> VideoMeta:
    if trace.outcome.kind == "exhausted":
        raise PreconditionError(
            "render requires a clean or repaired script; repair loop was exhausted"
        )
    return toolchain.render_video(script.source_text, Path(output_path))
