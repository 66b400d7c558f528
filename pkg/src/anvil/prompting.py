"""Versioned prompt templates with named slots.

Templates live as package files: a small ``key: value`` header, a ``---``
separator, then the body with ``{{slot}}`` markers. Rendering is strict:
missing required slots and unresolved markers are errors, never silent.
"""

from __future__ import annotations

import importlib.resources
import re
from functools import lru_cache
from typing import Mapping

from pydantic import BaseModel, ConfigDict

from .errors import TemplateError

SLOT_RE = re.compile(r"\{\{(\w+)\}\}")

#: Markers delimiting the reusable utility block inside code templates.
UTILITY_BEGIN = "# --- anvil utilities"
UTILITY_END = "# --- end anvil utilities"


class PromptTemplate(BaseModel):
    model_config = ConfigDict(frozen=True)

    template_id: str
    version: int
    body: str
    required_slots: tuple[str, ...]

    @classmethod
    def parse(cls, text: str, source: str = "<string>") -> "PromptTemplate":
        if "\n---\n" not in text:
            raise TemplateError(f"{source}: missing '---' header separator")
        header, body = text.split("\n---\n", 1)
        fields: dict[str, str] = {}
        for line in header.splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if ":" not in line:
                raise TemplateError(f"{source}: malformed header line {line!r}")
            key, value = line.split(":", 1)
            fields[key.strip()] = value.strip()
        for key in ("id", "version"):
            if key not in fields:
                raise TemplateError(f"{source}: header missing {key!r}")
        required = tuple(
            slot.strip() for slot in fields.get("required", "").split(",") if slot.strip()
        )
        try:
            version = int(fields["version"])
        except ValueError:
            raise TemplateError(f"{source}: version must be an integer") from None
        template = cls(
            template_id=fields["id"], version=version, body=body, required_slots=required
        )
        declared = set(required)
        present = set(SLOT_RE.findall(body))
        missing = declared - present
        if missing:
            raise TemplateError(
                f"{source}: required slots absent from body: {sorted(missing)}"
            )
        return template

    def render(self, slots: Mapping[str, object]) -> str:
        missing = [slot for slot in self.required_slots if slot not in slots]
        if missing:
            raise TemplateError(
                f"template {self.template_id}: unbound required slots {missing}"
            )
        leftover: set[str] = set()

        def substitute(match: re.Match) -> str:
            name = match.group(1)
            if name in slots:
                return str(slots[name])
            leftover.add(name)
            return match.group(0)

        rendered = SLOT_RE.sub(substitute, self.body)
        if leftover:
            raise TemplateError(
                f"template {self.template_id}: unresolved slot markers {sorted(leftover)}"
            )
        return rendered


def _package_root():
    return importlib.resources.files("anvil")


@lru_cache(maxsize=1)
def load_templates() -> dict[str, PromptTemplate]:
    """All built-in prompt templates, keyed by template_id."""
    templates: dict[str, PromptTemplate] = {}
    prompts = _package_root() / "prompts"
    for group in prompts.iterdir():
        if not group.is_dir():
            continue
        for entry in group.iterdir():
            if not entry.name.endswith(".tmpl"):
                continue
            template = PromptTemplate.parse(entry.read_text(encoding="utf-8"), source=entry.name)
            if template.template_id in templates:
                raise TemplateError(f"duplicate template id {template.template_id!r}")
            templates[template.template_id] = template
    return templates


def get_template(template_id: str) -> PromptTemplate:
    try:
        return load_templates()[template_id]
    except KeyError:
        raise TemplateError(f"no template named {template_id!r}") from None


@lru_cache(maxsize=None)
def load_code_template(template_id: str) -> str:
    """The fixed animation-script skeleton shipped under templates/code."""
    path = _package_root() / "templates" / "code" / f"{template_id}.py"
    try:
        return path.read_text(encoding="utf-8")
    except (FileNotFoundError, OSError):
        raise TemplateError(f"no code template named {template_id!r}") from None


def utility_block(template_text: str) -> str:
    """The marker-delimited utility-function block, markers included."""
    start = template_text.find(UTILITY_BEGIN)
    end = template_text.find(UTILITY_END)
    if start == -1 or end == -1 or end <= start:
        raise TemplateError("code template has no utility block markers")
    end_line = template_text.index("\n", end) if "\n" in template_text[end:] else len(template_text)
    return template_text[start:end_line]
