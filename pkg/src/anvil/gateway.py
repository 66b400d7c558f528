"""Single gateway for all generative-model calls.

Every call goes through one of three backends: live HTTPS, recording (live
plus persisted transcripts), or replay (transcripts only, no network). Replay
keys are (role, request digest, sequence counter) so repeated identical
requests, like a judge run three times, replay three distinct responses.
Prompts are canonicalized before hashing so template reformatting does not
invalidate recorded fixtures.
"""

from __future__ import annotations

import hashlib
import logging
import os
import re
import threading
import time
from collections import deque
from pathlib import Path
from typing import Optional, Protocol, Type, TypeVar

from pydantic import BaseModel, ConfigDict, Field

from .errors import (
    ParseError,
    ReplayMissError,
    RoleUnboundError,
    SchemaInvalidAfterRetries,
    SchemaValidationError,
    TransportError,
    UnreadableMediaError,
)
from .model import DomainModel
from .serialization import (
    build_model,
    canonical_json,
    deserialize,
    json_schema_for,
    parse_json,
    register_type,
    serialize,
)

logger = logging.getLogger(__name__)

M = TypeVar("M", bound=BaseModel)

ROLE_NAMES = ("textual", "screenplay", "code", "repair", "judge", "vlm")

#: Schema re-asks after an invalid structured response.
REASK_LIMIT = 2

#: Transport retries for live provider calls.
TRANSPORT_ATTEMPTS = 3


@register_type
class ModelRole(DomainModel):
    """Binding of a pipeline role to a concrete model and sampling settings."""

    role: str
    model_id: str
    temperature: float = Field(ge=0.0)
    max_output: int = Field(gt=0, default=4096)

    @classmethod
    def defaults(cls) -> dict[str, "ModelRole"]:
        """Default bindings; configuration overrides these."""
        generative = {"temperature": 0.7}
        deterministic = {"temperature": 0.0}
        return {
            "textual": cls(role="textual", model_id="gpt-4o", **generative),
            "screenplay": cls(role="screenplay", model_id="gpt-4o", **generative),
            "code": cls(role="code", model_id="claude-3.7-sonnet", **generative),
            "repair": cls(role="repair", model_id="claude-3.7-sonnet", **generative),
            "judge": cls(role="judge", model_id="gpt-5.2", **deterministic),
            "vlm": cls(role="vlm", model_id="gemini-3.0-pro", **deterministic),
        }


@register_type
class Transcript(DomainModel):
    """One persisted provider exchange, the unit of record/replay."""

    transcript_id: str
    role: ModelRole
    request_digest: str
    sequence: int = Field(ge=0)
    response: str
    created_at: str = ""
    request_text: str = ""


class Attachment(BaseModel):
    """Reference to binary media sent with a request; only its hash is hashed."""

    model_config = ConfigDict(frozen=True)

    filename: str
    media_type: str
    content_digest: str


class ProviderRequest(BaseModel):
    """Canonicalized request; the digest is its identity for replay."""

    model_config = ConfigDict(frozen=True)

    binding: ModelRole
    prompt: str
    schema_text: str
    attachments: tuple[Attachment, ...] = ()

    @property
    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(self.prompt.encode("utf-8"))
        h.update(b"\x00")
        h.update(self.schema_text.encode("utf-8"))
        for attachment in self.attachments:
            h.update(b"\x00")
            h.update(attachment.content_digest.encode("utf-8"))
        return h.hexdigest()


class BackendResult(BaseModel):
    model_config = ConfigDict(frozen=True)

    response: str
    transcript_id: str


class Backend(Protocol):
    def complete(self, request: ProviderRequest) -> BackendResult: ...


def canonicalize_prompt(text: str) -> str:
    """Normalize line endings, trailing spaces and blank-line runs.

    Intra-line spacing is semantic (indentation in few-shot code, tables) and
    is preserved; only the noise a template reformat introduces is removed.
    """
    text = text.replace("\r\n", "\n").replace("\r", "\n")
    text = "\n".join(line.rstrip() for line in text.split("\n"))
    text = re.sub(r"\n{3,}", "\n\n", text)
    return text.strip("\n")


def strip_json_fences(text: str) -> str:
    """Remove a surrounding ```json fence if the model added one."""
    stripped = text.strip()
    match = re.match(r"^```(?:json)?\s*\n(.*)\n```$", stripped, re.DOTALL)
    return match.group(1) if match else stripped


def hash_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as handle:
        for chunk in iter(lambda: handle.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


class TokenBucket:
    """Blocking rate limiter: ``rate`` tokens per second, burst ``capacity``."""

    def __init__(self, rate: float, capacity: float, clock=time.monotonic, sleeper=time.sleep):
        self.rate = rate
        self.capacity = capacity
        self._tokens = capacity
        self._updated = clock()
        self._clock = clock
        self._sleep = sleeper
        self._lock = threading.Lock()

    def acquire(self) -> None:
        while True:
            with self._lock:
                now = self._clock()
                self._tokens = min(self.capacity, self._tokens + (now - self._updated) * self.rate)
                self._updated = now
                if self._tokens >= 1:
                    self._tokens -= 1
                    return
                wait = (1 - self._tokens) / self.rate
            self._sleep(wait)


class LiveBackend:
    """HTTPS chat-completion backend with bounded exponential-backoff retries."""

    def __init__(
        self,
        base_url: str = "https://api.provider.invalid/v1/chat/completions",
        env: Optional[dict] = None,
        transport=None,
        sleeper=time.sleep,
    ):
        self.base_url = base_url
        self._env = env if env is not None else os.environ
        self._sleep = sleeper
        self._transport = transport or self._http_post

    def _http_post(self, url: str, payload: dict, api_key: str) -> dict:
        import httpx

        response = httpx.post(
            url,
            json=payload,
            headers={"Authorization": f"Bearer {api_key}"},
            timeout=120.0,
        )
        response.raise_for_status()
        return response.json()

    def _api_key(self, role: str) -> str:
        var = f"ANVIL_API_KEY_{role.upper()}"
        key = self._env.get(var)
        if not key:
            raise RoleUnboundError(f"role {role!r} has no credential: set {var}")
        return key

    def complete(self, request: ProviderRequest) -> BackendResult:
        binding = request.binding
        api_key = self._api_key(binding.role)
        payload = {
            "model": binding.model_id,
            "temperature": binding.temperature,
            "max_tokens": binding.max_output,
            "messages": [{"role": "user", "content": request.prompt}],
            "response_format": {"type": "json_object"},
        }
        if request.attachments:
            payload["attachments"] = [
                {"filename": a.filename, "media_type": a.media_type, "sha256": a.content_digest}
                for a in request.attachments
            ]
        delay = 0.5
        last_error: Exception | None = None
        for attempt in range(TRANSPORT_ATTEMPTS):
            try:
                body = self._transport(self.base_url, payload, api_key)
                return BackendResult(
                    response=body["choices"][0]["message"]["content"],
                    transcript_id=f"live-{request.digest[:12]}-{attempt}",
                )
            except Exception as exc:  # transport and HTTP-status failures alike
                last_error = exc
                logger.warning(
                    "provider call failed (attempt %d/%d): %s", attempt + 1, TRANSPORT_ATTEMPTS, exc
                )
                if attempt < TRANSPORT_ATTEMPTS - 1:
                    self._sleep(delay)
                    delay *= 2
        raise TransportError(
            f"provider unreachable after {TRANSPORT_ATTEMPTS} attempts: {last_error}"
        ) from last_error


class ScriptedBackend:
    """Test backend answering from queued responses, per role or shared."""

    def __init__(self, by_role: Optional[dict[str, list[str]]] = None, shared: Optional[list[str]] = None):
        self._by_role = {role: deque(items) for role, items in (by_role or {}).items()}
        self._shared = deque(shared or [])
        self.requests: list[ProviderRequest] = []
        self._lock = threading.Lock()
        self._count = 0

    def push(self, role: str, response: str) -> None:
        self._by_role.setdefault(role, deque()).append(response)

    def complete(self, request: ProviderRequest) -> BackendResult:
        with self._lock:
            self.requests.append(request)
            queue = self._by_role.get(request.binding.role)
            if queue:
                response = queue.popleft()
            elif self._shared:
                response = self._shared.popleft()
            else:
                raise TransportError(
                    f"scripted backend has no response queued for role {request.binding.role!r}"
                )
            self._count += 1
            return BackendResult(response=response, transcript_id=f"scripted-{self._count:04d}")


class RecordingBackend:
    """Wrap another backend and persist every exchange as a transcript file."""

    def __init__(self, inner: Backend, directory):
        self.inner = inner
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()
        self._counters: dict[tuple[str, str], int] = {}
        for transcript in load_transcripts(self.directory):
            key = (transcript.role.role, transcript.request_digest)
            self._counters[key] = max(self._counters.get(key, 0), transcript.sequence + 1)

    def complete(self, request: ProviderRequest) -> BackendResult:
        result = self.inner.complete(request)
        digest = request.digest
        with self._lock:
            key = (request.binding.role, digest)
            sequence = self._counters.get(key, 0)
            self._counters[key] = sequence + 1
            transcript_id = f"{request.binding.role}-{digest[:12]}-{sequence:02d}"
            transcript = Transcript(
                transcript_id=transcript_id,
                role=request.binding,
                request_digest=digest,
                sequence=sequence,
                response=result.response,
                created_at=_utc_now(),
                request_text=request.prompt,
            )
            path = self.directory / f"{transcript_id}.json"
            path.write_text(serialize(transcript), encoding="utf-8")
        return BackendResult(response=result.response, transcript_id=transcript_id)


class ReplayBackend:
    """Answer only from stored transcripts; any unmatched request is a miss."""

    def __init__(self, *directories):
        self._fixtures: dict[tuple[str, str, int], Transcript] = {}
        self._consumed: dict[tuple[str, str], int] = {}
        self._lock = threading.Lock()
        for directory in directories:
            for transcript in load_transcripts(Path(directory)):
                key = (transcript.role.role, transcript.request_digest, transcript.sequence)
                self._fixtures[key] = transcript

    def complete(self, request: ProviderRequest) -> BackendResult:
        digest = request.digest
        role = request.binding.role
        with self._lock:
            sequence = self._consumed.get((role, digest), 0)
            transcript = self._fixtures.get((role, digest, sequence))
            if transcript is None:
                raise ReplayMissError(role=role, digest=digest, sequence=sequence)
            self._consumed[(role, digest)] = sequence + 1
        return BackendResult(response=transcript.response, transcript_id=transcript.transcript_id)


def load_transcripts(directory: Path) -> list[Transcript]:
    """All transcripts under a directory tree, sorted by id for stable order."""
    found = []
    if not directory.exists():
        return found
    for path in sorted(directory.rglob("*.json")):
        try:
            found.append(deserialize(path.read_text(encoding="utf-8"), Transcript))
        except (ParseError, SchemaValidationError) as exc:
            logger.warning("skipping unreadable transcript %s: %s", path, exc)
    return found


def _utc_now() -> str:
    from datetime import datetime, timezone

    return datetime.now(timezone.utc).isoformat()


_REASK_SUFFIX = (
    "\n\nYour previous reply was not valid against the required schema:\n"
    "{errors}\n"
    "Reply again with only a JSON object that conforms to the schema."
)


class Gateway:
    """Role-routed structured completion with schema re-asks.

    ``complete_structured`` returns a validated model instance; an invalid
    response triggers up to ``reask_limit`` corrective re-asks carrying the
    validation errors, after which the last raw output is surfaced in a typed
    failure.
    """

    def __init__(
        self,
        backend: Backend,
        roles: Optional[dict[str, ModelRole]] = None,
        reask_limit: int = REASK_LIMIT,
        rate_limiters: Optional[dict[str, TokenBucket]] = None,
    ):
        self.backend = backend
        self.roles = dict(roles) if roles is not None else ModelRole.defaults()
        self.reask_limit = reask_limit
        self.rate_limiters = rate_limiters or {}
        self.call_counts: dict[str, int] = {}
        self._lock = threading.Lock()

    def binding(self, role: str) -> ModelRole:
        try:
            return self.roles[role]
        except KeyError:
            raise RoleUnboundError(f"role {role!r} is not bound in configuration") from None

    def _call(self, request: ProviderRequest) -> BackendResult:
        role = request.binding.role
        limiter = self.rate_limiters.get(role)
        if limiter is not None:
            limiter.acquire()
        with self._lock:
            self.call_counts[role] = self.call_counts.get(role, 0) + 1
        return self.backend.complete(request)

    def complete_structured(
        self,
        role: str,
        prompt: str,
        expected: Type[M],
        attachments: tuple[Attachment, ...] = (),
    ) -> tuple[M, str]:
        binding = self.binding(role)
        schema_text = canonical_json(json_schema_for(expected))
        current_prompt = canonicalize_prompt(prompt)
        last_raw = ""
        for _ in range(self.reask_limit + 1):
            request = ProviderRequest(
                binding=binding,
                prompt=current_prompt,
                schema_text=schema_text,
                attachments=attachments,
            )
            result = self._call(request)
            last_raw = result.response
            try:
                value = self._parse(expected, result.response)
                return value, result.transcript_id
            except (ParseError, SchemaValidationError) as exc:
                errors = self._describe(exc)
                logger.info("role %s returned invalid %s: %s", role, expected.__name__, errors)
                current_prompt = canonicalize_prompt(
                    current_prompt + _REASK_SUFFIX.format(errors=errors)
                )
        raise SchemaInvalidAfterRetries(
            f"role {role!r} produced no valid {expected.__name__} "
            f"after {self.reask_limit} re-asks",
            last_raw=last_raw,
        )

    def describe_media(
        self, role: str, video_path, prompt: str, expected: Type[M]
    ) -> tuple[M, str]:
        path = Path(video_path)
        try:
            digest = hash_file(path)
        except OSError as exc:
            raise UnreadableMediaError(f"cannot read media file {path}: {exc}") from exc
        attachment = Attachment(
            filename=path.name, media_type="video/mp4", content_digest=digest
        )
        return self.complete_structured(role, prompt, expected, attachments=(attachment,))

    @staticmethod
    def _parse(expected: Type[M], response: str) -> M:
        text = strip_json_fences(response)
        try:
            payload = parse_json(text)
        except ParseError:
            start, end = text.find("{"), text.rfind("}")
            if start == -1 or end <= start:
                raise
            payload = parse_json(text[start : end + 1])
        return build_model(expected, payload)

    @staticmethod
    def _describe(exc: Exception) -> str:
        if isinstance(exc, SchemaValidationError) and exc.field_paths:
            return "\n".join(f"- {p}" for p in exc.field_paths)
        return f"- {exc}"
