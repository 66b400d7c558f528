"""Adapters to the external tool row: static analyzer, executor, renderer.

Live adapters shell out (pylint, the interpreter in dry-run mode, the manim
renderer) inside per-invocation temp workdirs with timeouts and a global
subprocess cap. The fake toolchain is first-class: a JSON scenario file
scripts per-call results so loop behavior is reproducible with nothing
installed. All output parsers are total: malformed tool output degrades to
diagnostics, never raises.
"""

from __future__ import annotations

import hashlib
import json
import logging
import re
import shutil
import subprocess
import tempfile
import threading
from pathlib import Path
from typing import Optional, Protocol, Sequence

from pydantic import BaseModel, ConfigDict, Field

from .errors import PreconditionError, RenderError, ToolchainUnavailable
from .model import Diagnostic, VideoMeta

logger = logging.getLogger(__name__)

#: pylint message categories to our severities.
SEVERITY_BY_CATEGORY = {
    "fatal": "error",
    "error": "error",
    "warning": "warning",
    "convention": "warning",
    "refactor": "warning",
    "information": "warning",
}

_TEXT_DIAG_RE = re.compile(
    r"^(?P<id>[FEWCRI]\d{4}):\s*(?P<message>.*?)\s*\((?P<line>\d+),(?P<column>\d+)\)\s*$"
)

EXCERPT_LIMIT = 2000


class ToolchainConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    analyzer_cmd: tuple[str, ...] = ("pylint",)
    executor_cmd: tuple[str, ...] = ("python3",)
    renderer_cmd: tuple[str, ...] = ("manim",)
    env: dict[str, str] = Field(default_factory=dict)
    analyze_timeout_s: float = 60.0
    execute_timeout_s: float = 60.0
    render_timeout_s: float = 600.0
    max_parallel: int = 2


class Toolchain(Protocol):
    def analyze(self, script_text: str) -> list[Diagnostic]: ...

    def execute(self, script_text: str) -> list[Diagnostic]: ...

    def render_video(self, script_text: str, output_path: Path) -> VideoMeta: ...


def _clip(text: str) -> str:
    return text[-EXCERPT_LIMIT:] if len(text) > EXCERPT_LIMIT else text


def parse_analyzer_output(stdout: str, tool: str = "pylint") -> list[Diagnostic]:
    """Parse analyzer output, JSON mode preferred, text lines as fallback.

    Total: anything unrecognized yields no diagnostics rather than an error.
    """
    text = stdout.strip()
    if not text:
        return []
    try:
        records = json.loads(text)
    except json.JSONDecodeError:
        records = None
    diagnostics: list[Diagnostic] = []
    if isinstance(records, list):
        for record in records:
            if not isinstance(record, dict):
                continue
            category = str(record.get("type", "warning"))
            message = str(record.get("message", "")) or str(record.get("symbol", "finding"))
            line = record.get("line")
            column = record.get("column")
            diagnostics.append(
                Diagnostic(
                    phase="static",
                    severity=SEVERITY_BY_CATEGORY.get(category, "warning"),
                    message=message,
                    line=int(line) if isinstance(line, int) else None,
                    column=int(column) if isinstance(column, int) else None,
                    tool=tool,
                )
            )
        return diagnostics
    for line_text in text.splitlines():
        match = _TEXT_DIAG_RE.match(line_text.strip())
        if not match:
            continue
        category_letter = match.group("id")[0]
        severity = "error" if category_letter in ("F", "E") else "warning"
        diagnostics.append(
            Diagnostic(
                phase="static",
                severity=severity,
                message=f"{match.group('id')}: {match.group('message')}",
                line=int(match.group("line")),
                column=int(match.group("column")),
                tool=tool,
            )
        )
    return diagnostics


class LiveToolchain:
    """Subprocess adapters with per-invocation temp workdirs."""

    def __init__(self, config: Optional[ToolchainConfig] = None):
        self.config = config or ToolchainConfig()
        self._gate = threading.Semaphore(self.config.max_parallel)
        for cmd in (
            self.config.analyzer_cmd,
            self.config.executor_cmd,
            self.config.renderer_cmd,
        ):
            if shutil.which(cmd[0]) is None:
                raise ToolchainUnavailable(f"command not found on PATH: {cmd[0]}")

    def _run(
        self, argv: Sequence[str], timeout: float, cwd: Path
    ) -> subprocess.CompletedProcess:
        with self._gate:
            return subprocess.run(
                list(argv),
                capture_output=True,
                text=True,
                timeout=timeout,
                cwd=str(cwd),
                env={**_base_env(), **self.config.env},
            )

    def analyze(self, script_text: str) -> list[Diagnostic]:
        with tempfile.TemporaryDirectory(prefix="anvil-analyze-") as workdir:
            script = Path(workdir) / "script.py"
            script.write_text(script_text, encoding="utf-8")
            argv = [*self.config.analyzer_cmd, "--output-format=json", str(script)]
            try:
                proc = self._run(argv, self.config.analyze_timeout_s, Path(workdir))
            except subprocess.TimeoutExpired:
                return [
                    Diagnostic(
                        phase="static",
                        severity="error",
                        message=f"analyzer timed out after {self.config.analyze_timeout_s}s",
                        tool=self.config.analyzer_cmd[0],
                    )
                ]
            except OSError as exc:
                raise ToolchainUnavailable(f"analyzer failed to start: {exc}") from exc
            return parse_analyzer_output(proc.stdout, tool=self.config.analyzer_cmd[0])

    def execute(self, script_text: str) -> list[Diagnostic]:
        tool = self.config.executor_cmd[0]
        with tempfile.TemporaryDirectory(prefix="anvil-exec-") as workdir:
            script = Path(workdir) / "script.py"
            script.write_text(script_text, encoding="utf-8")
            argv = [*self.config.executor_cmd, str(script)]
            try:
                proc = self._run(argv, self.config.execute_timeout_s, Path(workdir))
            except subprocess.TimeoutExpired as exc:
                output = (exc.output or b"") if isinstance(exc.output, bytes) else (exc.output or "")
                return [
                    Diagnostic(
                        phase="runtime",
                        severity="error",
                        message=f"execution timed out after {self.config.execute_timeout_s}s",
                        tool=tool,
                        excerpt=_clip(str(output)) or "(no output before timeout)",
                    )
                ]
            except OSError as exc:
                raise ToolchainUnavailable(f"executor failed to start: {exc}") from exc
        if proc.returncode == 0:
            return []
        return [
            Diagnostic(
                phase="runtime",
                severity="error",
                message=f"script exited with code {proc.returncode}",
                tool=tool,
                excerpt=_clip(proc.stderr or proc.stdout) or f"exit code {proc.returncode}",
            )
        ]

    def render_video(self, script_text: str, output_path: Path) -> VideoMeta:
        tool = self.config.renderer_cmd[0]
        output_path = Path(output_path)
        output_path.parent.mkdir(parents=True, exist_ok=True)
        with tempfile.TemporaryDirectory(prefix="anvil-render-") as workdir:
            script = Path(workdir) / "script.py"
            script.write_text(script_text, encoding="utf-8")
            argv = [
                *self.config.renderer_cmd,
                "render",
                "-ql",
                "--output_file",
                "lesson.mp4",
                str(script),
                "Lesson",
            ]
            try:
                proc = self._run(argv, self.config.render_timeout_s, Path(workdir))
            except subprocess.TimeoutExpired:
                raise RenderError(
                    f"renderer timed out after {self.config.render_timeout_s}s",
                    excerpt="(timeout)",
                )
            except OSError as exc:
                raise ToolchainUnavailable(f"renderer failed to start: {exc}") from exc
            if proc.returncode != 0:
                raise RenderError(
                    f"renderer exited with code {proc.returncode}",
                    excerpt=_clip(proc.stderr or proc.stdout),
                )
            produced = sorted(Path(workdir).rglob("lesson.mp4"))
            if not produced:
                raise RenderError("renderer produced no video file", excerpt=_clip(proc.stdout))
            shutil.copyfile(produced[0], output_path)
        return _probe_video(output_path)


def _base_env() -> dict[str, str]:
    import os

    return {k: v for k, v in os.environ.items() if k in ("PATH", "HOME", "LANG", "TMPDIR")}


def _probe_video(path: Path) -> VideoMeta:
    """Best-effort metadata; real probing would need the renderer's stack."""
    size = path.stat().st_size
    return VideoMeta(
        path=path.name,
        duration_s=0.0,
        width=854,
        height=480,
        frame_count=max(0, size // 1024),
    )


class FakeToolchain:
    """Scriptable toolchain driven by a scenario.

    Scenario shape (all keys optional):
      {"analyze": [[diagnostic, ...], ...],   per-call static results
       "execute": [[diagnostic, ...], ...],   per-call runtime results
       "render":  [{"ok": true, "duration_s": 10.0, ...} | {"ok": false, "excerpt": "..."}]}
    Each call consumes the next list entry; an exhausted list means a clean
    result, so a scenario only describes the failures it cares about.
    Diagnostics may be given as dicts or as shorthand strings "E: message" /
    "W: message".
    """

    def __init__(self, scenario: Optional[dict] = None):
        scenario = scenario or {}
        self._analyze = list(scenario.get("analyze", []))
        self._execute = list(scenario.get("execute", []))
        self._render = list(scenario.get("render", []))
        self._lock = threading.Lock()
        self.calls: list[str] = []

    @classmethod
    def from_file(cls, path) -> "FakeToolchain":
        try:
            payload = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ToolchainUnavailable(f"cannot load toolchain scenario {path}: {exc}") from exc
        return cls(payload)

    def _next(self, queue: list):
        with self._lock:
            return queue.pop(0) if queue else None

    @staticmethod
    def _coerce_diagnostic(entry, phase: str) -> Diagnostic:
        if isinstance(entry, Diagnostic):
            return entry
        if isinstance(entry, str):
            severity = "warning" if entry.startswith("W") else "error"
            message = entry.split(":", 1)[1].strip() if ":" in entry else entry
            excerpt = f"scripted: {message}" if phase == "runtime" else ""
            return Diagnostic(
                phase=phase, severity=severity, message=message, tool="fake", excerpt=excerpt
            )
        data = dict(entry)
        data.setdefault("phase", phase)
        data.setdefault("tool", "fake")
        if data["phase"] == "runtime" and not data.get("excerpt"):
            data["excerpt"] = f"scripted: {data.get('message', 'failure')}"
        return Diagnostic(**data)

    def analyze(self, script_text: str) -> list[Diagnostic]:
        self.calls.append("analyze")
        entry = self._next(self._analyze)
        if not entry:
            return []
        return [self._coerce_diagnostic(d, "static") for d in entry]

    def execute(self, script_text: str) -> list[Diagnostic]:
        self.calls.append("execute")
        entry = self._next(self._execute)
        if not entry:
            return []
        return [self._coerce_diagnostic(d, "runtime") for d in entry]

    def render_video(self, script_text: str, output_path: Path) -> VideoMeta:
        self.calls.append("render")
        entry = self._next(self._render) or {"ok": True}
        if not entry.get("ok", True):
            raise RenderError(
                "renderer exited with code 1", excerpt=str(entry.get("excerpt", "scripted failure"))
            )
        output_path = Path(output_path)
        output_path.parent.mkdir(parents=True, exist_ok=True)
        digest = hashlib.sha256(script_text.encode("utf-8")).hexdigest()
        output_path.write_bytes(b"ANVIL-FAKE-VIDEO\n" + digest.encode("ascii") + b"\n")
        return VideoMeta(
            path=output_path.name,
            duration_s=float(entry.get("duration_s", 12.0)),
            width=int(entry.get("width", 854)),
            height=int(entry.get("height", 480)),
            frame_count=int(entry.get("frame_count", 288)),
        )


def build_toolchain(mode: str, scenario_file=None, config: Optional[ToolchainConfig] = None):
    """Toolchain per config: 'live' or 'fake' (optionally with a scenario file)."""
    if mode == "live":
        return LiveToolchain(config)
    if mode == "fake":
        if scenario_file:
            return FakeToolchain.from_file(scenario_file)
        return FakeToolchain()
    raise PreconditionError(f"unknown toolchain mode {mode!r}")
