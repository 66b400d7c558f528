"""TOML configuration: provider bindings, toolchain, asset dir, run store.

Every field has a working default, so a missing config file means a fully
offline setup: replay provider, fake toolchain, run store under ./runstore.
"""

from __future__ import annotations

import os
from pathlib import Path
from typing import Literal, Optional

import tomli
from pydantic import BaseModel, ConfigDict, Field

from .errors import ConfigError
from .gateway import (
    Gateway,
    LiveBackend,
    ModelRole,
    RecordingBackend,
    ReplayBackend,
    ScriptedBackend,
)
from .model import RepairPolicy
from .toolchain import ToolchainConfig, build_toolchain

ENV_CONFIG = "ANVIL_CONFIG"
ENV_RUNSTORE = "ANVIL_RUNSTORE"

DEFAULT_BASE_URL = "https://api.provider.invalid/v1/chat/completions"


class ProviderConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    mode: Literal["live", "record", "replay"] = "replay"
    transcripts: Optional[str] = None
    base_url: str = DEFAULT_BASE_URL
    reask_limit: int = Field(default=2, ge=0)


class ServiceConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    host: str = "127.0.0.1"
    port: int = Field(default=8321, gt=0, lt=65536)


class AnvilConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    runstore_root: str = "runstore"
    provider: ProviderConfig = ProviderConfig()
    roles: dict[str, ModelRole] = Field(default_factory=ModelRole.defaults)
    toolchain_mode: Literal["live", "fake"] = "fake"
    toolchain_scenario: Optional[str] = None
    toolchain: ToolchainConfig = ToolchainConfig()
    assets_dir: Optional[str] = None
    max_scenes: int = Field(default=8, ge=1)
    repair: RepairPolicy = RepairPolicy()
    service: ServiceConfig = ServiceConfig()


_KNOWN_SECTIONS = {
    "runstore",
    "provider",
    "toolchain",
    "assets",
    "screenplay",
    "repair",
    "service",
}


def _take(section: dict, allowed: set[str], where: str) -> dict:
    unknown = set(section) - allowed
    if unknown:
        raise ConfigError(f"unknown key(s) in [{where}]: {', '.join(sorted(unknown))}")
    return section


def _build(model_cls, kwargs: dict, where: str):
    try:
        return model_cls(**kwargs)
    except ValueError as exc:
        raise ConfigError(f"invalid [{where}] configuration: {exc}") from exc


def _parse(raw: dict, env: dict) -> AnvilConfig:
    unknown = set(raw) - _KNOWN_SECTIONS
    if unknown:
        raise ConfigError(f"unknown section(s): {', '.join(sorted(unknown))}")
    fields: dict = {}

    runstore = _take(dict(raw.get("runstore", {})), {"root"}, "runstore")
    if "root" in runstore:
        fields["runstore_root"] = runstore["root"]
    if env.get(ENV_RUNSTORE):
        fields["runstore_root"] = env[ENV_RUNSTORE]

    provider = dict(raw.get("provider", {}))
    role_table = provider.pop("roles", {})
    _take(provider, {"mode", "transcripts", "base_url", "reask_limit"}, "provider")
    if provider:
        fields["provider"] = _build(ProviderConfig, provider, "provider")
    if role_table:
        roles = ModelRole.defaults()
        for name, entry in role_table.items():
            if name not in roles:
                raise ConfigError(f"unknown provider role {name!r}")
            _take(
                dict(entry),
                {"model_id", "temperature", "max_output"},
                f"provider.roles.{name}",
            )
            merged = {**roles[name].model_dump(), **dict(entry)}
            roles[name] = _build(ModelRole, merged, f"provider.roles.{name}")
        fields["roles"] = roles

    toolchain = dict(raw.get("toolchain", {}))
    if "mode" in toolchain:
        fields["toolchain_mode"] = toolchain.pop("mode")
    if "scenario" in toolchain:
        fields["toolchain_scenario"] = toolchain.pop("scenario")
    _take(
        toolchain,
        {
            "analyzer_cmd",
            "executor_cmd",
            "renderer_cmd",
            "env",
            "analyze_timeout_s",
            "execute_timeout_s",
            "render_timeout_s",
            "max_parallel",
        },
        "toolchain",
    )
    if toolchain:
        for key in ("analyzer_cmd", "executor_cmd", "renderer_cmd"):
            if key in toolchain:
                toolchain[key] = tuple(toolchain[key])
        fields["toolchain"] = _build(ToolchainConfig, toolchain, "toolchain")

    assets = _take(dict(raw.get("assets", {})), {"dir"}, "assets")
    if "dir" in assets:
        fields["assets_dir"] = assets["dir"]

    screenplay = _take(dict(raw.get("screenplay", {})), {"max_scenes"}, "screenplay")
    if "max_scenes" in screenplay:
        fields["max_scenes"] = screenplay["max_scenes"]

    repair = _take(
        dict(raw.get("repair", {})),
        {"max_iterations", "runtime_timeout_s", "treat_warnings_as_errors"},
        "repair",
    )
    if repair:
        fields["repair"] = _build(RepairPolicy, repair, "repair")

    service = _take(dict(raw.get("service", {})), {"host", "port"}, "service")
    if service:
        fields["service"] = _build(ServiceConfig, service, "service")

    try:
        return AnvilConfig(**fields)
    except ValueError as exc:
        raise ConfigError(f"invalid configuration: {exc}") from exc


def load_config(path=None, env: Optional[dict] = None) -> AnvilConfig:
    """Load anvil.toml; a missing file yields pure defaults.

    Lookup order when ``path`` is not given: $ANVIL_CONFIG, then ./anvil.toml.
    $ANVIL_RUNSTORE overrides the run store root either way.
    """
    env = dict(os.environ) if env is None else env
    if path is None:
        candidate = env.get(ENV_CONFIG) or "anvil.toml"
        path = Path(candidate)
        if not path.is_file() and not env.get(ENV_CONFIG):
            return _parse({}, env)
    path = Path(path)
    try:
        with open(path, "rb") as handle:
            raw = tomli.load(handle)
    except FileNotFoundError:
        raise ConfigError(f"config file {path} does not exist") from None
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid TOML: {exc}") from exc
    return _parse(raw, env)


def build_gateway(
    config: AnvilConfig,
    transcript_dir=None,
    mode: Optional[str] = None,
    scripted_responses=None,
) -> Gateway:
    """Assemble the provider gateway for the configured (or overridden) mode.

    ``transcript_dir`` is the per-run transcript directory: recording writes
    there, replay reads it alongside the configured shared fixture directory.
    ``scripted_responses`` switches to an in-memory scripted backend, used by
    tests and the deterministic demo path.
    """
    effective = mode or config.provider.mode
    if scripted_responses is not None:
        backend = ScriptedBackend(**scripted_responses)
    elif effective == "live":
        backend = LiveBackend(base_url=config.provider.base_url)
    elif effective == "record":
        if transcript_dir is None:
            transcript_dir = config.provider.transcripts
        if transcript_dir is None:
            raise ConfigError("recording mode needs a transcript directory")
        backend = RecordingBackend(
            LiveBackend(base_url=config.provider.base_url), transcript_dir
        )
    elif effective == "replay":
        directories = []
        if config.provider.transcripts:
            directories.append(Path(config.provider.transcripts))
        if transcript_dir is not None and Path(transcript_dir).is_dir():
            directories.append(Path(transcript_dir))
        if not directories:
            raise ConfigError(
                "replay mode needs provider.transcripts or a per-run transcript directory"
            )
        backend = ReplayBackend(*directories)
    else:
        raise ConfigError(f"unknown provider mode {effective!r}")
    return Gateway(
        backend, roles=config.roles, reask_limit=config.provider.reask_limit
    )


def build_configured_toolchain(config: AnvilConfig, mode: Optional[str] = None):
    effective = mode or config.toolchain_mode
    return build_toolchain(
        effective, scenario_file=config.toolchain_scenario, config=config.toolchain
    )
