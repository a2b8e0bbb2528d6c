"""Declarative TOML configuration for the command-line surface.

Secrets never live in the file: backend sections name an environment variable
and the key is read per call, so a config with an unset variable loads fine
and only fails when a live request is attempted.  A backend section with
``kind = "scripted"`` plus a JSON script file swaps in the deterministic mock,
which lets every command run network-free.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .clients import Backend, BackendConfig, HttpBackend, ScriptedBackend
from .pipeline import Ablation, PipelineConfig


class ConfigError(Exception):
    pass


@dataclass(frozen=True)
class BackendSpec:
    kind: str
    config: BackendConfig
    script_path: Path | None = None

    def build(self) -> Backend:
        if self.kind == "scripted":
            assert self.script_path is not None
            return ScriptedBackend.from_file(self.script_path, self.config)
        return HttpBackend(self.config)


@dataclass(frozen=True)
class EvalSettings:
    k: int = 5
    base_seed: int = 2025
    parallelism: int = 4


@dataclass(frozen=True)
class AppConfig:
    slm: BackendSpec
    embed: BackendSpec
    target: BackendSpec | None
    rewriter: BackendSpec | None
    slm_second: BackendSpec | None
    delta: float
    temperature: float
    max_points: int
    ablation: Ablation
    base_seed: int
    eval: EvalSettings

    def pipeline_config(self) -> PipelineConfig:
        return PipelineConfig(
            slm_backend=self.slm.build(),
            embed_backend=self.embed.build(),
            slm_backend_second=self.slm_second.build() if self.slm_second else None,
            delta=self.delta,
            temperature=self.temperature,
            max_points=self.max_points,
            ablation=self.ablation,
            base_seed=self.base_seed,
        )

    def require_target(self) -> BackendSpec:
        if self.target is None:
            raise ConfigError("this command needs a [target] backend section")
        return self.target

    def require_rewriter(self) -> BackendSpec:
        if self.rewriter is None:
            raise ConfigError("this command needs a [rewriter] backend section")
        return self.rewriter


def _backend_spec(name: str, section: dict, config_dir: Path) -> BackendSpec:
    kind = section.get("kind", "openai")
    if kind not in ("openai", "scripted"):
        raise ConfigError(f"[{name}] kind must be 'openai' or 'scripted', not {kind!r}")
    try:
        backend_config = BackendConfig(
            base_url=section.get("base_url", "scripted:" if kind == "scripted" else ""),
            model=section["model"],
            api_key_env_var=section.get("api_key_env", ""),
            price_in_per_1k=float(section.get("price_in_per_1k", 0.0)),
            price_out_per_1k=float(section.get("price_out_per_1k", 0.0)),
            timeout_s=float(section.get("timeout_s", 60.0)),
            max_retries=int(section.get("max_retries", 2)),
        )
    except KeyError as exc:
        raise ConfigError(f"[{name}] is missing required key {exc}") from exc
    except ValueError as exc:
        raise ConfigError(f"[{name}]: {exc}") from exc
    if kind == "openai" and not backend_config.base_url:
        raise ConfigError(f"[{name}] needs a base_url")
    script_path: Path | None = None
    if kind == "scripted":
        if "script" not in section:
            raise ConfigError(f"[{name}] with kind='scripted' needs a script file path")
        script_path = (config_dir / section["script"]).resolve()
    return BackendSpec(kind=kind, config=backend_config, script_path=script_path)


def load_config(path: str | Path) -> AppConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    data = tomllib.loads(path.read_text(encoding="utf-8"))
    config_dir = path.parent

    def optional(name: str) -> BackendSpec | None:
        return _backend_spec(name, data[name], config_dir) if name in data else None

    for required in ("slm", "embed"):
        if required not in data:
            raise ConfigError(f"config needs a [{required}] section")

    pipeline_section = data.get("pipeline", {})
    try:
        ablation = Ablation(pipeline_section.get("ablation", "full"))
    except ValueError as exc:
        valid = ", ".join(a.value for a in Ablation)
        raise ConfigError(f"[pipeline] ablation must be one of: {valid}") from exc
    eval_section = data.get("eval", {})
    return AppConfig(
        slm=_backend_spec("slm", data["slm"], config_dir),
        embed=_backend_spec("embed", data["embed"], config_dir),
        target=optional("target"),
        rewriter=optional("rewriter"),
        slm_second=optional("slm_second"),
        delta=float(pipeline_section.get("delta", 0.8)),
        temperature=float(pipeline_section.get("temperature", 0.2)),
        max_points=int(pipeline_section.get("max_points", 4)),
        ablation=ablation,
        base_seed=int(pipeline_section.get("base_seed", 2025)),
        eval=EvalSettings(
            k=int(eval_section.get("k", 5)),
            base_seed=int(eval_section.get("base_seed", 2025)),
            parallelism=int(eval_section.get("parallelism", 4)),
        ),
    )
