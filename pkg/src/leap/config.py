"""Configuration file loading and validation.

One JSON file with six sections: backend, decoding, learning, correction,
tools, and paths. Every key has a documented default, unknown keys are
rejected, and numeric ranges are checked at load time. The effective config
(defaults filled in) round-trips: dumping and reloading it is the identity.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any

from .core import canonical_json
from .errors import ConfigError, SchemaError
from .loops import LearningConfig

__all__ = [
    "BackendConfig",
    "DecodingConfig",
    "CorrectionConfig",
    "ToolsConfig",
    "PathsConfig",
    "Config",
    "default_config",
    "load_config",
    "effective_dict",
    "dump_config",
    "config_hash",
]


@dataclass(frozen=True)
class BackendConfig:
    base_url: str = "http://localhost:8000/v1"
    model: str = "local-chat"
    api_key_env: str = "LEAP_API_KEY"
    embed_model: str = "local-embed"
    embed_dim: int = 64


@dataclass(frozen=True)
class DecodingConfig:
    # Teacher-side generation samples at full temperature for diversity;
    # evaluation decodes greedily for reproducibility.
    temperature_learn: float = 1.0
    top_p_learn: float = 1.0
    temperature_eval: float = 0.0
    max_tokens: int = 1024


@dataclass(frozen=True)
class CorrectionConfig:
    theta_corr: float = 0.0


@dataclass(frozen=True)
class ToolsConfig:
    search_provider: dict | None = None
    search_k: int = 3
    match_threshold: float = 0.80
    match_mode: str = "embedding"
    code_executor: tuple[str, ...] = ("python3", "-c")
    code_timeout_ms: int = 5000
    code_parallelism: int = 1


@dataclass(frozen=True)
class PathsConfig:
    prompts_dir: str | None = None
    memory_dir: str = "memory"
    out_dir: str = "out"


@dataclass(frozen=True)
class Config:
    backend: BackendConfig
    decoding: DecodingConfig
    learning: LearningConfig
    correction: CorrectionConfig
    tools: ToolsConfig
    paths: PathsConfig


def default_config() -> Config:
    return Config(
        backend=BackendConfig(),
        decoding=DecodingConfig(),
        learning=LearningConfig(),
        correction=CorrectionConfig(),
        tools=ToolsConfig(),
        paths=PathsConfig(),
    )


_SECTIONS = ("backend", "decoding", "learning", "correction", "tools", "paths")


def load_config(path: str | Path) -> Config:
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc.msg}") from exc
    return config_from_dict(raw)


def config_from_dict(raw: Any) -> Config:
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    unknown = set(raw) - set(_SECTIONS)
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    try:
        return Config(
            backend=_backend(_section(raw, "backend")),
            decoding=_decoding(_section(raw, "decoding")),
            learning=_learning(_section(raw, "learning")),
            correction=_correction(_section(raw, "correction")),
            tools=_tools(_section(raw, "tools")),
            paths=_paths(_section(raw, "paths")),
        )
    except SchemaError as exc:
        raise ConfigError(str(exc)) from exc


def _section(raw: dict, name: str) -> dict:
    value = raw.get(name, {})
    if not isinstance(value, dict):
        raise ConfigError(f"config section {name!r} must be an object")
    return value


def _check_section_keys(obj: dict, name: str, allowed: set[str]) -> None:
    unknown = set(obj) - allowed
    if unknown:
        raise ConfigError(f"unknown keys in {name}: {sorted(unknown)}")


def _str(obj: dict, name: str, key: str, default: str) -> str:
    value = obj.get(key, default)
    if not isinstance(value, str):
        raise ConfigError(f"{name}.{key} must be a string")
    return value


def _int(obj: dict, name: str, key: str, default: int, minimum: int | None = None) -> int:
    value = obj.get(key, default)
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"{name}.{key} must be an integer")
    if minimum is not None and value < minimum:
        raise ConfigError(f"{name}.{key} must be >= {minimum}")
    return value


def _float(
    obj: dict,
    name: str,
    key: str,
    default: float,
    low: float | None = None,
    high: float | None = None,
) -> float:
    value = obj.get(key, default)
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{name}.{key} must be a number")
    value = float(value)
    if low is not None and value < low:
        raise ConfigError(f"{name}.{key} must be >= {low}")
    if high is not None and value > high:
        raise ConfigError(f"{name}.{key} must be <= {high}")
    return value


def _backend(obj: dict) -> BackendConfig:
    _check_section_keys(obj, "backend", {"base_url", "model", "api_key_env", "embed_model", "embed_dim"})
    d = BackendConfig()
    return BackendConfig(
        base_url=_str(obj, "backend", "base_url", d.base_url),
        model=_str(obj, "backend", "model", d.model),
        api_key_env=_str(obj, "backend", "api_key_env", d.api_key_env),
        embed_model=_str(obj, "backend", "embed_model", d.embed_model),
        embed_dim=_int(obj, "backend", "embed_dim", d.embed_dim, minimum=1),
    )


def _decoding(obj: dict) -> DecodingConfig:
    _check_section_keys(
        obj, "decoding", {"temperature_learn", "top_p_learn", "temperature_eval", "max_tokens"}
    )
    d = DecodingConfig()
    top_p = _float(obj, "decoding", "top_p_learn", d.top_p_learn, high=1.0)
    if top_p <= 0.0:
        raise ConfigError("decoding.top_p_learn must be in (0, 1]")
    return DecodingConfig(
        temperature_learn=_float(obj, "decoding", "temperature_learn", d.temperature_learn, 0.0, 2.0),
        top_p_learn=top_p,
        temperature_eval=_float(obj, "decoding", "temperature_eval", d.temperature_eval, 0.0, 2.0),
        max_tokens=_int(obj, "decoding", "max_tokens", d.max_tokens, minimum=1),
    )


def _learning(obj: dict) -> LearningConfig:
    allowed = {
        "gamma",
        "lambda",
        "k_reflections",
        "k_precedents_pos",
        "k_precedents_neg",
        "max_steps",
        "memory_cap",
        "seed",
        "concurrency",
    }
    _check_section_keys(obj, "learning", allowed)
    d = LearningConfig()
    cap = obj.get("memory_cap", d.memory_cap)
    if cap is not None and (isinstance(cap, bool) or not isinstance(cap, int) or cap < 1):
        raise ConfigError("learning.memory_cap must be a positive integer or null")
    return LearningConfig(
        gamma=_float(obj, "learning", "gamma", d.gamma, 0.0, 1.0),
        lam=_float(obj, "learning", "lambda", d.lam, low=0.0),
        k_reflections=_int(obj, "learning", "k_reflections", d.k_reflections, minimum=1),
        k_precedents_pos=_int(obj, "learning", "k_precedents_pos", d.k_precedents_pos, minimum=1),
        k_precedents_neg=_int(obj, "learning", "k_precedents_neg", d.k_precedents_neg, minimum=1),
        max_steps=_int(obj, "learning", "max_steps", d.max_steps, minimum=1),
        memory_cap=cap,
        seed=_int(obj, "learning", "seed", d.seed),
        concurrency=_int(obj, "learning", "concurrency", d.concurrency, minimum=1),
    )


def _correction(obj: dict) -> CorrectionConfig:
    _check_section_keys(obj, "correction", {"theta_corr"})
    return CorrectionConfig(theta_corr=_float(obj, "correction", "theta_corr", 0.0))


def _tools(obj: dict) -> ToolsConfig:
    allowed = {
        "search_provider",
        "search_k",
        "match_threshold",
        "match_mode",
        "code_executor",
        "code_timeout_ms",
        "code_parallelism",
    }
    _check_section_keys(obj, "tools", allowed)
    d = ToolsConfig()
    provider = obj.get("search_provider", d.search_provider)
    if provider is not None:
        if not isinstance(provider, dict) or provider.get("kind") not in ("fixture", "http"):
            raise ConfigError('tools.search_provider needs "kind": "fixture" or "http"')
        if provider["kind"] == "fixture" and not isinstance(provider.get("path"), str):
            raise ConfigError("tools.search_provider (fixture) needs a string path")
        if provider["kind"] == "http" and not isinstance(provider.get("url"), str):
            raise ConfigError("tools.search_provider (http) needs a string url")
    executor = obj.get("code_executor", list(d.code_executor))
    if not isinstance(executor, (list, tuple)) or not all(isinstance(e, str) for e in executor):
        raise ConfigError("tools.code_executor must be a list of strings")
    mode = _str(obj, "tools", "match_mode", d.match_mode)
    if mode not in ("embedding", "llm"):
        raise ConfigError('tools.match_mode must be "embedding" or "llm"')
    return ToolsConfig(
        search_provider=provider,
        search_k=_int(obj, "tools", "search_k", d.search_k, minimum=1),
        match_threshold=_float(obj, "tools", "match_threshold", d.match_threshold, -1.0, 1.0),
        match_mode=mode,
        code_executor=tuple(executor),
        code_timeout_ms=_int(obj, "tools", "code_timeout_ms", d.code_timeout_ms, minimum=1),
        code_parallelism=_int(obj, "tools", "code_parallelism", d.code_parallelism, minimum=1),
    )


def _paths(obj: dict) -> PathsConfig:
    _check_section_keys(obj, "paths", {"prompts_dir", "memory_dir", "out_dir"})
    d = PathsConfig()
    prompts_dir = obj.get("prompts_dir", d.prompts_dir)
    if prompts_dir is not None and not isinstance(prompts_dir, str):
        raise ConfigError("paths.prompts_dir must be a string or null")
    return PathsConfig(
        prompts_dir=prompts_dir,
        memory_dir=_str(obj, "paths", "memory_dir", d.memory_dir),
        out_dir=_str(obj, "paths", "out_dir", d.out_dir),
    )


def effective_dict(config: Config) -> dict[str, Any]:
    """The full configuration with every default filled in."""
    return {
        "backend": {
            "base_url": config.backend.base_url,
            "model": config.backend.model,
            "api_key_env": config.backend.api_key_env,
            "embed_model": config.backend.embed_model,
            "embed_dim": config.backend.embed_dim,
        },
        "decoding": {
            "temperature_learn": config.decoding.temperature_learn,
            "top_p_learn": config.decoding.top_p_learn,
            "temperature_eval": config.decoding.temperature_eval,
            "max_tokens": config.decoding.max_tokens,
        },
        "learning": {
            "gamma": config.learning.gamma,
            "lambda": config.learning.lam,
            "k_reflections": config.learning.k_reflections,
            "k_precedents_pos": config.learning.k_precedents_pos,
            "k_precedents_neg": config.learning.k_precedents_neg,
            "max_steps": config.learning.max_steps,
            "memory_cap": config.learning.memory_cap,
            "seed": config.learning.seed,
            "concurrency": config.learning.concurrency,
        },
        "correction": {"theta_corr": config.correction.theta_corr},
        "tools": {
            "search_provider": config.tools.search_provider,
            "search_k": config.tools.search_k,
            "match_threshold": config.tools.match_threshold,
            "match_mode": config.tools.match_mode,
            "code_executor": list(config.tools.code_executor),
            "code_timeout_ms": config.tools.code_timeout_ms,
            "code_parallelism": config.tools.code_parallelism,
        },
        "paths": {
            "prompts_dir": config.paths.prompts_dir,
            "memory_dir": config.paths.memory_dir,
            "out_dir": config.paths.out_dir,
        },
    }


def dump_config(config: Config, path: str | Path) -> None:
    Path(path).write_text(json.dumps(effective_dict(config), indent=2) + "\n", encoding="utf-8")


def config_hash(config: Config) -> str:
    return hashlib.sha256(canonical_json(effective_dict(config)).encode("utf-8")).hexdigest()[:16]
