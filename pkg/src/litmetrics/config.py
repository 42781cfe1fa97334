"""Run configuration file (TOML).

Example::

    corpus = "corpus"
    output = "runs/first"
    domain_knowledge = "nmc811.toml"   # optional, defaults to the bundled one
    workers = 2

    [vlm]
    base_url = "http://localhost:8000/v1"
    model = "qwen3-vl"
    api_key_env = "VLM_API_KEY"        # default: LITMETRICS_VLM_API_KEY
    max_parallel = 2

    [llm]
    base_url = "http://localhost:8001/v1"
    model = "gpt-oss-120b"

    [overrides]
    window_radius = 1000
    chunk_size = 8000
    chunk_overlap = 800
    tolerance_pct = 3.0
    aspect_ratio_threshold = 1.6

Relative paths resolve against the config file's directory. Secrets are only
ever read from the environment or the file and are never written back out.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

from .errors import ConfigError
from .gateway import ModelEndpoint, RetryPolicy
from .knowledge import DomainKnowledge, load_domain_knowledge, tomllib

OVERRIDE_KEYS = ("window_radius", "chunk_size", "chunk_overlap", "tolerance_pct", "aspect_ratio_threshold")


@dataclass
class RunConfig:
    corpus: Path
    output: Path
    domain_knowledge: DomainKnowledge
    vlm: ModelEndpoint
    llm: ModelEndpoint
    workers: int = 1
    chunk_workers: int = 4
    domain_knowledge_path: Path | None = None
    overrides: dict[str, Any] = field(default_factory=dict)

    def validate(self) -> None:
        if not self.corpus.is_dir():
            raise ConfigError(f"corpus directory {self.corpus} does not exist")
        if self.workers < 1 or self.chunk_workers < 1:
            raise ConfigError("worker counts must be >= 1")

    def snapshot(self) -> dict[str, Any]:
        """Config as recorded in the run manifest, with secrets redacted."""
        return {
            "corpus": str(self.corpus),
            "output": str(self.output),
            "domain_knowledge": {
                "path": str(self.domain_knowledge_path) if self.domain_knowledge_path else "builtin",
                "name": self.domain_knowledge.name,
                "digest": self.domain_knowledge.digest(),
            },
            "vlm": self.vlm.redacted(),
            "llm": self.llm.redacted(),
            "workers": self.workers,
            "chunk_workers": self.chunk_workers,
            "overrides": dict(self.overrides),
        }


def endpoint_from_mapping(name: str, section: Mapping[str, Any], env: Mapping[str, str] | None = None) -> ModelEndpoint:
    env = os.environ if env is None else env
    try:
        base_url = str(section["base_url"])
        model = str(section["model"])
    except KeyError as exc:
        raise ConfigError(f"[{name}] needs {exc}") from None
    env_var = str(section.get("api_key_env") or f"LITMETRICS_{name.upper()}_API_KEY")
    token = env.get(env_var) or str(section.get("api_key") or "")
    retry = RetryPolicy(
        max_attempts=int(section.get("max_attempts", 3)),
        base_delay=float(section.get("base_delay", 1.0)),
        max_delay=float(section.get("max_delay", 30.0)),
    )
    max_tokens = section.get("max_tokens", 2048)
    jpeg_quality = section.get("jpeg_quality", 90)
    try:
        return ModelEndpoint(
            base_url=base_url,
            model_name=model,
            auth_token=token,
            max_parallel=int(section.get("max_parallel", 4)),
            timeout=float(section.get("timeout", 120.0)),
            retry=retry,
            temperature=float(section.get("temperature", 0.0)),
            max_tokens=None if max_tokens in (None, 0, "none") else int(max_tokens),
            jpeg_quality=None if jpeg_quality in (None, 0, "png") else int(jpeg_quality),
            json_mode=bool(section.get("json_mode", False)),
        )
    except ValueError as exc:
        raise ConfigError(f"[{name}] {exc}") from exc


def load_run_config(path: str | Path, env: Mapping[str, str] | None = None) -> RunConfig:
    path = Path(path)
    try:
        data = tomllib.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    base = path.parent

    def resolve(p: Any) -> Path:
        p = Path(str(p)).expanduser()
        return p if p.is_absolute() else (base / p)

    for section in ("vlm", "llm"):
        if section not in data:
            raise ConfigError(f"{path}: missing [{section}] section")
    dk_path = resolve(data["domain_knowledge"]) if data.get("domain_knowledge") else None
    overrides = {k: v for k, v in (data.get("overrides") or {}).items() if k in OVERRIDE_KEYS}
    unknown = set(data.get("overrides") or {}) - set(OVERRIDE_KEYS)
    if unknown:
        raise ConfigError(f"{path}: unknown overrides {sorted(unknown)}")
    dk = load_domain_knowledge(dk_path)
    try:
        dk = dk.with_overrides(**overrides)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return RunConfig(
        corpus=resolve(data.get("corpus", "corpus")),
        output=resolve(data.get("output", "run")),
        domain_knowledge=dk,
        vlm=endpoint_from_mapping("vlm", data["vlm"], env),
        llm=endpoint_from_mapping("llm", data["llm"], env),
        workers=int(data.get("workers", 1)),
        chunk_workers=int(data.get("chunk_workers", 4)),
        domain_knowledge_path=dk_path,
        overrides=overrides,
    )
