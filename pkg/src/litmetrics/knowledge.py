"""Domain knowledge: target metrics, prompts, synonyms and tunable sizes."""

from __future__ import annotations

import hashlib
import json
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path
from string import Template
from typing import Any

from .errors import ConfigError

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

DATA_DIR = Path(__file__).parent / "data"
DEFAULT_KNOWLEDGE_FILE = DATA_DIR / "nmc811.toml"


@dataclass(frozen=True)
class MetricDef:
    name: str
    unit: str
    kind: str = "number"  # number | range


@dataclass(frozen=True)
class DomainKnowledge:
    metrics: tuple[MetricDef, ...]
    vlm_system_prompt: str
    text_prompt: str
    mosaic_prompt: str
    synonyms: tuple[str, ...] = ()
    material: str = ""
    window_radius: int = 1000
    chunk_size: int = 8000
    chunk_overlap: int = 800
    tolerance_pct: float = 3.0
    aspect_ratio_threshold: float = 1.6
    name: str = "custom"

    def __post_init__(self):
        if self.tolerance_pct <= 0:
            raise ConfigError("tolerance_pct must be positive")
        if self.window_radius <= 0:
            raise ConfigError("window_radius must be positive")
        if not (0 <= self.chunk_overlap < self.chunk_size):
            raise ConfigError("need chunk_size > chunk_overlap >= 0")
        for key in ("vlm_system_prompt", "text_prompt", "mosaic_prompt"):
            if not getattr(self, key).strip():
                raise ConfigError(f"{key} must be non-empty")

    def with_overrides(self, **overrides: Any) -> "DomainKnowledge":
        return replace(self, **{k: v for k, v in overrides.items() if v is not None})

    def digest(self) -> str:
        blob = json.dumps(
            {
                "metrics": [m.__dict__ for m in self.metrics],
                "prompts": [self.vlm_system_prompt, self.text_prompt, self.mosaic_prompt],
                "synonyms": list(self.synonyms),
                "sizes": [self.window_radius, self.chunk_size, self.chunk_overlap],
                "tolerance_pct": self.tolerance_pct,
                "aspect_ratio_threshold": self.aspect_ratio_threshold,
            },
            sort_keys=True,
        )
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def _read_prompt(value: Any, base: Path, substitutions: dict[str, str]) -> str:
    if isinstance(value, dict):
        if "file" in value:
            text = (base / value["file"]).read_text(encoding="utf-8")
        elif "text" in value:
            text = str(value["text"])
        else:
            raise ConfigError(f"prompt entry needs 'file' or 'text': {value!r}")
    elif isinstance(value, str):
        text = value
    else:
        raise ConfigError(f"unsupported prompt entry {value!r}")
    return Template(text).safe_substitute(substitutions).strip() + "\n"


def _load_mapping(path: Path) -> dict[str, Any]:
    raw = path.read_bytes()
    if path.suffix.lower() == ".json":
        return json.loads(raw)
    return tomllib.loads(raw.decode("utf-8"))


def load_domain_knowledge(path: str | Path | None = None) -> DomainKnowledge:
    """Read a TOML (or JSON) knowledge file; prompts may be inline or ``{file = ...}``."""
    path = Path(path) if path else DEFAULT_KNOWLEDGE_FILE
    try:
        data = _load_mapping(path)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read domain knowledge {path}: {exc}") from exc

    synonyms = tuple(str(s) for s in data.get("synonyms", []))
    substitutions = {
        "material": str(data.get("material", "")),
        "material_description": str(data.get("material_description", "")),
        "synonyms": ", ".join(f'"{s}"' for s in synonyms),
    }
    prompts = data.get("prompts", {})
    try:
        text_prompt = _read_prompt(prompts["text"], path.parent, substitutions)
        vlm_prompt = _read_prompt(prompts["vlm"], path.parent, substitutions)
        mosaic_prompt = _read_prompt(prompts["mosaic"], path.parent, substitutions)
    except KeyError as exc:
        raise ConfigError(f"{path}: missing prompt {exc}") from None
    except OSError as exc:
        raise ConfigError(f"{path}: {exc}") from exc

    metrics = tuple(
        MetricDef(str(m["name"]), str(m.get("unit", "")), str(m.get("kind", "number"))) for m in data.get("metrics", [])
    )
    return DomainKnowledge(
        metrics=metrics,
        vlm_system_prompt=vlm_prompt,
        text_prompt=text_prompt,
        mosaic_prompt=mosaic_prompt,
        synonyms=synonyms,
        material=substitutions["material"],
        window_radius=int(data.get("window_radius", 1000)),
        chunk_size=int(data.get("chunk_size", 8000)),
        chunk_overlap=int(data.get("chunk_overlap", 800)),
        tolerance_pct=float(data.get("tolerance_pct", 3.0)),
        aspect_ratio_threshold=float(data.get("aspect_ratio_threshold", 1.6)),
        name=str(data.get("name", path.stem)),
    )


def default_domain_knowledge() -> DomainKnowledge:
    return load_domain_knowledge(DEFAULT_KNOWLEDGE_FILE)
