"""Article bundles, figure mentions, context windows and overlapping chunks.

A bundle is one directory per article::

    <doc_id>/
        article.md
        images/...
        manifest.json      # optional; [{"figure_id", "label", "image", "caption"}, ...]

Offsets everywhere are Python ``str`` indices, i.e. code points.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path

from .errors import IngestError, ParameterError

DEFAULT_WINDOW_RADIUS = 1000
DEFAULT_CHUNK_SIZE = 8000
DEFAULT_CHUNK_OVERLAP = 800
CONTEXT_SEPARATOR = "\n\n[...]\n\n"

MANIFEST_NAME = "manifest.json"
IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg"}


@dataclass(frozen=True)
class FigureAsset:
    figure_id: str
    label: str
    image_path: Path
    caption: str = ""


@dataclass(frozen=True)
class DocumentBundle:
    doc_id: str
    markdown: str
    figures: tuple[FigureAsset, ...] = ()
    # figure_ids to restrict the figure path to; None means every figure
    target_figures: tuple[str, ...] | None = None
    source_dir: Path | None = None

    def figure(self, figure_id: str) -> FigureAsset:
        for fig in self.figures:
            if fig.figure_id == figure_id:
                return fig
        raise KeyError(figure_id)

    def figures_to_process(self) -> list[FigureAsset]:
        if self.target_figures is None:
            return list(self.figures)
        wanted = set(self.target_figures)
        return [f for f in self.figures if f.figure_id in wanted]


@dataclass(frozen=True)
class ContextWindow:
    start: int
    end: int
    text: str


@dataclass(frozen=True)
class TextChunk:
    index: int
    start: int
    end: int
    text: str


# ---------------------------------------------------------------- loading

_IMAGE_REF = re.compile(r"!\[[^\]]*\]\(\s*<?([^)\s>]+)>?(?:\s+\"[^\"]*\")?\s*\)")
_CAPTION_LINE = re.compile(r"^\s*(?:\*\*)?\s*(?:figure|fig\.?)\s*([A-Za-z]?\d+[A-Za-z]?)\b", re.IGNORECASE)


def _find_markdown(doc_dir: Path) -> Path:
    candidates = sorted(p for p in doc_dir.glob("*.md") if p.is_file())
    if not candidates:
        raise IngestError(f"{doc_dir}: no Markdown file found")
    preferred = doc_dir / "article.md"
    if preferred in candidates:
        return preferred
    if len(candidates) > 1:
        names = ", ".join(p.name for p in candidates)
        raise IngestError(f"{doc_dir}: expected one Markdown file, found {names}")
    return candidates[0]


def _resolve_image(doc_dir: Path, ref: str) -> Path | None:
    for base in (doc_dir, doc_dir / "images"):
        path = (base / ref).resolve()
        if path.is_file():
            return path
    return None


def _figures_from_manifest(doc_dir: Path, manifest: object) -> tuple[list[FigureAsset], tuple[str, ...] | None]:
    target = None
    if isinstance(manifest, dict):
        entries = manifest.get("figures", [])
        if manifest.get("target_figures") is not None:
            target = tuple(str(t) for t in manifest["target_figures"])
    elif isinstance(manifest, list):
        entries = manifest
    else:
        raise IngestError(f"{doc_dir / MANIFEST_NAME}: expected a list or an object with 'figures'")

    figures: list[FigureAsset] = []
    seen: set[str] = set()
    for i, entry in enumerate(entries):
        if not isinstance(entry, dict) or "image" not in entry:
            raise IngestError(f"{doc_dir / MANIFEST_NAME}: entry {i} lacks an 'image' key")
        image = str(entry["image"])
        figure_id = str(entry.get("figure_id") or Path(image).stem)
        if figure_id in seen:
            raise IngestError(f"{doc_dir}: duplicate figure_id {figure_id!r}")
        seen.add(figure_id)
        path = _resolve_image(doc_dir, image)
        if path is None:
            raise IngestError(f"{doc_dir}: figure {figure_id!r} references missing image {image}")
        figures.append(
            FigureAsset(
                figure_id=figure_id,
                label=str(entry.get("label") or figure_id),
                image_path=path,
                caption=str(entry.get("caption") or ""),
            )
        )
    return figures, target


def _figures_from_markdown(doc_dir: Path, markdown: str) -> list[FigureAsset]:
    """Fallback when there is no manifest: image links plus the caption line that follows."""
    lines = markdown.splitlines()
    figures: list[FigureAsset] = []
    seen: set[str] = set()
    for lineno, line in enumerate(lines):
        for match in _IMAGE_REF.finditer(line):
            ref = match.group(1)
            if Path(ref).suffix.lower() not in IMAGE_SUFFIXES:
                continue
            figure_id = Path(ref).stem
            if figure_id in seen:
                continue
            seen.add(figure_id)
            path = _resolve_image(doc_dir, ref)
            if path is None:
                raise IngestError(f"{doc_dir}: figure {figure_id!r} references missing image {ref}")
            caption, label = "", figure_id
            for nxt in lines[lineno + 1 : lineno + 4]:
                if not nxt.strip():
                    continue
                cap = _CAPTION_LINE.match(nxt)
                if cap:
                    caption, label = nxt.strip(), cap.group(1)
                break
            figures.append(FigureAsset(figure_id, label, path, caption))
    return figures


def load_document(doc_dir: str | Path) -> DocumentBundle:
    """Load one article bundle directory.

    Figure order follows the manifest; without a manifest it follows the
    order of image links in the Markdown.
    """
    doc_dir = Path(doc_dir)
    if not doc_dir.is_dir():
        raise IngestError(f"{doc_dir}: not a directory")
    md_path = _find_markdown(doc_dir)
    markdown = md_path.read_text(encoding="utf-8")

    manifest_path = doc_dir / MANIFEST_NAME
    target = None
    if manifest_path.is_file():
        try:
            manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise IngestError(f"{manifest_path}: invalid JSON ({exc})") from exc
        figures, target = _figures_from_manifest(doc_dir, manifest)
    else:
        figures = _figures_from_markdown(doc_dir, markdown)

    doc_id = doc_dir.name
    if not doc_id:
        raise IngestError(f"{doc_dir}: empty document id")
    return DocumentBundle(
        doc_id=doc_id,
        markdown=markdown,
        figures=tuple(figures),
        target_figures=target,
        source_dir=doc_dir.resolve(),
    )


def iter_corpus(root: str | Path) -> list[Path]:
    """Bundle directories under ``root`` in sorted order."""
    root = Path(root)
    if not root.is_dir():
        raise IngestError(f"{root}: corpus directory not found")
    return sorted(p for p in root.iterdir() if p.is_dir() and not p.name.startswith("."))


def load_corpus(root: str | Path) -> tuple[list[DocumentBundle], dict[str, str]]:
    """Load every bundle below ``root``; returns bundles and per-directory ingest errors."""
    bundles: list[DocumentBundle] = []
    errors: dict[str, str] = {}
    for doc_dir in iter_corpus(root):
        try:
            bundles.append(load_document(doc_dir))
        except IngestError as exc:
            errors[doc_dir.name] = str(exc)
    return bundles, errors


# ---------------------------------------------------------------- mentions & context


def _mention_pattern(label: str) -> re.Pattern[str]:
    suffix = r"(?:[a-z](?:\s?[-–,&]\s?[a-z])*|\s?\([a-z](?:\s?[-–,&]\s?[a-z])*\))?"
    return re.compile(
        r"\b(?:figure|fig\.?)\s*" + re.escape(label) + suffix + r"(?![0-9a-z])",
        re.IGNORECASE,
    )


def find_figure_mentions(markdown: str, label: str) -> list[tuple[int, int]]:
    """Spans of ``Figure <label>``, ``Fig. <label>`` and ``Fig <label>`` mentions."""
    if not label:
        raise ParameterError("figure label must be non-empty")
    return [m.span() for m in _mention_pattern(label).finditer(markdown)]


def merge_intervals(intervals: list[tuple[int, int]]) -> list[tuple[int, int]]:
    merged: list[tuple[int, int]] = []
    for start, end in sorted(intervals):
        if merged and start <= merged[-1][1]:
            merged[-1] = (merged[-1][0], max(merged[-1][1], end))
        else:
            merged.append((start, end))
    return merged


def context_windows(markdown: str, spans: list[tuple[int, int]], radius: int) -> list[ContextWindow]:
    if radius <= 0:
        raise ParameterError("window radius must be positive")
    n = len(markdown)
    padded = [(max(0, s - radius), min(n, e + radius)) for s, e in spans]
    return [ContextWindow(s, e, markdown[s:e]) for s, e in merge_intervals(padded) if s < e]


def build_extra_context(bundle: DocumentBundle, figure: FigureAsset, radius: int = DEFAULT_WINDOW_RADIUS) -> str:
    """Caption followed by merged text windows around every mention of the figure."""
    if figure not in bundle.figures:
        raise ParameterError(f"figure {figure.figure_id!r} is not part of {bundle.doc_id!r}")
    spans = find_figure_mentions(bundle.markdown, figure.label)
    parts = [figure.caption] if figure.caption else []
    parts.extend(w.text for w in context_windows(bundle.markdown, spans, radius))
    return CONTEXT_SEPARATOR.join(parts)


# ---------------------------------------------------------------- chunking


def chunk_markdown(
    markdown: str, size: int = DEFAULT_CHUNK_SIZE, overlap: int = DEFAULT_CHUNK_OVERLAP
) -> list[TextChunk]:
    if size <= 0 or overlap < 0 or overlap >= size:
        raise ParameterError(f"need size > overlap >= 0, got size={size}, overlap={overlap}")
    n = len(markdown)
    step = size - overlap
    chunks: list[TextChunk] = []
    start = 0
    while start < n:
        end = min(start + size, n)
        chunks.append(TextChunk(len(chunks), start, end, markdown[start:end]))
        if end == n:
            break
        start += step
    return chunks


def table_spans(text: str) -> list[tuple[int, int]]:
    """Character spans of Markdown pipe-table blocks (consecutive lines starting with ``|``)."""
    spans: list[tuple[int, int]] = []
    offset = 0
    current: tuple[int, int] | None = None
    for line in text.splitlines(keepends=True):
        is_row = line.lstrip().startswith("|")
        if is_row:
            current = (current[0], offset + len(line)) if current else (offset, offset + len(line))
        elif current:
            spans.append(current)
            current = None
        offset += len(line)
    if current:
        spans.append(current)
    return spans
