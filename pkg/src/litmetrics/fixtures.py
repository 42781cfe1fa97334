"""Synthetic bundles, ground-truth fixtures and a scripted model for offline runs."""

from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Any, Callable

import numpy as np

from .evaluation import GroundTruthRecord
from .mosaic import save_png
from .records import MetricRecord, Provenance, format_voltage_range
from .stubserver import Reply, has_image, system_prompt, user_text


def synthetic_plot(width: int = 320, height: int = 240, seed: int = 0) -> np.ndarray:
    """A small RGB image with a few coloured strokes, distinct per seed."""
    rng = np.random.default_rng(seed)
    img = np.full((height, width, 3), 255, dtype=np.uint8)
    img[height - 20, 20:] = 0
    img[:-20, 20] = 0
    xs = np.arange(20, width)
    for _ in range(3):
        colour = rng.integers(0, 200, size=3, dtype=np.uint8)
        ys = (height - 30) - (rng.random() * 0.8 * (height - 40) * np.sqrt((xs - 20) / (width - 20))).astype(int)
        img[np.clip(ys, 0, height - 1), xs] = colour
    return img


def write_bundle(
    root: str | Path,
    doc_id: str,
    markdown: str,
    figures: list[dict[str, Any]] = (),
    target_figures: list[str] | None = None,
) -> Path:
    """Write ``<root>/<doc_id>/`` with article.md, images/ and manifest.json.

    Each figure dict has ``figure_id``, ``label``, ``image`` (ndarray) and optional ``caption``.
    """
    doc_dir = Path(root) / doc_id
    (doc_dir / "images").mkdir(parents=True, exist_ok=True)
    (doc_dir / "article.md").write_text(markdown, encoding="utf-8")
    entries = []
    for fig in figures:
        name = f"{fig['figure_id']}.png"
        save_png(fig["image"], doc_dir / "images" / name)
        entries.append(
            {"figure_id": fig["figure_id"], "label": fig["label"], "image": f"images/{name}", "caption": fig.get("caption", "")}
        )
    manifest: Any = entries if target_figures is None else {"figures": entries, "target_figures": target_figures}
    (doc_dir / "manifest.json").write_text(json.dumps(manifest, indent=2), encoding="utf-8")
    return doc_dir


# ---------------------------------------------------------------- evaluation fixtures

REFERENCE_COUNTS = {"discharge_capacity": 14, "coulombic_efficiency_pct": 8, "voltage_max": 23, "voltage_min": 17}


def accuracy_fixture(
    counts: dict[str, int] = REFERENCE_COUNTS, n_docs: int = 24, seed: int = 0
) -> tuple[list[MetricRecord], list[GroundTruthRecord]]:
    """Predictions and truths where exactly ``counts[field]`` of ``n_docs`` documents match.

    Matching predictions sit inside the 3% band, misses sit 10% off; which
    documents match is shuffled per field.
    """
    rng = np.random.default_rng(seed)
    truth_vals = {
        "discharge_capacity": np.round(rng.uniform(170, 215, n_docs), 1),
        "coulombic_efficiency_pct": np.round(rng.uniform(80, 95, n_docs), 1),
        "voltage_max": rng.choice([4.2, 4.3, 4.4, 4.5], n_docs),
        "voltage_min": rng.choice([2.7, 2.8, 3.0], n_docs),
    }
    match = {f: set(rng.permutation(n_docs)[:k].tolist()) for f, k in counts.items()}
    records, truths = [], []
    for i in range(n_docs):
        doc_id = f"doc{i:02d}"
        t = {f: float(v[i]) for f, v in truth_vals.items()}
        p = {f: round(t[f] * (1.01 if i in match[f] else 1.10), 3) for f in t}
        truths.append(GroundTruthRecord(doc_id, t))
        p["voltage_range"] = format_voltage_range(p["voltage_min"], p["voltage_max"])
        records.append(MetricRecord(doc_id=doc_id, provenance={f: Provenance("chart") for f in p}, **p))
    return records, truths


def source_fixture(text: int = 29, table: int = 1, chart: int = 70) -> list[GroundTruthRecord]:
    """Truth records whose per-field source labels total the given counts (5 labels per document)."""
    labels = ["text"] * text + ["table"] * table + ["chart"] * chart
    fields = ("discharge_capacity", "coulombic_efficiency_pct", "voltage_max", "voltage_min", "charge_capacity")
    truths = []
    for d in range(0, len(labels), len(fields)):
        group = labels[d : d + len(fields)]
        truths.append(
            GroundTruthRecord(
                f"doc{d // len(fields):02d}",
                {f: 1.0 for f in fields[: len(group)]},
                dict(zip(fields, group)),
            )
        )
    return truths


def write_truth_csv(path: str | Path, truths: list[GroundTruthRecord]) -> Path:
    fields = ("voltage_min", "voltage_max", "discharge_capacity", "charge_capacity", "coulombic_efficiency_pct")
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["doc_id", *fields, *(f"{f}_source" for f in fields)])
        for t in truths:
            vals = ["" if t.values.get(f) is None else repr(t.values[f]) for f in fields]
            srcs = [t.sources.get(f, "") for f in fields]
            w.writerow([t.doc_id, *vals, *srcs])
    return path


# ---------------------------------------------------------------- scripted model


def figure_answer_json(voltage: str | None, capacity: float | None, charge: float | None) -> str:
    return json.dumps(
        [
            {"type": "voltage", "question": "Voltage range (V)", "answer": voltage, "correct_answer": None},
            {"type": "capacity", "question": "First discharge capacity (mAh/g)", "answer": capacity, "correct_answer": None},
            {"type": "charge_capacity", "question": "First charge capacity (mAh/g)", "answer": charge, "correct_answer": None},
        ]
    )


def text_answer_json(**fields: Any) -> str:
    keys = ("voltage_range", "voltage_min", "voltage_max", "capacity", "coulombic_efficiency_pct")
    return json.dumps({k: fields.get(k) for k in keys})


def routing_responder(
    mosaic: Callable[[dict], Reply] | Reply,
    figure: Callable[[dict], Reply] | Reply,
    text: Callable[[dict], Reply] | Reply,
) -> Callable[[dict], Reply]:
    """Dispatch by which prompt the request carries: mosaic, figure, or text chunk."""

    def pick(handler, request):
        return handler(request) if callable(handler) else handler

    def respond(request: dict) -> Reply:
        sp = system_prompt(request)
        if '"rows"' in sp and has_image(request) and "panel_labels" in sp:
            return pick(mosaic, request)
        if has_image(request):
            return pick(figure, request)
        return pick(text, request)

    return respond


def chunk_marker_responder(answers: dict[str, str], default: str | None = None) -> Callable[[dict], Reply]:
    """Text-path responder: the first marker found in the chunk selects the reply."""
    fallback = default if default is not None else text_answer_json()

    def respond(request: dict) -> Reply:
        body = user_text(request)
        for marker, reply in answers.items():
            if marker in body:
                return reply
        return fallback

    return respond
