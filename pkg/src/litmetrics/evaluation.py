"""Scoring extracted records against ground truth."""

from __future__ import annotations

import csv
import json
from collections import Counter
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Any, Iterable, Mapping

from .errors import InputError, ParameterError
from .records import SOURCES, MetricRecord

# (field, display name) in report order
METRIC_TYPES = (
    ("discharge_capacity", "First Discharge Capacity"),
    ("coulombic_efficiency_pct", "Coulombic Efficiency"),
    ("voltage_max", "Voltage (max)"),
    ("voltage_min", "Voltage (min)"),
    ("charge_capacity", "First Charge Capacity"),
)
TRUTH_FIELDS = tuple(f for f, _ in METRIC_TYPES)


@dataclass(frozen=True)
class GroundTruthRecord:
    doc_id: str
    values: dict[str, float | None] = field(default_factory=dict)
    sources: dict[str, str] = field(default_factory=dict)

    def value(self, name: str) -> float | None:
        return self.values.get(name)


@dataclass(frozen=True)
class MetricScore:
    name: str
    display: str
    matched: int
    evaluated: int

    @property
    def accuracy(self) -> Fraction | None:
        """None when nothing was evaluated (not applicable, as opposed to 0)."""
        return Fraction(self.matched, self.evaluated) if self.evaluated else None

    def percent(self) -> str:
        acc = self.accuracy
        return "n/a" if acc is None else f"{float(acc) * 100:.2f}%"


@dataclass(frozen=True)
class AccuracyReport:
    scores: tuple[MetricScore, ...]
    tolerance_pct: float
    documents: int

    @property
    def matched(self) -> int:
        return sum(s.matched for s in self.scores)

    @property
    def evaluated(self) -> int:
        return sum(s.evaluated for s in self.scores)

    def score(self, name: str) -> MetricScore:
        for s in self.scores:
            if s.name == name:
                return s
        raise KeyError(name)

    def to_dict(self) -> dict[str, Any]:
        return {
            "tolerance_pct": self.tolerance_pct,
            "documents": self.documents,
            "metrics": {
                s.name: {
                    "display": s.display,
                    "matched": s.matched,
                    "evaluated": s.evaluated,
                    "accuracy": None if s.accuracy is None else float(s.accuracy),
                    "accuracy_pct": s.percent(),
                }
                for s in self.scores
            },
            "overall": {"matched": self.matched, "evaluated": self.evaluated},
        }

    def format_table(self) -> str:
        lines = [f"Accuracy by type ({self.tolerance_pct:g}% tolerance, {self.documents} documents)"]
        for s in self.scores:
            lines.append(f"{s.display} {s.percent()} ({s.matched}/{s.evaluated})")
        lines.append(f"Overall {self.matched}/{self.evaluated}")
        return "\n".join(lines) + "\n"


def within_tolerance(pred: float | None, truth: float, tol_pct: float) -> bool:
    """``|pred - truth| <= tol_pct% of |truth|``, inclusive, in exact arithmetic.

    A zero truth only matches a zero prediction.
    """
    if tol_pct <= 0:
        raise ParameterError("tolerance must be positive")
    if pred is None:
        return False
    p, t, tol = Fraction(pred), Fraction(truth), Fraction(tol_pct)
    if t == 0:
        return p == 0
    return abs(p - t) * 100 <= tol * abs(t)


def _index_truths(truths: Iterable[GroundTruthRecord]) -> dict[str, GroundTruthRecord]:
    out: dict[str, GroundTruthRecord] = {}
    for t in truths:
        if t.doc_id in out:
            raise InputError(f"duplicate doc_id {t.doc_id!r} in ground truth")
        out[t.doc_id] = t
    return out


def score_accuracy(
    records: Iterable[MetricRecord], truths: Iterable[GroundTruthRecord], tol_pct: float = 3.0
) -> AccuracyReport:
    """Per-metric accuracy over documents whose ground truth has that field.

    A document with truth but no record counts as evaluated and unmatched.
    """
    truth_by_doc = _index_truths(truths)
    rec_by_doc: dict[str, MetricRecord] = {}
    for rec in records:
        if rec.doc_id is None:
            raise InputError("record without doc_id cannot be joined to ground truth")
        rec_by_doc.setdefault(rec.doc_id, rec)
    scores = []
    for name, display in METRIC_TYPES:
        matched = evaluated = 0
        for doc_id, truth in truth_by_doc.items():
            t = truth.value(name)
            if t is None:
                continue
            evaluated += 1
            rec = rec_by_doc.get(doc_id)
            if rec is not None and within_tolerance(rec.value(name), t, tol_pct):
                matched += 1
        scores.append(MetricScore(name, display, matched, evaluated))
    return AccuracyReport(tuple(scores), tol_pct, len(truth_by_doc))


# ---------------------------------------------------------------- stage metrics & sources


@dataclass(frozen=True)
class StageMetrics:
    crop_accuracy: float
    classifier_accuracy: float

    @property
    def combined(self) -> float:
        return combined_stage_accuracy(self.crop_accuracy, self.classifier_accuracy)

    def to_dict(self) -> dict[str, float]:
        return {
            "crop_accuracy": self.crop_accuracy,
            "classifier_accuracy": self.classifier_accuracy,
            "combined": self.combined,
        }


def combined_stage_accuracy(crop: float, classifier: float) -> float:
    """Share of figures both cropped correctly and then classified correctly."""
    for name, v in (("crop", crop), ("classifier", classifier)):
        if not 0.0 <= v <= 1.0:
            raise ParameterError(f"{name} accuracy must lie in [0, 1], got {v}")
    return crop * classifier


def stage_metrics_from_annotations(rows: Iterable[Mapping[str, Any]]) -> StageMetrics:
    """Rows carry ``crop_correct`` (0/1) and, for correctly cropped figures, ``classifier_correct``."""
    crop_total = crop_ok = cls_total = cls_ok = 0
    for row in rows:
        crop = _flag(row.get("crop_correct"))
        if crop is None:
            continue
        crop_total += 1
        if crop:
            crop_ok += 1
            cls = _flag(row.get("classifier_correct"))
            if cls is not None:
                cls_total += 1
                cls_ok += int(cls)
    if not crop_total:
        raise InputError("no annotated figures with crop_correct")
    return StageMetrics(crop_ok / crop_total, cls_ok / cls_total if cls_total else 0.0)


def _flag(value: Any) -> bool | None:
    if value is None or value == "":
        return None
    if isinstance(value, bool):
        return value
    s = str(value).strip().lower()
    if s in ("1", "true", "yes", "y"):
        return True
    if s in ("0", "false", "no", "n"):
        return False
    raise InputError(f"not a 0/1 flag: {value!r}")


def source_counts(truths: Iterable[GroundTruthRecord]) -> Counter:
    counts: Counter = Counter()
    for t in truths:
        for src in t.sources.values():
            counts[src] += 1
    return counts


def source_distribution(truths: Iterable[GroundTruthRecord]) -> dict[str, float]:
    """Fraction of labelled target parameters per source (only sources that occur)."""
    counts = source_counts(truths)
    total = sum(counts.values())
    if not total:
        raise InputError("ground truth has no source labels")
    return {src: counts[src] / total for src in SOURCES if counts[src]}


def format_distribution(dist: Mapping[str, float]) -> str:
    lines = ["Source fraction"]
    for src in SOURCES:
        if src in dist:
            lines.append(f"{src.capitalize()} {dist[src] * 100:.2f}%")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------- loading


def _parse_value(raw: Any, doc_id: str, name: str) -> float | None:
    if raw is None:
        return None
    if isinstance(raw, str):
        raw = raw.strip()
        if raw == "" or raw.lower() in ("null", "none", "na", "n/a"):
            return None
    try:
        return float(raw)
    except (TypeError, ValueError):
        raise InputError(f"{doc_id}: {name} is not a number: {raw!r}") from None


def truth_from_mapping(row: Mapping[str, Any]) -> GroundTruthRecord:
    doc_id = str(row.get("doc_id") or "").strip()
    if not doc_id:
        raise InputError(f"ground-truth row without doc_id: {dict(row)!r}")
    values = {name: _parse_value(row.get(name), doc_id, name) for name in TRUTH_FIELDS}
    sources = {}
    for name in TRUTH_FIELDS:
        src = row.get(f"{name}_source")
        if src is None or str(src).strip() == "":
            continue
        src = str(src).strip().lower()
        if src not in SOURCES:
            raise InputError(f"{doc_id}: unknown source {src!r} for {name}")
        sources[name] = src
    return GroundTruthRecord(doc_id, values, sources)


def load_ground_truth(path: str | Path) -> list[GroundTruthRecord]:
    """CSV (header row) or JSON lines, chosen by file suffix."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise InputError(f"cannot read ground truth {path}: {exc}") from exc
    if path.suffix.lower() in (".jsonl", ".ndjson", ".json"):
        rows = []
        for i, line in enumerate(text.splitlines(), start=1):
            if line.strip():
                try:
                    rows.append(json.loads(line))
                except json.JSONDecodeError as exc:
                    raise InputError(f"{path}:{i}: {exc}") from exc
    else:
        rows = list(csv.DictReader(text.splitlines()))
    truths = [truth_from_mapping(r) for r in rows]
    _index_truths(truths)
    return truths


def load_annotations(path: str | Path) -> list[dict[str, Any]]:
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    if path.suffix.lower() in (".jsonl", ".ndjson", ".json"):
        return [json.loads(line) for line in text.splitlines() if line.strip()]
    return list(csv.DictReader(text.splitlines()))
