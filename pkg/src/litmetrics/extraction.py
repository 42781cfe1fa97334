"""Per-document extraction: figure path first, then text fallback, then merge."""

from __future__ import annotations

import hashlib
import logging
import math
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Any, Iterable

import numpy as np

from .corpus import DocumentBundle, FigureAsset, TextChunk, build_extra_context, chunk_markdown, table_spans
from .errors import (
    FigureExtractionError,
    GatewayError,
    LitMetricsError,
    PayloadError,
    TextExtractionError,
    VoltageFormatError,
)
from .gateway import ChatGateway, ChatRequest, ImagePart, ModelEndpoint, ModelResponse, default_gateway, extract_json_payload
from .knowledge import DomainKnowledge
from .mosaic import assemble_panels, load_image, normalize_figure, panel_filename, parse_mosaic_payload
from .records import METRIC_FIELDS, MetricRecord, Provenance, format_voltage_range
from .store import SidecarBundle

log = logging.getLogger(__name__)

FIGURE_ANSWER_TYPES = ("voltage", "capacity", "charge_capacity")
TEXT_FIELDS = ("voltage_min", "voltage_max", "discharge_capacity", "coulombic_efficiency_pct")

_CAPACITY_UNITS = {
    "mah/g": 1.0,
    "mahg^-1": 1.0,
    "mahg-1": 1.0,
    "mahg⁻¹": 1.0,
    "mah·g^-1": 1.0,
    "mah·g-1": 1.0,
    "mah·g⁻¹": 1.0,
    "ah/g": 1000.0,
    "ahg^-1": 1000.0,
    "ahg-1": 1000.0,
    "ahg⁻¹": 1000.0,
    "ah·g^-1": 1000.0,
    "ah·g-1": 1000.0,
}

_NUM = r"[-−]?\d+(?:\.\d+)?"
_RANGE = re.compile(rf"^\s*({_NUM})\s*(?:V\s*)?[-–—~]\s*({_NUM})\s*V?\s*$", re.IGNORECASE)


# ---------------------------------------------------------------- value normalization


def parse_voltage_range(s: str) -> tuple[float, float]:
    """``"2.8-4.3"`` -> ``(2.8, 4.3)``; negative endpoints such as ``"-0.5-1.0"`` are allowed."""
    if s is None:
        raise VoltageFormatError("voltage range is null")
    m = _RANGE.match(str(s))
    if not m:
        raise VoltageFormatError(f"unparseable voltage range {s!r}")
    lo, hi = (float(g.replace("−", "-")) for g in m.groups())
    if not lo < hi:
        raise VoltageFormatError(f"voltage range {s!r} has min >= max")
    return lo, hi


def normalize_capacity(value: float, unit: str) -> float | None:
    """Convert a specific capacity to mAh/g, rounded to one decimal."""
    key = re.sub(r"\s+", "", str(unit)).lower()
    factor = _CAPACITY_UNITS.get(key)
    if factor is None:
        log.warning("unrecognised capacity unit %r; value %r dropped", unit, value)
        return None
    return round(float(value) * factor, 1)


def derive_coulombic_efficiency(c_dis: float | None, c_ch: float | None) -> float | None:
    if c_dis is None or c_ch is None or c_ch <= 0:
        return None
    return round(100.0 * c_dis / c_ch, 1)


def _as_number(value: Any) -> float | None:
    if value is None or isinstance(value, bool):
        return None
    if isinstance(value, (int, float)):
        v = float(value)
    else:
        try:
            v = float(str(value).strip().replace("−", "-"))
        except ValueError:
            return None
    return v if math.isfinite(v) else None


# ---------------------------------------------------------------- figure path


@dataclass(frozen=True)
class FigureAnswer:
    voltage: str | None = None
    capacity: float | None = None
    charge_capacity: float | None = None
    responses: tuple[ModelResponse, ...] = field(default=(), repr=False, compare=False)

    def is_empty(self) -> bool:
        return self.voltage is None and self.capacity is None and self.charge_capacity is None


def parse_figure_answer(payload: Any) -> FigureAnswer:
    """Validate the three-entry array returned for a figure."""
    if not isinstance(payload, list) or len(payload) != 3:
        size = len(payload) if isinstance(payload, list) else type(payload).__name__
        raise PayloadError(f"expected a JSON array of 3 objects, got {size}")
    answers: dict[str, Any] = {}
    for expected, entry in zip(FIGURE_ANSWER_TYPES, payload):
        if not isinstance(entry, dict) or "answer" not in entry:
            raise PayloadError(f"entry for {expected!r} is not an object with an 'answer'")
        if entry.get("type") != expected:
            raise PayloadError(f"expected entry type {expected!r}, got {entry.get('type')!r}")
        answers[expected] = entry["answer"]

    voltage = answers["voltage"]
    if voltage is not None:
        voltage = str(voltage).strip() or None
    numbers = {}
    for key in ("capacity", "charge_capacity"):
        v = _as_number(answers[key])
        if answers[key] is not None and v is None:
            log.warning("non-numeric %s answer %r treated as null", key, answers[key])
        numbers[key] = None if v is None else round(v, 1)
    return FigureAnswer(voltage=voltage, **numbers)


_REASK = (
    "Your previous reply could not be used ({reason}). Reply again with ONLY the JSON array of exactly "
    'three objects typed "voltage", "capacity" and "charge_capacity", in that order.'
)


def _figure_request(dk: DomainKnowledge, extra_context: str, panel: ImagePart, reask: str | None) -> ChatRequest:
    parts: list[Any] = []
    if extra_context:
        parts.append("Figure caption and mentions from the article:\n\n" + extra_context)
    parts.append(panel)
    if reask:
        parts.append(reask)
    return ChatRequest(dk.vlm_system_prompt, tuple(parts), response_format_hint="json")


def extract_from_figure(
    panel: np.ndarray,
    extra_context: str,
    dk: DomainKnowledge,
    ep: ModelEndpoint,
    gateway: ChatGateway | None = None,
) -> FigureAnswer:
    """Ask the vision model for the three figure metrics; one re-ask on a malformed reply."""
    gateway = gateway or default_gateway()
    image = ImagePart.from_array(panel, ep.jpeg_quality)
    responses: list[ModelResponse] = []
    reason = None
    for _ in range(2):
        reask = _REASK.format(reason=reason) if reason else None
        resp = gateway.complete_chat(ep, _figure_request(dk, extra_context, image, reask))
        responses.append(resp)
        try:
            payload = resp.parsed_json if resp.parsed_json is not None else extract_json_payload(resp.raw_text)
            answer = parse_figure_answer(payload)
        except PayloadError as exc:
            reason = str(exc)
            continue
        return replace(answer, responses=tuple(responses))
    err = FigureExtractionError(f"figure answer rejected twice: {reason}")
    err.responses = tuple(responses)
    raise err


def figure_record(answer: FigureAnswer, figure_id: str, model_name: str, artifact: str) -> MetricRecord:
    """Partial record from a figure answer; CE is derived from the two capacities."""
    prov = Provenance("chart", figure_id=figure_id, model_name=model_name, artifact=artifact)
    values: dict[str, Any] = {}
    if answer.voltage is not None:
        try:
            lo, hi = parse_voltage_range(answer.voltage)
        except VoltageFormatError as exc:
            log.warning("figure %s: %s", figure_id, exc)
        else:
            values.update(voltage_min=lo, voltage_max=hi, voltage_range=format_voltage_range(lo, hi))
    for key, name in (("capacity", "discharge_capacity"), ("charge_capacity", "charge_capacity")):
        v = getattr(answer, key)
        if v is not None and v >= 0:
            values[name] = normalize_capacity(v, "mAh/g")
    provenance = {k: prov for k in values}
    ce = derive_coulombic_efficiency(values.get("discharge_capacity"), values.get("charge_capacity"))
    if ce is not None and 0 < ce < 200:
        values["coulombic_efficiency_pct"] = ce
        provenance["coulombic_efficiency_pct"] = replace(
            prov, derived_from=("discharge_capacity", "charge_capacity")
        )
    return MetricRecord(**values, provenance=provenance)


# ---------------------------------------------------------------- text path


def parse_text_answer(payload: Any) -> dict[str, float | None]:
    """Normalize one chunk's JSON object into min/max voltage, capacity and CE."""
    if not isinstance(payload, dict):
        raise PayloadError(f"expected a JSON object, got {type(payload).__name__}")
    lo = _as_number(payload.get("voltage_min"))
    hi = _as_number(payload.get("voltage_max"))
    rng = payload.get("voltage_range")
    if rng is not None:
        try:
            lo, hi = parse_voltage_range(rng)
        except VoltageFormatError as exc:
            log.info("ignoring voltage_range: %s", exc)
    if lo is not None and hi is not None and not lo < hi:
        log.info("dropping inconsistent voltages %r/%r", lo, hi)
        lo = hi = None
    cap = _as_number(payload.get("capacity", payload.get("discharge_capacity")))
    if cap is not None and cap < 0:
        cap = None
    ce = _as_number(payload.get("coulombic_efficiency_pct"))
    if ce is not None and not 0 < ce < 200:
        ce = None
    return {"voltage_min": lo, "voltage_max": hi, "discharge_capacity": cap, "coulombic_efficiency_pct": ce}


def _number_positions(text: str, value: float) -> list[int]:
    return [m.start() for m in re.finditer(r"\d+(?:\.\d+)?", text) if math.isclose(float(m.group()), abs(value), abs_tol=1e-9)]


def locate_source(chunk_text: str, value: float) -> str:
    """``table`` if the first occurrence of ``value`` in the chunk sits inside a pipe table, else ``text``."""
    positions = _number_positions(chunk_text, value)
    if not positions:
        return "text"
    first = positions[0]
    return "table" if any(s <= first < e for s, e in table_spans(chunk_text)) else "text"


def merge_first_non_null(answers: dict[int, dict[str, float | None]]) -> dict[str, tuple[float, int]]:
    """For each field, the value from the lowest chunk index that has one."""
    merged: dict[str, tuple[float, int]] = {}
    for index in sorted(answers):
        for name, value in answers[index].items():
            if value is not None and name not in merged:
                merged[name] = (value, index)
    return merged


@dataclass
class TextResult:
    record: MetricRecord
    responses: dict[int, ModelResponse] = field(default_factory=dict)
    errors: dict[int, str] = field(default_factory=dict)


def chunk_payload_name(index: int) -> str:
    return f"chunk_{index:04d}"


def extract_from_text(
    chunks: list[TextChunk],
    dk: DomainKnowledge,
    ep: ModelEndpoint,
    gateway: ChatGateway | None = None,
    workers: int = 4,
) -> TextResult:
    """Run the text prompt over every chunk and merge first non-null values in document order."""
    gateway = gateway or default_gateway()

    def ask(chunk: TextChunk) -> ModelResponse:
        return gateway.complete_chat(ep, ChatRequest(dk.text_prompt, (chunk.text,), response_format_hint="json"))

    responses: dict[int, ModelResponse] = {}
    errors: dict[int, str] = {}
    answers: dict[int, dict[str, float | None]] = {}
    transport_failures = 0
    with ThreadPoolExecutor(max_workers=max(1, min(workers, len(chunks) or 1))) as pool:
        futures = {chunk.index: pool.submit(ask, chunk) for chunk in chunks}
        for index, fut in futures.items():
            try:
                resp = fut.result()
            except GatewayError as exc:
                transport_failures += 1
                errors[index] = str(exc)
                continue
            responses[index] = resp
            try:
                payload = resp.parsed_json if resp.parsed_json is not None else extract_json_payload(resp.raw_text)
                answers[index] = parse_text_answer(payload)
            except PayloadError as exc:
                errors[index] = str(exc)
    if chunks and transport_failures == len(chunks):
        err = TextExtractionError(f"all {len(chunks)} chunk requests failed")
        err.errors = errors
        raise err

    by_index = {c.index: c for c in chunks}
    values: dict[str, Any] = {}
    provenance: dict[str, Provenance] = {}
    for name, (value, index) in merge_first_non_null(answers).items():
        values[name] = value
        provenance[name] = Provenance(
            source=locate_source(by_index[index].text, value),
            chunk_index=index,
            model_name=responses[index].model_name or ep.model_name,
            artifact=SidecarBundle.payload_path(chunk_payload_name(index)),
        )
    _reconcile_voltage(values, provenance)
    return TextResult(MetricRecord(**values, provenance=provenance), responses, errors)


def _reconcile_voltage(values: dict[str, Any], provenance: dict[str, Provenance]) -> None:
    lo, hi = values.get("voltage_min"), values.get("voltage_max")
    if lo is None or hi is None:
        return
    if not lo < hi:
        # min and max came from different chunks and disagree; keep the earlier one
        later = "voltage_max" if provenance["voltage_max"].chunk_index > provenance["voltage_min"].chunk_index else "voltage_min"
        values.pop(later)
        provenance.pop(later)
        return
    values["voltage_range"] = format_voltage_range(lo, hi)
    later = max(provenance["voltage_min"], provenance["voltage_max"], key=lambda p: p.chunk_index or 0)
    provenance["voltage_range"] = later


# ---------------------------------------------------------------- merge


def merge_records(figure_rec: MetricRecord, text_rec: MetricRecord) -> MetricRecord:
    """Figure values win; text fills the gaps; CE is derived when still missing."""
    values: dict[str, Any] = {}
    provenance: dict[str, Provenance] = {}
    for name in METRIC_FIELDS:
        for rec in (figure_rec, text_rec):
            v = getattr(rec, name)
            if v is not None:
                values[name] = v
                if name in rec.provenance:
                    provenance[name] = rec.provenance[name]
                break
    lo, hi = values.get("voltage_min"), values.get("voltage_max")
    if values.get("voltage_range") is None and lo is not None and hi is not None and lo < hi:
        values["voltage_range"] = format_voltage_range(lo, hi)
        src = provenance.get("voltage_max") or provenance.get("voltage_min")
        if src is not None:
            provenance["voltage_range"] = src
    if values.get("coulombic_efficiency_pct") is None:
        ce = derive_coulombic_efficiency(values.get("discharge_capacity"), values.get("charge_capacity"))
        if ce is not None and 0 < ce < 200:
            values["coulombic_efficiency_pct"] = ce
            base = provenance.get("charge_capacity") or provenance.get("discharge_capacity")
            if base is not None:
                provenance["coulombic_efficiency_pct"] = replace(
                    base, derived_from=("discharge_capacity", "charge_capacity")
                )
    doc_id = figure_rec.doc_id or text_rec.doc_id
    return MetricRecord(doc_id=doc_id, **values, provenance=provenance)


# ---------------------------------------------------------------- pipeline


def _digest(text: str) -> str:
    return "sha256:" + hashlib.sha256(text.encode("utf-8")).hexdigest()


def _payload_entry(kind: str, ep: ModelEndpoint, system_prompt: str, responses: Iterable[ModelResponse], **extra) -> dict[str, Any]:
    return {
        "kind": kind,
        "model": ep.model_name,
        "endpoint": ep.base_url,
        "system_prompt": _digest(system_prompt),
        **extra,
        "responses": [
            {"raw_text": r.raw_text, "attempt_count": r.attempt_count, "latency": round(r.latency, 4)} for r in responses
        ],
    }


@dataclass
class PipelineResult:
    record: MetricRecord
    sidecars: SidecarBundle
    status: str  # ok | partial | failed
    text_calls: int = 0


def _figure_path(
    bundle: DocumentBundle,
    figure: FigureAsset,
    dk: DomainKnowledge,
    vlm: ModelEndpoint,
    gateway: ChatGateway,
    sidecars: SidecarBundle,
) -> MetricRecord | None:
    fid = figure.figure_id
    image = load_image(figure.image_path)
    mosaic_resp = gateway.complete_chat(
        vlm, ChatRequest(dk.mosaic_prompt, (ImagePart.from_array(image, vlm.jpeg_quality),), response_format_hint="json")
    )
    sidecars.payloads[f"{fid}.mosaic"] = _payload_entry("mosaic", vlm, dk.mosaic_prompt, [mosaic_resp], figure_id=fid)
    payload = mosaic_resp.parsed_json
    if payload is None:
        payload = extract_json_payload(mosaic_resp.raw_text)
    raw_spec = parse_mosaic_payload(payload)
    norm = normalize_figure(image, raw_spec, dk.aspect_ratio_threshold)
    sidecars.mosaic[fid] = {
        "figure_id": fid,
        "raw": payload,
        "parsed": raw_spec.to_dict(),
        "normalized": norm.spec.to_dict(),
        "relevant": raw_spec.relevant,
        "target_index": norm.target_index,
        "image_size": [int(image.shape[1]), int(image.shape[0])],
    }
    for k, panel in enumerate(norm.panels, start=1):
        sidecars.panels[panel_filename(fid, k)] = panel
    if not raw_spec.relevant:
        return None
    if norm.target is not None:
        target = norm.target
    else:
        log.info("%s/%s: target panel %r unresolved; using the whole figure", bundle.doc_id, fid, raw_spec.target_panel)
        target = assemble_panels(norm.panels, norm.spec.rows, norm.spec.cols)
    context = build_extra_context(bundle, figure, dk.window_radius)
    name = f"{fid}.figure"
    try:
        answer = extract_from_figure(target, context, dk, vlm, gateway)
    except FigureExtractionError as exc:
        sidecars.payloads[name] = _payload_entry(
            "figure", vlm, dk.vlm_system_prompt, getattr(exc, "responses", ()), figure_id=fid, context=_digest(context)
        )
        raise
    sidecars.payloads[name] = _payload_entry(
        "figure", vlm, dk.vlm_system_prompt, answer.responses, figure_id=fid, context=_digest(context)
    )
    return figure_record(answer, fid, vlm.model_name, SidecarBundle.payload_path(name))


def run_pipeline(
    bundle: DocumentBundle,
    dk: DomainKnowledge,
    vlm: ModelEndpoint,
    llm: ModelEndpoint,
    gateway: ChatGateway | None = None,
    chunk_workers: int = 4,
) -> PipelineResult:
    """Extract one document.

    Figures are tried in document order; the first one yielding any value is
    kept. Text extraction runs only if fields are still missing afterwards.
    """
    gateway = gateway or default_gateway()
    sidecars = SidecarBundle()
    figure_rec = MetricRecord()

    for figure in bundle.figures_to_process():
        try:
            rec = _figure_path(bundle, figure, dk, vlm, gateway, sidecars)
        except (LitMetricsError, OSError) as exc:
            log.warning("%s/%s: figure skipped: %s", bundle.doc_id, figure.figure_id, exc)
            sidecars.errors.append({"stage": "figure", "figure_id": figure.figure_id, "error": f"{type(exc).__name__}: {exc}"})
            continue
        if rec is not None and not rec.is_empty():
            figure_rec = rec
            break

    text_rec = MetricRecord()
    text_failed = False
    text_calls = 0
    if figure_rec.missing():
        chunks = chunk_markdown(bundle.markdown, dk.chunk_size, dk.chunk_overlap)
        text_calls = len(chunks)
        try:
            result = extract_from_text(chunks, dk, llm, gateway, chunk_workers)
        except TextExtractionError as exc:
            text_failed = True
            for index, msg in sorted(getattr(exc, "errors", {}).items()):
                sidecars.errors.append({"stage": "text", "chunk_index": index, "error": msg})
        else:
            text_rec = result.record
            for index, resp in sorted(result.responses.items()):
                chunk = chunks[index]
                sidecars.payloads[chunk_payload_name(index)] = _payload_entry(
                    "text", llm, dk.text_prompt, [resp], chunk_index=index, chunk_span=[chunk.start, chunk.end]
                )
            for index, msg in sorted(result.errors.items()):
                sidecars.errors.append({"stage": "text", "chunk_index": index, "error": msg})

    record = replace(merge_records(figure_rec, text_rec), doc_id=bundle.doc_id)
    if text_failed and figure_rec.is_empty():
        status = "failed"
    elif sidecars.errors:
        status = "partial"
    else:
        status = "ok"
    return PipelineResult(record, sidecars, status, text_calls)
