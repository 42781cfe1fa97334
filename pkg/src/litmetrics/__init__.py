"""Metric extraction from parsed scientific articles: figures first, text as fallback."""

from .corpus import (
    DocumentBundle,
    FigureAsset,
    build_extra_context,
    chunk_markdown,
    find_figure_mentions,
    load_document,
)
from .evaluation import (
    combined_stage_accuracy,
    score_accuracy,
    source_distribution,
    within_tolerance,
)
from .extraction import (
    derive_coulombic_efficiency,
    extract_from_figure,
    extract_from_text,
    merge_records,
    normalize_capacity,
    parse_voltage_range,
    run_pipeline,
)
from .gateway import ChatGateway, ChatRequest, ModelEndpoint, RetryPolicy, complete_chat, extract_json_payload
from .knowledge import DomainKnowledge, default_domain_knowledge, load_domain_knowledge
from .mosaic import MosaicSpec, normalize_mosaic_spec, parse_mosaic_string, rotate_image, split_panels
from .records import MetricRecord, Provenance
from .store import load_run, write_record_bundle

__version__ = "0.1.0"
