"""Command-line entry point: ``litmetrics {ingest,extract,eval,report,mosaic-debug}``.

Exit codes: 0 success, 1 partial failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Sequence

from .config import RunConfig, load_run_config
from .corpus import load_corpus
from .errors import ConfigError, InputError, LitMetricsError, LoadError
from .evaluation import (
    combined_stage_accuracy,
    format_distribution,
    load_annotations,
    load_ground_truth,
    score_accuracy,
    source_counts,
    source_distribution,
    stage_metrics_from_annotations,
)
from .extraction import run_pipeline
from .gateway import ChatGateway, ChatRequest, ImagePart, extract_json_payload
from .mosaic import (
    load_image,
    normalize_figure,
    panel_filename,
    parse_mosaic_payload,
    save_png,
)
from .records import MetricRecord
from .store import RunWriter, SidecarBundle, atomic_write_json, dumps, load_run

log = logging.getLogger("litmetrics")

EXIT_OK, EXIT_PARTIAL, EXIT_USAGE = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="litmetrics", description="Extract battery metrics from parsed articles.")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("ingest", help="validate bundles and print a corpus summary")
    p.add_argument("--corpus", type=Path)
    p.add_argument("--config", type=Path)
    p.add_argument("--json", action="store_true")

    p = sub.add_parser("extract", help="run the pipeline over a corpus")
    p.add_argument("--config", type=Path, required=True)
    p.add_argument("--corpus", type=Path)
    p.add_argument("--out", type=Path)
    p.add_argument("--workers", type=int)
    p.add_argument("--force", action="store_true", help="reprocess documents already marked ok")
    p.add_argument("--json", action="store_true")

    p = sub.add_parser("eval", help="score a run against ground truth")
    p.add_argument("--run", type=Path, required=True)
    p.add_argument("--truth", type=Path, required=True)
    p.add_argument("--tolerance", type=float)
    p.add_argument("--config", type=Path, help="take the tolerance from this run config")
    p.add_argument("--json", action="store_true")

    p = sub.add_parser("report", help="source distribution and image-normalizer stage metrics")
    p.add_argument("--truth", type=Path)
    p.add_argument("--annotations", type=Path, help="CSV/JSONL with crop_correct and classifier_correct")
    p.add_argument("--crop", type=float, help="crop accuracy as a fraction")
    p.add_argument("--classifier", type=float, help="classifier accuracy given a correct crop")
    p.add_argument("--json", action="store_true")

    p = sub.add_parser("mosaic-debug", help="normalize one figure and write its panels")
    p.add_argument("--image", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--config", type=Path, help="ask the configured VLM for the mosaic spec")
    src.add_argument("--spec", help="mosaic JSON object, inline or a path to a file")
    p.add_argument("--figure-id", default=None)
    p.add_argument("--threshold", type=float, help="aspect-ratio threshold")
    return parser


# ---------------------------------------------------------------- commands


def cmd_ingest(args) -> int:
    corpus = args.corpus
    if corpus is None:
        if args.config is None:
            raise ConfigError("ingest needs --corpus or --config")
        corpus = load_run_config(args.config).corpus
    bundles, errors = load_corpus(corpus)
    summary = {
        "corpus": str(corpus),
        "documents": len(bundles),
        "figures": sum(len(b.figures) for b in bundles),
        "characters": sum(len(b.markdown) for b in bundles),
        "bundles": [
            {"doc_id": b.doc_id, "figures": len(b.figures), "characters": len(b.markdown)} for b in bundles
        ],
        "errors": errors,
    }
    if args.json:
        sys.stdout.write(dumps(summary))
    else:
        print(f"corpus {corpus}: {len(bundles)} documents, {summary['figures']} figures, {summary['characters']} characters")
        for b in summary["bundles"]:
            print(f"  {b['doc_id']}: {b['figures']} figures, {b['characters']} chars")
        for doc, msg in errors.items():
            print(f"  {doc}: INGEST ERROR {msg}", file=sys.stderr)
    return EXIT_PARTIAL if errors else EXIT_OK


def _apply_extract_flags(cfg: RunConfig, args) -> RunConfig:
    if args.corpus is not None:
        cfg.corpus = args.corpus
    if args.out is not None:
        cfg.output = args.out
    if args.workers is not None:
        cfg.workers = args.workers
    cfg.validate()
    return cfg


def cmd_extract(args) -> int:
    cfg = _apply_extract_flags(load_run_config(args.config), args)
    bundles, ingest_errors = load_corpus(cfg.corpus)
    for doc, msg in ingest_errors.items():
        print(f"{doc}: ingest error: {msg}", file=sys.stderr)
    writer = RunWriter(cfg.output, config=cfg.snapshot())
    todo = [b for b in bundles if args.force or not writer.is_done(b.doc_id)]
    skipped = len(bundles) - len(todo)

    statuses: dict[str, str] = {}
    with ChatGateway() as gateway:

        def process(bundle):
            try:
                result = run_pipeline(bundle, cfg.domain_knowledge, cfg.vlm, cfg.llm, gateway, cfg.chunk_workers)
            except Exception as exc:  # one bad document must not sink the run
                log.exception("%s: pipeline crashed", bundle.doc_id)
                side = SidecarBundle(errors=[{"stage": "pipeline", "error": f"{type(exc).__name__}: {exc}"}])
                return bundle.doc_id, writer.store(bundle.doc_id, MetricRecord(doc_id=bundle.doc_id), side, "failed")
            return bundle.doc_id, writer.store(bundle.doc_id, result.record, result.sidecars, result.status)

        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            for doc_id, status in pool.map(process, todo):
                statuses[doc_id] = status
    manifest = writer.finalize()

    failed = sorted(d for d, s in statuses.items() if s == "failed")
    summary = {
        "run_dir": str(cfg.output),
        "run_id": manifest.run_id,
        "processed": len(todo),
        "skipped": skipped,
        "status": dict(sorted(statuses.items())),
        "ingest_errors": ingest_errors,
    }
    if args.json:
        sys.stdout.write(dumps(summary))
    else:
        counts = {s: list(statuses.values()).count(s) for s in ("ok", "partial", "failed")}
        print(
            f"run {manifest.run_id} -> {cfg.output}: processed {len(todo)}, skipped {skipped}, "
            f"ok {counts['ok']}, partial {counts['partial']}, failed {counts['failed']}"
        )
        for d in failed:
            print(f"  failed: {d}", file=sys.stderr)
    return EXIT_PARTIAL if failed or ingest_errors else EXIT_OK


def cmd_eval(args) -> int:
    tolerance = args.tolerance
    if tolerance is None and args.config is not None:
        tolerance = load_run_config(args.config).domain_knowledge.tolerance_pct
    if tolerance is None:
        tolerance = 3.0
    run = load_run(args.run)
    truths = load_ground_truth(args.truth)
    report = score_accuracy(run.records, truths, tolerance)
    if args.json:
        out = report.to_dict()
        out["load_problems"] = dict(sorted(run.problems.items()))
        sys.stdout.write(dumps(out))
    else:
        sys.stdout.write(report.format_table())
    for doc_id, problem in sorted(run.problems.items()):
        print(f"{doc_id}: {problem}", file=sys.stderr)
    return EXIT_OK


def cmd_report(args) -> int:
    if args.truth is None and args.annotations is None and args.crop is None:
        raise ConfigError("report needs --truth, --annotations or --crop/--classifier")
    out: dict = {}
    text = []
    if args.truth is not None:
        truths = load_ground_truth(args.truth)
        dist = source_distribution(truths)
        out["source_distribution"] = dist
        out["source_counts"] = dict(source_counts(truths))
        text.append(format_distribution(dist))
    if args.annotations is not None:
        stages = stage_metrics_from_annotations(load_annotations(args.annotations))
        out["stages"] = stages.to_dict()
        crop, cls = stages.crop_accuracy, stages.classifier_accuracy
    elif args.crop is not None:
        if args.classifier is None:
            raise ConfigError("--crop needs --classifier")
        crop, cls = args.crop, args.classifier
        out["stages"] = {"crop_accuracy": crop, "classifier_accuracy": cls, "combined": combined_stage_accuracy(crop, cls)}
    if "stages" in out:
        s = out["stages"]
        text.append(
            f"Crop accuracy {s['crop_accuracy'] * 100:.2f}%\n"
            f"Classifier accuracy {s['classifier_accuracy'] * 100:.2f}%\n"
            f"Combined {s['combined'] * 100:.2f}%\n"
        )
    sys.stdout.write(dumps(out) if args.json else "\n".join(text))
    return EXIT_OK


def _read_spec_arg(spec: str) -> dict:
    p = Path(spec)
    raw = p.read_text(encoding="utf-8") if p.is_file() else spec
    try:
        return json.loads(raw)
    except json.JSONDecodeError as exc:
        raise InputError(f"--spec is neither a JSON file nor inline JSON: {exc}") from exc


def cmd_mosaic_debug(args) -> int:
    image = load_image(args.image)
    figure_id = args.figure_id or args.image.stem
    threshold = args.threshold
    raw_payload = None
    if args.config is not None:
        cfg = load_run_config(args.config)
        dk = cfg.domain_knowledge
        threshold = threshold if threshold is not None else dk.aspect_ratio_threshold
        with ChatGateway() as gateway:
            resp = gateway.complete_chat(
                cfg.vlm,
                ChatRequest(dk.mosaic_prompt, (ImagePart.from_array(image, cfg.vlm.jpeg_quality),), "json"),
            )
        raw_payload = resp.raw_text
        payload = resp.parsed_json if resp.parsed_json is not None else extract_json_payload(resp.raw_text)
    else:
        payload = _read_spec_arg(args.spec)
    spec = parse_mosaic_payload(payload)
    norm = normalize_figure(image, spec, threshold if threshold is not None else 1.6)
    panels = []
    for k, panel in enumerate(norm.panels, start=1):
        path = save_png(panel, args.out / panel_filename(figure_id, k))
        panels.append(path.name)
    info = {
        "figure_id": figure_id,
        "payload": payload,
        "raw_response": raw_payload,
        "parsed": spec.to_dict(),
        "normalized": norm.spec.to_dict(),
        "relevant": spec.relevant,
        "target_index": norm.target_index,
        "panels": panels,
    }
    atomic_write_json(args.out / f"{figure_id}.mosaic.json", info)
    print(
        f"{figure_id}: grid {spec.rows}x{spec.cols} -> {norm.spec.rows}x{norm.spec.cols}, rotation {spec.rotation}, "
        f"relevant {spec.relevant}, target {norm.target_index}, {len(panels)} panels written to {args.out}"
    )
    return EXIT_OK


COMMANDS = {
    "ingest": cmd_ingest,
    "extract": cmd_extract,
    "eval": cmd_eval,
    "report": cmd_report,
    "mosaic-debug": cmd_mosaic_debug,
}


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, LoadError, InputError) as exc:
        print(f"litmetrics {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except LitMetricsError as exc:
        print(f"litmetrics {args.command}: {exc}", file=sys.stderr)
        return EXIT_PARTIAL


def dispatch(argv: Sequence[str]) -> int:
    """Run one command, converting argparse's SystemExit into an exit code."""
    try:
        return main(argv)
    except SystemExit as exc:
        return int(exc.code) if isinstance(exc.code, int) else EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
