"""Run directories: per-document records, provenance sidecars and the run manifest.

Layout::

    <run>/
        manifest.json
        manifest.log              # append-only status log, folded into manifest.json at finalize
        <doc_id>/
            record.json
            provenance.json
            errors.json
            mosaic/<figure_id>.json
            panels/<figure_id>_panel_<k>.png
            payloads/<name>.json

Every file is written to a temporary sibling and renamed into place.
"""

from __future__ import annotations

import json
import logging
import os
import tempfile
import threading
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any

import numpy as np

from .errors import LoadError, StorageError
from .mosaic import encode_png
from .records import MetricRecord

log = logging.getLogger(__name__)

MANIFEST = "manifest.json"
MANIFEST_LOG = "manifest.log"
STATUSES = ("ok", "partial", "failed")


@dataclass
class SidecarBundle:
    mosaic: dict[str, dict[str, Any]] = field(default_factory=dict)  # figure_id -> raw/normalized spec
    panels: dict[str, np.ndarray] = field(default_factory=dict)  # file name -> pixels
    payloads: dict[str, dict[str, Any]] = field(default_factory=dict)  # name -> request digest + response
    errors: list[dict[str, Any]] = field(default_factory=list)

    @staticmethod
    def payload_path(name: str) -> str:
        return f"payloads/{name}.json"


@dataclass
class RunManifest:
    run_id: str
    timestamp: str = ""
    config: dict[str, Any] = field(default_factory=dict)
    documents: list[str] = field(default_factory=list)
    status: dict[str, str] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return {
            "run_id": self.run_id,
            "timestamp": self.timestamp,
            "config": self.config,
            "documents": list(self.documents),
            "status": {d: self.status[d] for d in self.documents if d in self.status},
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "RunManifest":
        return cls(
            run_id=str(d.get("run_id", "")),
            timestamp=str(d.get("timestamp", "")),
            config=dict(d.get("config") or {}),
            documents=list(d.get("documents") or []),
            status=dict(d.get("status") or {}),
        )

    def set_status(self, doc_id: str, status: str) -> None:
        if status not in STATUSES:
            raise ValueError(f"unknown status {status!r}")
        if doc_id not in self.documents:
            self.documents.append(doc_id)
        self.status[doc_id] = status


def dumps(obj: Any) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, ensure_ascii=False) + "\n"


def _rename(src: str, dst: Path) -> None:
    os.replace(src, dst)


def atomic_write_bytes(path: Path, data: bytes) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        _rename(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def atomic_write_json(path: Path, obj: Any) -> Path:
    return atomic_write_bytes(path, dumps(obj).encode("utf-8"))


def write_record_bundle(
    run_dir: str | Path, doc_id: str, record: MetricRecord, sidecars: SidecarBundle
) -> dict[str, list[Path]]:
    """Persist one document. Returns written paths grouped by artifact kind."""
    doc_dir = Path(run_dir) / doc_id
    written: dict[str, list[Path]] = {"record": [], "provenance": [], "mosaic": [], "panels": [], "payloads": []}
    try:
        for figure_id, spec in sidecars.mosaic.items():
            written["mosaic"].append(atomic_write_json(doc_dir / "mosaic" / f"{figure_id}.json", spec))
        for name, pixels in sidecars.panels.items():
            written["panels"].append(atomic_write_bytes(doc_dir / "panels" / name, encode_png(pixels)))
        for name, payload in sidecars.payloads.items():
            written["payloads"].append(atomic_write_json(doc_dir / SidecarBundle.payload_path(name), payload))
        if sidecars.errors:
            atomic_write_json(doc_dir / "errors.json", sidecars.errors)
        provenance = {
            "doc_id": doc_id,
            "fields": {k: v.to_dict() for k, v in sorted(record.provenance.items())},
            "payloads": sorted(SidecarBundle.payload_path(n) for n in sidecars.payloads),
            "mosaic": sorted(f"mosaic/{f}.json" for f in sidecars.mosaic),
            "panels": sorted(f"panels/{n}" for n in sidecars.panels),
        }
        written["provenance"].append(atomic_write_json(doc_dir / "provenance.json", provenance))
        written["record"].append(atomic_write_json(doc_dir / "record.json", record.to_dict()))
    except OSError as exc:
        raise StorageError(f"cannot write {doc_dir}: {exc}") from exc
    return written


def read_record(path: str | Path) -> MetricRecord:
    return MetricRecord.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


class RunWriter:
    """Single writer for a run's manifest; document status goes through an append log."""

    def __init__(self, run_dir: str | Path, run_id: str | None = None, config: dict[str, Any] | None = None):
        self.run_dir = Path(run_dir)
        self._lock = threading.Lock()
        try:
            self.run_dir.mkdir(parents=True, exist_ok=True)
            if (self.run_dir / MANIFEST).exists():
                self.manifest = _read_manifest(self.run_dir)
                if config:
                    self.manifest.config = config
            else:
                self.manifest = RunManifest(
                    run_id=run_id or self.run_dir.name,
                    timestamp=datetime.now(timezone.utc).isoformat(timespec="seconds"),
                    config=config or {},
                )
            self.finalize()
        except OSError as exc:
            raise StorageError(f"cannot initialise run directory {self.run_dir}: {exc}") from exc

    def is_done(self, doc_id: str) -> bool:
        return self.manifest.status.get(doc_id) == "ok"

    def record_status(self, doc_id: str, status: str) -> None:
        with self._lock:
            self.manifest.set_status(doc_id, status)
            line = json.dumps({"doc_id": doc_id, "status": status}) + "\n"
            try:
                with open(self.run_dir / MANIFEST_LOG, "a", encoding="utf-8") as fh:
                    fh.write(line)
            except OSError as exc:
                log.error("cannot append to manifest log: %s", exc)

    def store(self, doc_id: str, record: MetricRecord, sidecars: SidecarBundle, status: str) -> str:
        """Write a document and log its status; storage failures mark it failed."""
        try:
            write_record_bundle(self.run_dir, doc_id, record, sidecars)
        except StorageError as exc:
            log.error("%s", exc)
            status = "failed"
        self.record_status(doc_id, status)
        return status

    def finalize(self) -> RunManifest:
        with self._lock:
            atomic_write_json(self.run_dir / MANIFEST, self.manifest.to_dict())
            log_path = self.run_dir / MANIFEST_LOG
            if log_path.exists():
                log_path.unlink()
            return self.manifest


def _read_manifest(run_dir: Path) -> RunManifest:
    path = run_dir / MANIFEST
    if not path.is_file():
        raise LoadError(f"{run_dir}: no {MANIFEST}")
    try:
        manifest = RunManifest.from_dict(json.loads(path.read_text(encoding="utf-8")))
    except json.JSONDecodeError as exc:
        raise LoadError(f"{path}: invalid JSON ({exc})") from exc
    log_path = run_dir / MANIFEST_LOG
    if log_path.is_file():
        # a run that did not reach finalize(); replay its status log
        for line in log_path.read_text(encoding="utf-8").splitlines():
            try:
                entry = json.loads(line)
                manifest.set_status(entry["doc_id"], entry["status"])
            except (json.JSONDecodeError, KeyError, ValueError):
                continue
    return manifest


@dataclass
class LoadedRun:
    manifest: RunManifest
    records: list[MetricRecord]
    problems: dict[str, str] = field(default_factory=dict)


def load_run(run_dir: str | Path) -> LoadedRun:
    """Manifest plus every readable record, in manifest order. Unreadable records are reported."""
    run_dir = Path(run_dir)
    manifest = _read_manifest(run_dir)
    records: list[MetricRecord] = []
    problems: dict[str, str] = {}
    for doc_id in manifest.documents:
        path = run_dir / doc_id / "record.json"
        if not path.is_file():
            problems[doc_id] = "record.json missing"
            continue
        try:
            rec = read_record(path)
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            problems[doc_id] = f"corrupt record.json: {exc}"
            continue
        if rec.doc_id is None:
            rec = MetricRecord.from_dict({**rec.to_dict(), "doc_id": doc_id})
        records.append(rec)
    return LoadedRun(manifest, records, problems)
