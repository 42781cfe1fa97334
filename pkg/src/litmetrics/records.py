"""The extracted metric record and its per-field provenance."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Any

METRIC_FIELDS = (
    "voltage_min",
    "voltage_max",
    "voltage_range",
    "discharge_capacity",
    "charge_capacity",
    "coulombic_efficiency_pct",
)
SOURCES = ("chart", "table", "text")


@dataclass(frozen=True)
class Provenance:
    source: str  # chart | table | text
    figure_id: str | None = None
    chunk_index: int | None = None
    model_name: str | None = None
    artifact: str | None = None  # path of the sidecar payload, relative to the document directory
    derived_from: tuple[str, ...] = ()

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["derived_from"] = list(self.derived_from)
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "Provenance":
        return cls(
            source=d["source"],
            figure_id=d.get("figure_id"),
            chunk_index=d.get("chunk_index"),
            model_name=d.get("model_name"),
            artifact=d.get("artifact"),
            derived_from=tuple(d.get("derived_from") or ()),
        )


@dataclass(frozen=True)
class MetricRecord:
    doc_id: str | None = None
    voltage_min: float | None = None
    voltage_max: float | None = None
    voltage_range: str | None = None
    discharge_capacity: float | None = None
    charge_capacity: float | None = None
    coulombic_efficiency_pct: float | None = None
    provenance: dict[str, Provenance] = field(default_factory=dict)

    def value(self, name: str) -> Any:
        return getattr(self, name)

    def filled(self) -> list[str]:
        return [f for f in METRIC_FIELDS if getattr(self, f) is not None]

    def missing(self) -> list[str]:
        return [f for f in METRIC_FIELDS if getattr(self, f) is None]

    def is_empty(self) -> bool:
        return not self.filled()

    def problems(self) -> list[str]:
        """Invariant violations; an empty list means the record is consistent."""
        out = []
        lo, hi = self.voltage_min, self.voltage_max
        if lo is not None and hi is not None:
            if not lo < hi:
                out.append(f"voltage_min {lo} is not below voltage_max {hi}")
            if self.voltage_range != format_voltage_range(lo, hi):
                out.append(f"voltage_range {self.voltage_range!r} disagrees with min/max")
        for name in ("discharge_capacity", "charge_capacity"):
            v = getattr(self, name)
            if v is not None and v < 0:
                out.append(f"{name} is negative")
        ce = self.coulombic_efficiency_pct
        if ce is not None and not 0 < ce < 200:
            out.append(f"coulombic_efficiency_pct {ce} outside (0, 200)")
        for name in self.filled():
            if name not in self.provenance:
                out.append(f"{name} has no provenance")
        return out

    def to_dict(self) -> dict[str, Any]:
        d: dict[str, Any] = {"doc_id": self.doc_id}
        for name in METRIC_FIELDS:
            d[name] = getattr(self, name)
        d["provenance"] = {k: self.provenance[k].to_dict() for k in METRIC_FIELDS if k in self.provenance}
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "MetricRecord":
        kwargs: dict[str, Any] = {"doc_id": d.get("doc_id")}
        for name in METRIC_FIELDS:
            v = d.get(name)
            if v is not None and name != "voltage_range":
                v = float(v)
            kwargs[name] = v
        kwargs["provenance"] = {k: Provenance.from_dict(v) for k, v in (d.get("provenance") or {}).items()}
        return cls(**kwargs)


def format_voltage_range(lo: float, hi: float) -> str:
    return f"{float(lo)!r}-{float(hi)!r}"
