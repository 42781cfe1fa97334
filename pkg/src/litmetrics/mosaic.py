"""Mosaic layouts, grid correction, panel splitting and rotation.

Images are numpy arrays shaped ``(height, width)`` or ``(height, width, channels)``.
"""

from __future__ import annotations

import io
import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any

import numpy as np
from PIL import Image

from .errors import MosaicFormatError, MosaicLayoutError, ParameterError, SplitError

log = logging.getLogger(__name__)

ROTATIONS = (0, 90, 180, 270)
DEFAULT_RATIO_THRESHOLD = 1.6


@dataclass(frozen=True)
class MosaicSpec:
    rows: int = 1
    cols: int = 1
    panel_labels: tuple[str, ...] = ()
    target_panel: str | None = None
    # as predicted: 0 means at least one panel is relevant
    is_target: int = 0
    rotation: int = 0

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise MosaicFormatError(f"grid must be at least 1x1, got {self.rows}x{self.cols}")
        if self.rotation not in ROTATIONS:
            raise MosaicFormatError(f"rotation must be one of {ROTATIONS}, got {self.rotation}")
        if self.is_target not in (0, 1):
            raise MosaicFormatError(f"is_target must be 0 or 1, got {self.is_target}")

    @property
    def relevant(self) -> bool:
        return self.is_target == 0

    @property
    def n_cells(self) -> int:
        return self.rows * self.cols

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["panel_labels"] = list(self.panel_labels)
        return d


@dataclass(frozen=True)
class PanelRegion:
    label: str
    row_span: tuple[int, int]  # half-open grid rows
    col_span: tuple[int, int]
    pixel_box: tuple[int, int, int, int] | None = None  # x, y, width, height


def _as_int(value: Any, name: str, default: int | None = None) -> int:
    if value is None:
        if default is None:
            raise MosaicFormatError(f"missing {name!r}")
        return default
    if isinstance(value, bool):
        return int(value)
    try:
        as_float = float(value)
    except (TypeError, ValueError):
        raise MosaicFormatError(f"{name!r} is not an integer: {value!r}") from None
    if as_float != int(as_float):
        raise MosaicFormatError(f"{name!r} is not an integer: {value!r}")
    return int(as_float)


def parse_mosaic_payload(payload: Any) -> MosaicSpec:
    """Validate the JSON object returned for the mosaic prompt."""
    if not isinstance(payload, dict):
        raise MosaicFormatError(f"mosaic payload must be a JSON object, got {type(payload).__name__}")
    labels = payload.get("panel_labels") or []
    if not isinstance(labels, list):
        raise MosaicFormatError("panel_labels must be a list")
    target = payload.get("target_panel")
    if target is not None:
        target = str(target).strip() or None
    rotation = _as_int(payload.get("rotation"), "rotation", 0) % 360
    return MosaicSpec(
        rows=_as_int(payload.get("rows"), "rows", 1),
        cols=_as_int(payload.get("cols"), "cols", 1),
        panel_labels=tuple(str(l).strip() for l in labels if str(l).strip()),
        target_panel=target,
        is_target=_as_int(payload.get("is_target"), "is_target", 0),
        rotation=rotation,
    )


def resolve_target_panel(spec: MosaicSpec) -> int | None:
    """0-based reading-order index of the target panel, or None when it cannot be resolved.

    Labels match case-insensitively; purely numeric targets are 1-based indices.
    """
    target = spec.target_panel
    if target is None:
        return 0 if spec.n_cells == 1 else None
    lowered = [l.lower() for l in spec.panel_labels]
    t = target.strip().strip("()").lower()
    if t in lowered:
        idx = lowered.index(t)
    elif t.isdigit():
        idx = int(t) - 1
    else:
        return None
    return idx if 0 <= idx < spec.n_cells else None


def parse_mosaic_string(s: str, image_size: tuple[int, int] | None = None) -> list[PanelRegion]:
    """Parse a character-grid layout such as ``"ac\\nbc\\ndd"``.

    Regions are returned in order of first appearance (reading order). When
    ``image_size`` ``(width, height)`` is given, each region also gets the
    pixel box it covers under the uniform grid used by :func:`split_panels`.
    """
    lines = [ln.strip() for ln in s.strip().strip("'\"").splitlines()]
    lines = [ln for ln in lines if ln]
    if not lines:
        raise MosaicFormatError("empty mosaic string")
    ncols = len(lines[0])
    if any(len(ln) != ncols for ln in lines):
        raise MosaicFormatError("ragged mosaic: all lines must have equal length")
    nrows = len(lines)

    cells: dict[str, list[tuple[int, int]]] = {}
    for r, line in enumerate(lines):
        for c, ch in enumerate(line):
            cells.setdefault(ch, []).append((r, c))

    regions = []
    for label, members in cells.items():
        rs = [r for r, _ in members]
        cs = [c for _, c in members]
        r0, r1, c0, c1 = min(rs), max(rs) + 1, min(cs), max(cs) + 1
        if (r1 - r0) * (c1 - c0) != len(members):
            raise MosaicLayoutError(label)
        box = None
        if image_size is not None:
            width, height = image_size
            x0, x1 = grid_boundary(c0, width, ncols), grid_boundary(c1, width, ncols)
            y0, y1 = grid_boundary(r0, height, nrows), grid_boundary(r1, height, nrows)
            box = (x0, y0, x1 - x0, y1 - y0)
        regions.append(PanelRegion(label, (r0, r1), (c0, c1), box))
    return regions


def _round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


def _nearest_square_grid(k: int, width: int, height: int) -> tuple[int, int]:
    """Grid for ``k`` panels whose cells are closest to square.

    Only compact grids qualify: no row or column may be left entirely empty.
    """
    best: tuple[float, int, int, int] | None = None
    for r in range(1, k + 1):
        for cc in range(-(-k // r), k + 1):
            if (r - 1) * cc >= k or r * (cc - 1) >= k:
                continue
            aspect = (width / cc) / (height / r)
            key = (abs(aspect - 1.0), r, r * cc, cc)
            if best is None or key < best:
                best = key
    assert best is not None
    return best[1], best[3]


def normalize_mosaic_spec(
    spec: MosaicSpec, image_size: tuple[int, int], ratio_threshold: float = DEFAULT_RATIO_THRESHOLD
) -> MosaicSpec:
    """Correct a 1x1 grid that contradicts the labels or the image shape.

    ``image_size`` is ``(width, height)`` of the upright figure.
    """
    width, height = image_size
    if width <= 0 or height <= 0:
        raise ParameterError(f"image dimensions must be positive, got {image_size}")
    if spec.n_cells != 1:
        return spec
    k = len(spec.panel_labels)
    if k > 1:
        rows, cols = _nearest_square_grid(k, width, height)
        return replace(spec, rows=rows, cols=cols)
    if k == 0:
        if width / height > ratio_threshold:
            return replace(spec, cols=max(1, _round_half_up(width / height)))
        if height / width > ratio_threshold:
            return replace(spec, rows=max(1, _round_half_up(height / width)))
    return spec


def grid_boundary(i: int, extent: int, parts: int) -> int:
    """Pixel position of the i-th grid line, ``round(i * extent / parts)`` with halves rounded up."""
    return (2 * i * extent + parts) // (2 * parts)


def split_panels(image: np.ndarray, rows: int, cols: int) -> list[np.ndarray]:
    """Uniform split into ``rows * cols`` panels, left-to-right then top-to-bottom."""
    if rows < 1 or cols < 1:
        raise SplitError(f"grid must be at least 1x1, got {rows}x{cols}")
    height, width = image.shape[:2]
    if rows > height or cols > width:
        raise SplitError(f"cannot split a {width}x{height} image into {rows}x{cols} panels")
    ys = [grid_boundary(i, height, rows) for i in range(rows + 1)]
    xs = [grid_boundary(j, width, cols) for j in range(cols + 1)]
    return [image[ys[r] : ys[r + 1], xs[c] : xs[c + 1]].copy() for r in range(rows) for c in range(cols)]


def assemble_panels(panels: list[np.ndarray], rows: int, cols: int) -> np.ndarray:
    """Inverse of :func:`split_panels`."""
    if len(panels) != rows * cols:
        raise SplitError(f"expected {rows * cols} panels, got {len(panels)}")
    return np.concatenate(
        [np.concatenate(panels[r * cols : (r + 1) * cols], axis=1) for r in range(rows)], axis=0
    )


def rotate_image(image: np.ndarray, angle: int) -> np.ndarray:
    """Rotate clockwise by a multiple of 90 degrees.

    For 90 degrees, source pixel (x, y) lands at (H - 1 - y, x).
    """
    if angle not in ROTATIONS:
        raise ParameterError(f"rotation must be one of {ROTATIONS}, got {angle!r}")
    if angle == 0:
        return image.copy()
    return np.ascontiguousarray(np.rot90(image, k=-(angle // 90), axes=(0, 1)))


def crop_box(image: np.ndarray, box: tuple[int, int, int, int]) -> np.ndarray:
    x, y, w, h = box
    return image[y : y + h, x : x + w].copy()


# ---------------------------------------------------------------- image io


def load_image(path: str | Path) -> np.ndarray:
    with Image.open(path) as im:
        if im.mode not in ("L", "RGB", "RGBA"):
            im = im.convert("RGB")
        return np.asarray(im).copy()


def save_png(image: np.ndarray, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(image).save(path, format="PNG")
    return path


def encode_png(image: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(image).save(buf, format="PNG")
    return buf.getvalue()


def panel_filename(figure_id: str, k: int) -> str:
    return f"{figure_id}_panel_{k}.png"


@dataclass
class NormalizedFigure:
    raw_spec: MosaicSpec
    spec: MosaicSpec
    panels: list[np.ndarray] = field(default_factory=list)
    target_index: int | None = None

    @property
    def target(self) -> np.ndarray | None:
        if self.target_index is None:
            return None
        return self.panels[self.target_index]


def normalize_figure(
    image: np.ndarray, raw_spec: MosaicSpec, ratio_threshold: float = DEFAULT_RATIO_THRESHOLD
) -> NormalizedFigure:
    """Rotate the whole figure upright, fix the grid, then split it."""
    upright = rotate_image(image, raw_spec.rotation)
    h, w = upright.shape[:2]
    spec = normalize_mosaic_spec(raw_spec, (w, h), ratio_threshold)
    rows, cols = min(spec.rows, h), min(spec.cols, w)
    if (rows, cols) != (spec.rows, spec.cols):
        log.warning("grid %dx%d exceeds a %dx%d image; clamped", spec.rows, spec.cols, w, h)
        spec = replace(spec, rows=rows, cols=cols)
    panels = split_panels(upright, spec.rows, spec.cols)
    return NormalizedFigure(raw_spec, spec, panels, resolve_target_panel(spec))
