import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from litmetrics.errors import MosaicFormatError, MosaicLayoutError, ParameterError, SplitError
from litmetrics.mosaic import (
    MosaicSpec,
    assemble_panels,
    crop_box,
    load_image,
    normalize_figure,
    normalize_mosaic_spec,
    parse_mosaic_payload,
    parse_mosaic_string,
    resolve_target_panel,
    rotate_image,
    save_png,
    split_panels,
)


def half_up(x: Fraction) -> int:
    return math.floor(x + Fraction(1, 2))


def rectangle_oracle(grid: list[str]) -> dict[str, bool]:
    """Each label is a rectangle iff its cell set equals its bounding-box cell set."""
    cells = {}
    for r, row in enumerate(grid):
        for c, ch in enumerate(row):
            cells.setdefault(ch, set()).add((r, c))
    out = {}
    for label, cs in cells.items():
        rs = [r for r, _ in cs]
        cols = [c for _, c in cs]
        box = {(r, c) for r in range(min(rs), max(rs) + 1) for c in range(min(cols), max(cols) + 1)}
        out[label] = box == cs
    return out


def rot90_cw_oracle(img):
    h, w = img.shape[:2]
    out = np.empty((w, h) + img.shape[2:], dtype=img.dtype)
    for y in range(h):
        for x in range(w):
            out[x, h - 1 - y] = img[y, x]
    return out


# ---------------------------------------------------------------- mosaic strings


def test_figure2_mosaic_regions():
    regions = {r.label: (r.row_span, r.col_span) for r in parse_mosaic_string("ac\nbc\ndd")}
    assert regions == {
        "a": ((0, 1), (0, 1)),
        "b": ((1, 2), (0, 1)),
        "c": ((0, 2), (1, 2)),
        "d": ((2, 3), (0, 2)),
    }


def test_figure2_mosaic_with_quotes_and_indent():
    regions = parse_mosaic_string("'''\n    ac\n    bc\n    dd\n'''")
    assert [r.label for r in regions] == ["a", "c", "b", "d"]


def test_single_panel_covers_grid():
    (region,) = parse_mosaic_string("a", image_size=(300, 200))
    assert region.row_span == (0, 1) and region.col_span == (0, 1)
    assert region.pixel_box == (0, 0, 300, 200)


def test_non_rectangular_label_rejected():
    assert rectangle_oracle(["ab", "ba"]) == {"a": False, "b": False}
    with pytest.raises(MosaicLayoutError) as info:
        parse_mosaic_string("ab\nba")
    assert info.value.label == "a"


def test_ragged_mosaic_rejected():
    with pytest.raises(MosaicFormatError, match="ragged"):
        parse_mosaic_string("ab\nb")


def test_pixel_boxes_match_split():
    regions = parse_mosaic_string("ac\nbc\ndd", image_size=(601, 300))
    img = np.arange(300 * 601, dtype=np.int64).reshape(300, 601)
    panels = split_panels(img, 3, 2)
    a = next(r for r in regions if r.label == "a")
    np.testing.assert_array_equal(crop_box(img, a.pixel_box), panels[0])
    d = next(r for r in regions if r.label == "d")
    np.testing.assert_array_equal(crop_box(img, d.pixel_box), np.concatenate(panels[4:6], axis=1))


@settings(max_examples=300, deadline=None)
@given(
    rows=st.integers(1, 4),
    cols=st.integers(1, 4),
    data=st.data(),
)
def test_mosaic_parse_agrees_with_rectangle_oracle(rows, cols, data):
    grid = ["".join(data.draw(st.sampled_from("abc")) for _ in range(cols)) for _ in range(rows)]
    ok = rectangle_oracle(grid)
    if all(ok.values()):
        regions = parse_mosaic_string("\n".join(grid))
        covered = np.zeros((rows, cols), dtype=int)
        for reg in regions:
            covered[reg.row_span[0] : reg.row_span[1], reg.col_span[0] : reg.col_span[1]] += 1
        assert (covered == 1).all()
        assert {r.label for r in regions} == set(ok)
    else:
        with pytest.raises(MosaicLayoutError) as info:
            parse_mosaic_string("\n".join(grid))
        assert ok[info.value.label] is False


# ---------------------------------------------------------------- grid normalization


def best_grid_oracle(k, width, height):
    # enough cells, but dropping any row or column would leave too few
    candidates = [
        (r, c) for r in range(1, 3 * k) for c in range(1, 3 * k) if r * c >= k and (r - 1) * c < k and r * (c - 1) < k
    ]
    # nearest-to-square panel, then fewer rows, then fewer cells
    return min(candidates, key=lambda rc: (abs((width / rc[1]) / (height / rc[0]) - 1), rc[0], rc[0] * rc[1]))


def test_labels_imply_square_grid():
    spec = MosaicSpec(1, 1, ("a", "b", "c", "d"))
    assert best_grid_oracle(4, 1000, 1000) == (2, 2)
    out = normalize_mosaic_spec(spec, (1000, 1000))
    assert (out.rows, out.cols) == (2, 2)
    assert out.panel_labels == spec.panel_labels


def test_labels_never_leave_empty_rows_or_columns():
    out = normalize_mosaic_spec(MosaicSpec(1, 1, ("a", "b", "c", "d")), (400, 300))
    assert (out.rows, out.cols) == (2, 2)
    out = normalize_mosaic_spec(MosaicSpec(1, 1, ("a", "b", "c")), (1000, 1000))
    assert (out.rows, out.cols) == (2, 2)


def test_consistent_grid_unchanged():
    spec = MosaicSpec(2, 2, ("a", "b", "c", "d"))
    assert normalize_mosaic_spec(spec, (1000, 1000)) == spec


def test_wide_unlabelled_image_split_by_aspect():
    out = normalize_mosaic_spec(MosaicSpec(), (3000, 1000), 1.6)
    assert (out.rows, out.cols) == (1, 3)


def test_tall_unlabelled_image_split_by_aspect():
    out = normalize_mosaic_spec(MosaicSpec(), (1000, 2500), 1.6)
    assert (out.rows, out.cols) == (3, 1)  # round half up: 2.5 -> 3


def test_mild_aspect_left_alone():
    assert normalize_mosaic_spec(MosaicSpec(), (1500, 1000), 1.6) == MosaicSpec()


@settings(max_examples=300, deadline=None)
@given(
    k=st.integers(0, 9),
    rows=st.integers(1, 3),
    cols=st.integers(1, 3),
    w=st.integers(1, 4000),
    h=st.integers(1, 4000),
    thr=st.floats(1.05, 4.0),
)
def test_normalize_idempotent_and_matches_oracle(k, rows, cols, w, h, thr):
    spec = MosaicSpec(rows, cols, tuple("abcdefghi"[:k]))
    once = normalize_mosaic_spec(spec, (w, h), thr)
    assert normalize_mosaic_spec(once, (w, h), thr) == once
    if rows * cols == 1 and k > 1:
        assert (once.rows, once.cols) == best_grid_oracle(k, w, h)
        assert once.rows * once.cols >= k


def test_payload_parsing_and_relevance_polarity():
    spec = parse_mosaic_payload(
        {"rows": 2, "cols": "2", "panel_labels": ["a", "b", "c", "d"], "target_panel": "B", "is_target": 0, "rotation": 90}
    )
    assert spec.relevant and spec.rotation == 90
    assert resolve_target_panel(spec) == 1
    assert not parse_mosaic_payload({"rows": 1, "cols": 1, "is_target": 1}).relevant


@pytest.mark.parametrize(
    "payload",
    [
        {"rows": 0, "cols": 1},
        {"rows": 1, "cols": 1, "rotation": 45},
        {"rows": 1.5, "cols": 1},
        {"rows": 1, "cols": 1, "is_target": 2},
        ["not", "an", "object"],
    ],
)
def test_bad_payloads(payload):
    with pytest.raises(MosaicFormatError):
        parse_mosaic_payload(payload)


@pytest.mark.parametrize(
    "target, labels, rows, cols, expected",
    [
        ("c", ("a", "b", "c"), 1, 3, 2),
        ("(C)", ("a", "b", "c"), 1, 3, 2),
        ("2", (), 2, 2, 1),
        ("5", (), 2, 2, None),
        ("z", ("a", "b"), 1, 2, None),
        (None, (), 1, 1, 0),
        (None, (), 2, 1, None),
    ],
)
def test_target_resolution(target, labels, rows, cols, expected):
    assert resolve_target_panel(MosaicSpec(rows, cols, labels, target)) == expected


# ---------------------------------------------------------------- splitting


def test_even_split():
    img = np.zeros((800, 1000, 3), dtype=np.uint8)
    panels = split_panels(img, 2, 2)
    assert [p.shape[:2] for p in panels] == [(400, 500)] * 4


def test_odd_width_boundary_rounds_half_up():
    img = np.zeros((800, 1001), dtype=np.uint8)
    boundary = half_up(Fraction(1001, 2))
    assert boundary == 501
    assert [p.shape[1] for p in split_panels(img, 1, 2)] == [boundary, 1001 - boundary]


def test_identity_split():
    img = np.arange(12, dtype=np.uint8).reshape(3, 4)
    (p,) = split_panels(img, 1, 1)
    np.testing.assert_array_equal(p, img)


def test_split_too_fine():
    with pytest.raises(SplitError):
        split_panels(np.zeros((3, 10)), 4, 1)
    with pytest.raises(SplitError):
        split_panels(np.zeros((3, 10)), 1, 11)


def test_split_tiles_exactly_random():
    rng = np.random.default_rng(99)
    for _ in range(200):
        h, w = int(rng.integers(1, 60)), int(rng.integers(1, 60))
        rows, cols = int(rng.integers(1, h + 1)), int(rng.integers(1, w + 1))
        img = rng.integers(0, 256, size=(h, w, 3), dtype=np.uint8)
        panels = split_panels(img, rows, cols)
        assert len(panels) == rows * cols
        for r in range(rows):
            assert sum(p.shape[1] for p in panels[r * cols : (r + 1) * cols]) == w
        for c in range(cols):
            assert sum(panels[r * cols + c].shape[0] for r in range(rows)) == h
        # column widths follow round-half-up boundaries
        xs = [half_up(Fraction(j * w, cols)) for j in range(cols + 1)]
        assert [p.shape[1] for p in panels[:cols]] == [b - a for a, b in zip(xs, xs[1:])]
        np.testing.assert_array_equal(assemble_panels(panels, rows, cols), img)


# ---------------------------------------------------------------- rotation


def test_rotate_zero_is_identity():
    img = np.arange(6, dtype=np.uint8).reshape(2, 3)
    np.testing.assert_array_equal(rotate_image(img, 0), img)


def test_rotate_swaps_dimensions():
    img = np.zeros((30, 50, 3), dtype=np.uint8)
    assert rotate_image(img, 90).shape == (50, 30, 3)
    assert rotate_image(img, 270).shape == (50, 30, 3)
    assert rotate_image(img, 180).shape == (30, 50, 3)


def test_rotate_two_pixel_row_clockwise():
    p0, p1 = 10, 20
    img = np.array([[p0, p1]], dtype=np.uint8)  # W=2, H=1
    out = rotate_image(img, 90)
    np.testing.assert_array_equal(out, np.array([[p0], [p1]], dtype=np.uint8))
    np.testing.assert_array_equal(out, rot90_cw_oracle(img))


def test_rotate_rejects_other_angles():
    with pytest.raises(ParameterError):
        rotate_image(np.zeros((2, 2)), 45)


def test_rotation_group_laws_random():
    rng = np.random.default_rng(5)
    for _ in range(200):
        h, w = int(rng.integers(1, 17)), int(rng.integers(1, 17))
        img = rng.integers(0, 256, size=(h, w, 3), dtype=np.uint8)
        np.testing.assert_array_equal(rotate_image(img, 90), rot90_cw_oracle(img))
        four = img
        for _ in range(4):
            four = rotate_image(four, 90)
        np.testing.assert_array_equal(four, img)
        a, b = (int(x) for x in rng.choice([0, 90, 180, 270], size=2))
        np.testing.assert_array_equal(rotate_image(rotate_image(img, b), a), rotate_image(img, (a + b) % 360))


# ---------------------------------------------------------------- figure normalization & io


def test_normalize_figure_rotates_before_splitting():
    img = np.arange(40 * 100, dtype=np.uint32).reshape(40, 100).astype(np.uint8)
    spec = MosaicSpec(1, 1, ("a", "b"), target_panel="b", rotation=90)
    norm = normalize_figure(img, spec)
    upright = rotate_image(img, 90)  # 100 tall, 40 wide
    assert (norm.spec.rows, norm.spec.cols) == best_grid_oracle(2, 40, 100)
    np.testing.assert_array_equal(assemble_panels(norm.panels, norm.spec.rows, norm.spec.cols), upright)
    assert norm.target_index == 1


def test_png_round_trip(tmp_path):
    img = np.random.default_rng(0).integers(0, 256, size=(7, 9, 3), dtype=np.uint8)
    np.testing.assert_array_equal(load_image(save_png(img, tmp_path / "x.png")), img)
