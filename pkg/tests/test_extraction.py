import json
import random
import time

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import make_endpoint
from litmetrics.corpus import TextChunk
from litmetrics.errors import FigureExtractionError, TextExtractionError, VoltageFormatError
from litmetrics.extraction import (
    derive_coulombic_efficiency,
    extract_from_figure,
    extract_from_text,
    figure_record,
    locate_source,
    merge_first_non_null,
    merge_records,
    normalize_capacity,
    parse_figure_answer,
    parse_text_answer,
    parse_voltage_range,
)
from litmetrics.fixtures import figure_answer_json, synthetic_plot, text_answer_json
from litmetrics.records import MetricRecord, Provenance, format_voltage_range
from litmetrics.stubserver import StubChatServer, scripted, user_text

# ---------------------------------------------------------------- value normalization


@pytest.mark.parametrize(
    "s, expected",
    [
        ("2.8-4.3", (2.8, 4.3)),
        ("2.8 – 4.3 V", (2.8, 4.3)),
        ("3.0V-4.5V", (3.0, 4.5)),
        ("2.75~4.25", (2.75, 4.25)),
        ("-0.5-1.0", (-0.5, 1.0)),
    ],
)
def test_parse_voltage_range(s, expected):
    assert parse_voltage_range(s) == expected


@pytest.mark.parametrize("s", ["4.3-2.8", "3.0-3.0", "about four volts", "", "2.8", None])
def test_bad_voltage_ranges(s):
    with pytest.raises(VoltageFormatError):
        parse_voltage_range(s)


@settings(max_examples=200, deadline=None)
@given(lo=st.floats(-5, 10, allow_nan=False), span=st.floats(0.01, 5, allow_nan=False))
def test_voltage_range_round_trip(lo, span):
    lo, hi = round(lo, 3), round(lo + span, 3)
    if lo < hi:
        assert parse_voltage_range(format_voltage_range(lo, hi)) == (lo, hi)


def test_capacity_units():
    assert normalize_capacity(0.2, "Ah/g") == 200.0
    assert normalize_capacity(198.456, "mAh/g") == 198.5
    assert normalize_capacity(205, "mAh g-1") == 205.0
    assert normalize_capacity(205, "mAh g⁻¹") == 205.0


def test_unknown_unit_dropped_with_warning(caplog):
    assert normalize_capacity(5.0, "Wh/kg") is None
    assert "Wh/kg" in caplog.text


def test_coulombic_efficiency():
    assert derive_coulombic_efficiency(190.0, 200.0) == 95.0
    assert derive_coulombic_efficiency(190.0, None) is None
    assert derive_coulombic_efficiency(190.0, 0.0) is None


# ---------------------------------------------------------------- figure path


def test_parse_figure_answer_example():
    ans = parse_figure_answer(json.loads(figure_answer_json("2.8-4.3", 198.4, 221.0)))
    assert (ans.voltage, ans.capacity, ans.charge_capacity) == ("2.8-4.3", 198.4, 221.0)


def test_figure_record_derives_ce():
    ans = parse_figure_answer(json.loads(figure_answer_json("2.8-4.3", 190.0, 200.0)))
    rec = figure_record(ans, "fig2", "vlm", "payloads/fig2.figure.json")
    assert (rec.voltage_min, rec.voltage_max, rec.voltage_range) == (2.8, 4.3, "2.8-4.3")
    assert rec.coulombic_efficiency_pct == 95.0
    assert rec.provenance["coulombic_efficiency_pct"].derived_from == ("discharge_capacity", "charge_capacity")
    assert all(p.source == "chart" for p in rec.provenance.values())
    assert rec.problems() == []


def test_figure_record_skips_bad_voltage():
    ans = parse_figure_answer(json.loads(figure_answer_json("high", 190.0, None)))
    rec = figure_record(ans, "f", "m", "a")
    assert rec.voltage_min is None and rec.discharge_capacity == 190.0
    assert rec.coulombic_efficiency_pct is None


def test_figure_extraction_via_stub(gateway, dk):
    panel = synthetic_plot(80, 60)
    with StubChatServer(scripted([figure_answer_json("2.8-4.3", 198.4, 221.0)])) as stub:
        ans = extract_from_figure(panel, "Figure 2. Cap.", dk, make_endpoint(stub.url), gateway)
    assert (ans.voltage, ans.capacity, ans.charge_capacity) == ("2.8-4.3", 198.4, 221.0)
    assert len(stub.requests) == 1
    assert "Figure 2. Cap." in user_text(stub.requests[0])


def test_two_element_array_twice_fails(gateway, dk):
    short = json.dumps(json.loads(figure_answer_json("2.8-4.3", 198.4, 221.0))[:2])
    with StubChatServer(scripted([short])) as stub:
        with pytest.raises(FigureExtractionError) as info:
            extract_from_figure(synthetic_plot(40, 30), "", dk, make_endpoint(stub.url), gateway)
    assert len(stub.requests) == 2
    assert len(info.value.responses) == 2


def test_reask_recovers(gateway, dk):
    short = json.dumps(json.loads(figure_answer_json("2.8-4.3", 198.4, 221.0))[:2])
    with StubChatServer(scripted([short, figure_answer_json(None, 180.0, None)])) as stub:
        ans = extract_from_figure(synthetic_plot(40, 30), "", dk, make_endpoint(stub.url), gateway)
    assert ans.capacity == 180.0 and ans.voltage is None
    assert "previous reply" in user_text(stub.requests[1])


# ---------------------------------------------------------------- text path


def test_parse_text_answer_range_overrides():
    out = parse_text_answer(json.loads(text_answer_json(voltage_range="2.7-4.4", voltage_min=3.0, capacity=201)))
    assert out == {"voltage_min": 2.7, "voltage_max": 4.4, "discharge_capacity": 201.0, "coulombic_efficiency_pct": None}


def test_parse_text_answer_drops_inverted_pair():
    out = parse_text_answer({"voltage_min": 4.3, "voltage_max": 2.8})
    assert out["voltage_min"] is None and out["voltage_max"] is None


def test_locate_source_table_vs_text():
    chunk = "Capacity was high.\n\n| cell | cap |\n|---|---|\n| A | 198.4 |\n\nLater 205.1 in prose."
    assert locate_source(chunk, 198.4) == "table"
    assert locate_source(chunk, 205.1) == "text"
    assert locate_source(chunk, 999.0) == "text"


def _chunks(n):
    return [TextChunk(i, i * 100, i * 100 + 50, f"CHUNK-{i:03d} body") for i in range(n)]


def _chunk_index(request):
    return int(user_text(request).split("CHUNK-")[1][:3])


def first_non_null_oracle(answers, n):
    """Document-order scan over chunk answers."""
    out = {}
    for field in ("voltage_min", "voltage_max", "discharge_capacity", "coulombic_efficiency_pct"):
        for i in range(n):
            v = answers[i].get(field)
            if v is not None:
                out[field] = (v, i)
                break
    return out


def test_text_merge_with_shuffled_completion(gateway, dk):
    rng = random.Random(11)
    n = 12
    answers = []
    for i in range(n):
        a = {}
        if rng.random() < 0.3:
            a["capacity"] = round(rng.uniform(150, 220), 1)
        if rng.random() < 0.3:
            a["coulombic_efficiency_pct"] = round(rng.uniform(80, 95), 1)
        if rng.random() < 0.3:
            lo = rng.choice([2.7, 2.8, 3.0])
            a["voltage_min"], a["voltage_max"] = lo, lo + 1.5
        answers.append(a)
    delays = [rng.uniform(0, 0.06) for _ in range(n)]

    def respond(request):
        i = _chunk_index(request)
        time.sleep(delays[i])
        return text_answer_json(**answers[i])

    with StubChatServer(respond) as stub:
        result = extract_from_text(_chunks(n), dk, make_endpoint(stub.url, max_parallel=6), gateway, workers=6)

    renamed = [{("discharge_capacity" if k == "capacity" else k): v for k, v in a.items()} for a in answers]
    expected = first_non_null_oracle(renamed, n)
    rec = result.record
    for field, (value, index) in expected.items():
        assert getattr(rec, field) == value
        assert rec.provenance[field].chunk_index == index
    for field in ("voltage_min", "voltage_max", "discharge_capacity", "coulombic_efficiency_pct"):
        if field not in expected:
            assert getattr(rec, field) is None
    assert rec.problems() == []


def test_text_merge_is_order_independent():
    answers = {
        2: {"voltage_min": None, "voltage_max": None, "discharge_capacity": 180.0, "coulombic_efficiency_pct": 88.0},
        0: {"voltage_min": 2.8, "voltage_max": None, "discharge_capacity": None, "coulombic_efficiency_pct": None},
        1: {"voltage_min": 3.0, "voltage_max": 4.3, "discharge_capacity": 190.0, "coulombic_efficiency_pct": None},
    }
    shuffled = dict(reversed(list(answers.items())))
    assert merge_first_non_null(answers) == merge_first_non_null(shuffled) == {
        "voltage_min": (2.8, 0),
        "voltage_max": (4.3, 1),
        "discharge_capacity": (190.0, 1),
        "coulombic_efficiency_pct": (88.0, 2),
    }


def test_text_path_table_provenance(gateway, dk):
    chunk = TextChunk(0, 0, 60, "Results.\n\n| sample | capacity |\n|---|---|\n| NMC | 198.4 |\n")
    with StubChatServer(scripted([text_answer_json(capacity=198.4)])) as stub:
        rec = extract_from_text([chunk], dk, make_endpoint(stub.url), gateway).record
    assert rec.discharge_capacity == 198.4
    assert rec.provenance["discharge_capacity"].source == "table"
    assert rec.provenance["discharge_capacity"].artifact == "payloads/chunk_0000.json"


def test_text_path_all_chunks_fail(gateway, dk):
    with StubChatServer(scripted([(503, {})])) as stub:
        with pytest.raises(TextExtractionError):
            extract_from_text(_chunks(2), dk, make_endpoint(stub.url), gateway)


def test_text_path_tolerates_some_bad_chunks(gateway, dk):
    def respond(request):
        return "garbage" if _chunk_index(request) == 0 else text_answer_json(capacity=170.0)

    with StubChatServer(respond) as stub:
        result = extract_from_text(_chunks(2), dk, make_endpoint(stub.url), gateway)
    assert result.record.discharge_capacity == 170.0
    assert set(result.errors) == {0}


# ---------------------------------------------------------------- merge


optional_value = st.one_of(st.none(), st.floats(1, 300, allow_nan=False).map(lambda x: round(x, 1)))


def _record(source, values):
    lo, hi = values["voltage_min"], values["voltage_max"]
    if lo is not None and hi is not None and not lo < hi:
        values = {**values, "voltage_max": None}
        hi = None
    rng = format_voltage_range(lo, hi) if lo is not None and hi is not None else None
    filled = {k: v for k, v in values.items() if v is not None}
    if rng:
        filled["voltage_range"] = rng
    return MetricRecord(**filled, provenance={k: Provenance(source) for k in filled})


records = st.fixed_dictionaries(
    {
        "voltage_min": optional_value,
        "voltage_max": optional_value,
        "discharge_capacity": optional_value,
        "charge_capacity": optional_value,
        "coulombic_efficiency_pct": st.one_of(st.none(), st.floats(50, 100).map(lambda x: round(x, 1))),
    }
)


@settings(max_examples=300, deadline=None)
@given(fig=records, txt=records)
def test_merge_figure_precedence(fig, txt):
    f, t = _record("chart", fig), _record("text", txt)
    merged = merge_records(f, t)
    for name in ("voltage_min", "voltage_max", "discharge_capacity", "charge_capacity"):
        expected = getattr(f, name) if getattr(f, name) is not None else getattr(t, name)
        assert getattr(merged, name) == expected
        if expected is not None:
            assert merged.provenance[name].source == ("chart" if getattr(f, name) is not None else "text")
    if f.coulombic_efficiency_pct is not None:
        assert merged.coulombic_efficiency_pct == f.coulombic_efficiency_pct
    elif t.coulombic_efficiency_pct is not None:
        assert merged.coulombic_efficiency_pct == t.coulombic_efficiency_pct
    for name in merged.filled():
        assert name in merged.provenance


def test_merge_derives_ce_across_paths():
    f = MetricRecord(discharge_capacity=190.0, provenance={"discharge_capacity": Provenance("chart")})
    t = MetricRecord(charge_capacity=200.0, provenance={"charge_capacity": Provenance("text")})
    merged = merge_records(f, t)
    assert merged.coulombic_efficiency_pct == 95.0
    assert merged.provenance["coulombic_efficiency_pct"].derived_from == ("discharge_capacity", "charge_capacity")
