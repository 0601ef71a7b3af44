import json

import pytest
from hypothesis import given, strategies as st

from tourflow.config import AnalysisParams
from tourflow.events import (EventDef, EventScorecard, compare_events, evaluate_event,
                             load_events, radar_csv_lines, window_from_dates)
from tourflow.indicators import TimeWindow, segmented_flows, spatial_distribution
from tourflow.ingest import Poi, TacEntry, Tower, TrafficCount, ReferenceBundle
from tourflow.mobility import classify_subscribers, visits_by_subscriber
from tourflow.util import DataError

from conftest import day_ts, make_graph, rec

OFF = 120


def test_window_from_dates_inclusive():
    w = window_from_dates("2015-07-15", "2015-07-20", OFF)
    assert w.start == day_ts("2015-07-15", 0)
    assert w.end == day_ts("2015-07-21", 0)  # end day inclusive -> exclusive next midnight
    assert w.day_span(OFF)[1] - w.day_span(OFF)[0] + 1 == 6


def test_window_single_day():
    w = window_from_dates("2015/07/12", "2015/07/12", OFF)
    assert w.end - w.start == 86400


def test_load_events(tmp_path):
    path = tmp_path / "events.json"
    path.write_text(json.dumps([
        {"name": "a", "start": "2015-07-15", "end": "2015-07-20", "lookback_days": 30},
        {"name": "b", "start": "2015/07/12", "end": "2015/07/12"},
    ]))
    evs = load_events(str(path), OFF)
    assert [e.name for e in evs] == ["a", "b"]
    assert evs[0].lookback_days == 30 and evs[0].followup_days is None


def test_load_events_rejects_duplicates(tmp_path):
    path = tmp_path / "events.json"
    path.write_text(json.dumps([{"name": "a", "start": "2015-07-15", "end": "2015-07-16"},
                                {"name": "a", "start": "2015-07-17", "end": "2015-07-18"}]))
    with pytest.raises(DataError):
        load_events(str(path), OFF)


def tiny_bundle():
    graph = make_graph({"A": (42.50, 1.50), "B": (42.52, 1.50)}, [("AB", "A", "B", 10, 1)])
    towers = {"TA": Tower("TA", 42.50, 1.50, "Z1"), "TB": Tower("TB", 42.52, 1.50, "Z2")}
    pois = [Poi("P1", 42.50, 1.50, "shopping")]
    counts = [TrafficCount("AB", day_ts("2015-07-15", 10) - day_ts("2015-07-15", 10) % 3600,
                           60, 6.0)]
    prices = {"35875106": TacEntry("x", "m", 420.0)}
    return ReferenceBundle(towers=towers, graph=graph, pois=pois, counts=counts,
                           tac_prices=prices)


def scorecard_world():
    records = [
        rec("a", day_ts("2015-07-15", 10), tower="TA", tac="35875106"),
        rec("a", day_ts("2015-07-15", 10, OFF) + 1800, tower="TB", tac="35875106"),
        rec("a", day_ts("2015-07-16", 11), tower="TA", tac="35875106"),
        rec("b", day_ts("2015-07-16", 12), tower="TB"),
        rec("b", day_ts("2015-08-01", 12), tower="TB"),
        rec("x", day_ts("2015-07-15", 9), tower="TA", cc="AD"),
    ]
    classes, _ = classify_subscribers(records, "AD")
    visits = visits_by_subscriber(records, 2, OFF)
    return records, classes, visits


def test_evaluate_event_composition_equals_parts():
    records, classes, visits = scorecard_world()
    bundle = tiny_bundle()
    params = AnalysisParams()
    event = EventDef("e", window_from_dates("2015-07-15", "2015-07-20", OFF),
                     None, None)
    sc = evaluate_event(event, records, classes, visits, bundle, params)

    flow = segmented_flows(visits, classes, event.window, OFF)
    assert sc.tourist_days == flow.total_tourist_days == 3
    assert sc.new_tourists == 2  # a and b have no prior history
    assert sc.repeat_rate == pytest.approx(0.5)  # b revisits on Aug 1
    win_records = [r for r in records if event.window.contains(r.ts)]
    sd = spatial_distribution(win_records, classes, event.window, "day",
                              bundle.towers, OFF)
    assert sc.spatial_dispersion == sd.dispersion
    assert sc.income_median == 420.0  # only subscriber a is priced
    assert sc.peak_congestion > 0.0


def test_evaluate_event_zero_overlap_is_all_zero():
    records, classes, visits = scorecard_world()
    event = EventDef("empty", window_from_dates("2016-01-01", "2016-01-05", OFF), None, None)
    sc = evaluate_event(event, records, classes, visits, tiny_bundle(), AnalysisParams())
    assert sc.tourist_days == 0 and sc.new_tourists == 0
    assert sc.repeat_rate == 0.0 and sc.spatial_dispersion == 0.0
    assert sc.peak_congestion == 0.0
    assert sc.income_median is None and not sc.income_defined


def sc(name, **kw):
    base = dict(tourist_days=0, new_tourists=0, repeat_rate=0.0, spatial_dispersion=0.0,
                income_median=0.0, peak_congestion=0.0)
    base.update(kw)
    return EventScorecard(name=name, **base)


def test_compare_minmax():
    cards = [sc("a", tourist_days=10), sc("b", tourist_days=20), sc("c", tourist_days=30)]
    norm = compare_events(cards)
    assert [norm[x]["tourist_days"] for x in "abc"] == [0.0, 0.5, 1.0]


def test_compare_degenerate_indicator():
    cards = [sc("a", repeat_rate=0.3), sc("b", repeat_rate=0.3)]
    norm = compare_events(cards)
    assert norm["a"]["repeat_rate"] == norm["b"]["repeat_rate"] == 0.5


def test_compare_invert():
    cards = [sc("a", peak_congestion=0.2), sc("b", peak_congestion=0.8)]
    norm = compare_events(cards, invert={"peak_congestion"})
    assert norm["a"]["peak_congestion"] == 1.0
    assert norm["b"]["peak_congestion"] == 0.0


def test_compare_needs_two_events():
    with pytest.raises(DataError):
        compare_events([sc("a")])


def test_compare_rejects_unknown_invert():
    with pytest.raises(ValueError):
        compare_events([sc("a"), sc("b")], invert={"nope"})


@given(st.lists(st.floats(0, 1000, allow_nan=False), min_size=2, max_size=8),
       st.floats(0.5, 2.0), st.floats(-10, 10))
def test_compare_affine_invariance(values, scale, shift):
    from hypothesis import assume

    assume(max(values) - min(values) > 1e-6)  # keep clear of float absorption
    cards = [sc(f"e{i}", tourist_days=v) for i, v in enumerate(values)]
    rescaled = [sc(f"e{i}", tourist_days=v * scale + shift) for i, v in enumerate(values)]
    a = compare_events(cards)
    b = compare_events(rescaled)
    for i in range(len(values)):
        assert a[f"e{i}"]["tourist_days"] == pytest.approx(
            b[f"e{i}"]["tourist_days"], abs=1e-7)


@given(st.permutations(range(4)))
def test_compare_permutation_equivariance(perm):
    cards = [sc(f"e{i}", tourist_days=10 * i, repeat_rate=0.1 * i) for i in range(4)]
    base = compare_events(cards)
    permuted = compare_events([cards[i] for i in perm])
    assert base == permuted


def test_radar_csv_shape():
    cards = [sc("a", tourist_days=10), sc("b", tourist_days=20)]
    lines = radar_csv_lines(cards, compare_events(cards))
    assert lines[0] == "event,indicator,raw,normalized"
    assert len(lines) == 1 + 2 * 6


def test_undefined_income_compares_as_zero():
    cards = [sc("a", income_median=None), sc("b", income_median=400.0)]
    norm = compare_events(cards)
    assert norm["a"]["income_median"] == 0.0
    assert norm["b"]["income_median"] == 1.0
