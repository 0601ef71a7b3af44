import math

import pytest
from hypothesis import given, settings, strategies as st

from tourflow.indicators import (TimeWindow, interest_profiles, new_tourists,
                                 repeat_tourists, segmented_flows, spatial_distribution,
                                 tower_category_weights)
from tourflow.ingest import Poi, Tower
from tourflow.mobility import classify_subscribers, visits_by_subscriber
from tourflow.util import local_day

from conftest import day_ts, rec

OFF = 120


def window_days(start_date, end_date_incl):
    """Local-midnight window covering the inclusive date range."""
    return TimeWindow(day_ts(start_date, 0), day_ts(end_date_incl, 0) + 86400)


def build(records, home="AD"):
    classes, _ = classify_subscribers(records, home)
    return visits_by_subscriber(records, 2, OFF), classes


def test_time_window_validates():
    with pytest.raises(ValueError):
        TimeWindow(10, 10)


def test_flows_single_tourist_two_days():
    records = [rec("a", day_ts("2015-07-15")), rec("a", day_ts("2015-07-16"))]
    visits, classes = build(records)
    flow = segmented_flows(visits, classes, window_days("2015-07-15", "2015-07-20"), OFF)
    assert flow.per_country["ES"].visitors == 1
    assert flow.per_country["ES"].tourist_days == 2


def test_flows_brute_force_pairs():
    records = [rec("a", day_ts("2015-07-15")), rec("a", day_ts("2015-07-16")),
               rec("b", day_ts("2015-07-16")),
               rec("c", day_ts("2015-07-15"), cc="FR")]
    visits, classes = build(records)
    window = window_days("2015-07-15", "2015-07-20")
    flow = segmented_flows(visits, classes, window, OFF)
    # oracle: enumerate (tourist, local day) pairs inside the window
    lo, hi = window.day_span(OFF)
    pairs = {(r.subscriber_id, local_day(r.ts, OFF)) for r in records
             if lo <= local_day(r.ts, OFF) <= hi}
    by_cc = {}
    for sid, _ in pairs:
        by_cc.setdefault(classes[sid].origin_country, set()).add(sid)
    assert flow.per_country["ES"].visitors == len(by_cc["ES"]) == 2
    assert flow.per_country["ES"].tourist_days == \
        sum(1 for sid, _ in pairs if classes[sid].origin_country == "ES") == 3
    assert flow.per_country["FR"].visitors == 1
    assert flow.per_country["FR"].tourist_days == 1
    assert flow.total_visitors == 3 and flow.total_tourist_days == 4


def test_flows_empty():
    flow = segmented_flows({}, {}, window_days("2015-07-15", "2015-07-16"), OFF)
    assert flow.per_country == {}
    assert flow.total_visitors == 0


def test_flows_locals_excluded():
    records = [rec("a", day_ts("2015-07-15"), cc="AD")]
    visits, classes = build(records)
    flow = segmented_flows(visits, classes, window_days("2015-07-15", "2015-07-16"), OFF)
    assert flow.per_country == {}


def test_new_tourists_no_prior_history():
    records = [rec("a", day_ts("2015-07-15"))]
    visits, _ = build(records)
    event = window_days("2015-07-15", "2015-07-20")
    assert new_tourists(visits, event, OFF) == {"a"}


def test_new_tourists_lookback_boundary():
    event = window_days("2015-07-15", "2015-07-20")
    inside = [rec("a", day_ts("2015-07-05")), rec("a", day_ts("2015-07-16"))]
    outside = [rec("b", day_ts("2015-06-05")), rec("b", day_ts("2015-07-16"))]
    visits, _ = build(inside + outside)
    got = new_tourists(visits, event, OFF, lookback_days=30)
    # oracle: brute-force scan of active days against the lookback interval
    lo = local_day(event.start - 30 * 86400, OFF)
    hi = local_day(event.start - 1, OFF)
    e_lo, e_hi = event.day_span(OFF)
    expected = set()
    for sid, vs in visits.items():
        days = {d for v in vs for d in v.active_days}
        if any(e_lo <= d <= e_hi for d in days) and not any(lo <= d <= hi for d in days):
            expected.add(sid)
    assert got == expected == {"b"}


def test_new_tourists_unbounded_lookback():
    records = [rec("b", day_ts("2015-06-05")), rec("b", day_ts("2015-07-16"))]
    visits, _ = build(records)
    event = window_days("2015-07-15", "2015-07-20")
    assert new_tourists(visits, event, OFF) == set()


def test_repeat_tourists_definition():
    event = window_days("2015-07-15", "2015-07-20")
    records = [rec("a", day_ts("2015-07-16")), rec("a", day_ts("2015-08-09"))]
    visits, _ = build(records)
    got, rate = repeat_tourists(visits, event, OFF, followup_days=90)
    assert got == {"a"} and rate == 1.0


def test_repeat_same_visit_is_not_revisit():
    event = window_days("2015-07-15", "2015-07-20")
    # one continuous visit spanning past the event end
    records = [rec("a", day_ts(f"2015-07-{d:02d}")) for d in range(19, 25)]
    visits, _ = build(records)
    got, rate = repeat_tourists(visits, event, OFF, followup_days=90)
    assert got == set() and rate == 0.0


def test_repeat_rate_quarter():
    event = window_days("2015-07-15", "2015-07-20")
    records = []
    for sid in ("a", "b", "c", "d"):
        records.append(rec(sid, day_ts("2015-07-16")))
    records.append(rec("a", day_ts("2015-08-20")))
    visits, _ = build(records)
    got, rate = repeat_tourists(visits, event, OFF, followup_days=90)
    assert got == {"a"}
    assert rate == 0.25


def test_repeat_followup_window_excludes_late_revisits():
    event = window_days("2015-07-15", "2015-07-20")
    records = [rec("a", day_ts("2015-07-16")), rec("a", day_ts("2015-11-20"))]
    visits, _ = build(records)
    got, _ = repeat_tourists(visits, event, OFF, followup_days=30)
    assert got == set()
    got, _ = repeat_tourists(visits, event, OFF, followup_days=None)
    assert got == {"a"}


@given(st.data())
def test_repeat_rate_monotone_in_followup(data):
    day0 = day_ts("2015-07-01")
    records = []
    n_subs = data.draw(st.integers(1, 6))
    for i in range(n_subs):
        days = data.draw(st.lists(st.integers(0, 80), min_size=1, max_size=8))
        records.extend(rec(f"s{i}", day0 + d * 86400 + 3600) for d in days)
    visits, _ = build(records)
    event = window_days("2015-07-05", "2015-07-10")
    rates = [repeat_tourists(visits, event, OFF, f)[1] for f in (5, 15, 40, 80, None)]
    assert all(a <= b + 1e-12 for a, b in zip(rates, rates[1:]))


def zone_towers(n):
    return {f"T{i:02d}": Tower(f"T{i:02d}", 42.5 + i * 0.01, 1.5, f"Z{i}") for i in range(n)}


def presence_records(zone_hits):
    """zone_hits: list of (sid, tower index, hour). All inside 2015-07-15, daytime."""
    return [rec(sid, day_ts("2015-07-15", hour), tower=f"T{t:02d}")
            for sid, t, hour in zone_hits]


def spatial(records, towers, period="day"):
    classes, _ = classify_subscribers(records, "AD")
    window = window_days("2015-07-15", "2015-07-15")
    return spatial_distribution(records, classes, window, period, towers, OFF)


def test_spatial_point_mass_dispersion_zero():
    towers = zone_towers(4)
    sd = spatial(presence_records([("a", 0, 10), ("b", 0, 11), ("a", 0, 12)]), towers)
    assert sd.dispersion == 0.0
    assert sd.shares["Z0"] == 1.0
    assert sum(sd.shares.values()) == pytest.approx(1.0, abs=1e-9)


def test_spatial_uniform_dispersion_one_exact():
    towers = zone_towers(4)
    sd = spatial(presence_records([("a", 0, 10), ("a", 1, 11), ("b", 2, 10), ("b", 3, 11)]),
                 towers)
    assert sd.dispersion == 1.0
    assert sum(sd.shares.values()) == pytest.approx(1.0, abs=1e-9)


def test_spatial_half_half_dispersion_exact():
    towers = zone_towers(4)
    sd = spatial(presence_records([("a", 0, 10), ("b", 1, 10)]), towers)
    assert sd.dispersion == math.log(2) / math.log(4) == 0.5
    assert sd.shares == {"Z0": 0.5, "Z1": 0.5, "Z2": 0.0, "Z3": 0.0}


def test_spatial_zero_presence_flagged():
    towers = zone_towers(4)
    sd = spatial([], towers)
    assert sd.n_presence == 0
    assert sd.dispersion == 0.0
    assert all(v == 0.0 for v in sd.shares.values())


def test_spatial_presence_unit_dedupes_bursts():
    towers = zone_towers(4)
    # three calls in the same zone-hour count once
    sd = spatial(presence_records([("a", 0, 10), ("a", 0, 10), ("a", 0, 10), ("a", 1, 11)]),
                 towers)
    assert sd.n_presence == 2


def test_spatial_period_filter():
    towers = zone_towers(4)
    records = presence_records([("a", 0, 10)]) + presence_records([("a", 1, 23)])
    day_sd = spatial(records, towers, "day")
    night_sd = spatial(records, towers, "night")
    assert day_sd.shares["Z0"] == 1.0 and day_sd.shares["Z1"] == 0.0
    assert night_sd.shares["Z1"] == 1.0


def test_spatial_locals_excluded():
    towers = zone_towers(4)
    records = [rec("x", day_ts("2015-07-15", 10), tower="T00", cc="AD")]
    sd = spatial(records, towers)
    assert sd.n_presence == 0


def test_tower_weights_proportional_counts():
    towers = {"T01": Tower("T01", 42.5, 1.5, None)}
    pois = [Poi("P1", 42.5, 1.5, "shopping"), Poi("P2", 42.5001, 1.5, "shopping"),
            Poi("P3", 42.5, 1.5002, "nature"), Poi("P4", 40.0, 1.5, "culture")]
    w = tower_category_weights(towers, pois, poi_radius_m=300)
    assert w["T01"] == {"nature": pytest.approx(1 / 3), "shopping": pytest.approx(2 / 3)}


def test_tower_weights_no_poi_is_other():
    towers = {"T01": Tower("T01", 42.5, 1.5, None)}
    assert tower_category_weights(towers, [], 300)["T01"] == {"other": 1.0}


def test_interest_profile_single_tower_subscriber():
    towers = {"T01": Tower("T01", 42.5, 1.5, None)}
    pois = [Poi("P1", 42.5, 1.5, "shopping"), Poi("P2", 42.5001, 1.5, "shopping"),
            Poi("P3", 42.5, 1.5002, "nature")]
    records = [rec("a", day_ts("2015-07-15", h), tower="T01") for h in (9, 10, 15)]
    classes, _ = classify_subscribers(records, "AD")
    prof = interest_profiles(records, classes, towers, pois, 300, OFF)["ES"]
    assert prof.weights["shopping"] == pytest.approx(2 / 3)
    assert prof.weights["nature"] == pytest.approx(1 / 3)
    assert sum(prof.weights.values()) == pytest.approx(1.0, abs=1e-9)


def test_interest_profiles_average_over_subscribers():
    towers = {"T01": Tower("T01", 42.5, 1.5, None), "T02": Tower("T02", 42.6, 1.5, None)}
    pois = [Poi("P1", 42.5, 1.5, "shopping"), Poi("P2", 42.6, 1.5, "nature")]
    records = [rec("a", day_ts("2015-07-15", 9), tower="T01"),
               rec("b", day_ts("2015-07-15", 9), tower="T02")]
    classes, _ = classify_subscribers(records, "AD")
    prof = interest_profiles(records, classes, towers, pois, 300, OFF)["ES"]
    assert prof.weights["shopping"] == pytest.approx(0.5)
    assert prof.weights["nature"] == pytest.approx(0.5)


@given(st.lists(st.tuples(st.sampled_from(["a", "b", "c"]), st.integers(0, 3),
                          st.integers(8, 19)), min_size=1, max_size=30),
       st.randoms(use_true_random=False))
def test_spatial_order_invariance(hits, rnd):
    towers = zone_towers(4)
    records = presence_records(hits)
    shuffled = records[:]
    rnd.shuffle(shuffled)
    a = spatial(records, towers)
    b = spatial(shuffled, towers)
    assert a.shares == b.shares and a.dispersion == b.dispersion
