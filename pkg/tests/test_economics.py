import numpy as np
import pytest
from hypothesis import given, strategies as st

from tourflow.economics import (IncomeProfile, income_by_country, income_profile,
                                subscriber_price)
from tourflow.ingest import TacEntry
from tourflow.mobility import SubscriberClass

from conftest import rec

TABLE = {
    "35875106": TacEntry("x", "m1", 420.0),
    "11111111": TacEntry("x", "m2", 100.0),
    "22222222": TacEntry("x", "m3", 900.0),
}


def recs_with_tacs(tacs):
    return [rec("a", 1436952600 + i * 60, tac=t) for i, t in enumerate(tacs)]


def test_price_single_tac():
    assert subscriber_price(recs_with_tacs(["35875106"] * 3), TABLE) == 420.0


def test_price_modal_rule():
    # oracle by enumeration: A appears 3 times (price 100), B once (price 900)
    tacs = ["11111111", "22222222", "11111111", "11111111"]
    counts = {t: tacs.count(t) for t in set(tacs)}
    assert max(counts, key=counts.get) == "11111111"
    assert subscriber_price(recs_with_tacs(tacs), TABLE) == 100.0


def test_price_absent_without_known_tac():
    assert subscriber_price(recs_with_tacs([None, None]), TABLE) is None
    assert subscriber_price(recs_with_tacs(["99999999"]), TABLE) is None
    assert subscriber_price([], TABLE) is None


def test_price_tie_breaks_most_recent():
    assert subscriber_price(recs_with_tacs(["11111111", "22222222"]), TABLE) == 900.0
    assert subscriber_price(recs_with_tacs(["22222222", "11111111"]), TABLE) == 100.0


def test_price_unknown_tacs_ignored():
    tacs = ["99999999", "99999999", "99999999", "11111111"]
    assert subscriber_price(recs_with_tacs(tacs), TABLE) == 100.0


def test_income_median_odd():
    p = income_profile({"a": 100.0, "b": 200.0, "c": 300.0})
    assert p.median == 200.0


def test_income_median_interpolates():
    p = income_profile({"a": 100.0, "b": 200.0})
    assert p.median == 150.0


def test_income_coverage():
    prices = {f"s{i}": (100.0 if i < 4 else None) for i in range(10)}
    p = income_profile(prices)
    assert p.coverage == pytest.approx(0.4)
    assert p.n_subscribers == 10 and p.n_priced == 4


def test_income_empty_priced_set_undefined():
    p = income_profile({"a": None})
    assert not p.defined
    assert p.median is None and p.q25 is None and p.q75 is None
    assert p.coverage == 0.0


def test_income_single_price():
    p = income_profile({"a": 55.0})
    assert (p.q25, p.median, p.q75) == (55.0, 55.0, 55.0)


@given(st.lists(st.floats(1.0, 2000.0, allow_nan=False), min_size=2, max_size=50))
def test_income_quartiles_match_numpy_linear(prices):
    p = income_profile({f"s{i}": v for i, v in enumerate(prices)})
    arr = np.array(prices)
    assert p.q25 == pytest.approx(np.percentile(arr, 25, method="linear"))
    assert p.median == pytest.approx(np.percentile(arr, 50, method="linear"))
    assert p.q75 == pytest.approx(np.percentile(arr, 75, method="linear"))
    assert p.q25 <= p.median <= p.q75


@given(st.lists(st.floats(1.0, 2000.0, allow_nan=False), min_size=1, max_size=30))
def test_income_unknown_tac_changes_coverage_not_quantiles(prices):
    base = {f"s{i}": v for i, v in enumerate(prices)}
    with_unknown = dict(base, extra=None)
    a = income_profile(base)
    b = income_profile(with_unknown)
    assert (a.median, a.q25, a.q75) == (b.median, b.q25, b.q75)
    assert b.coverage < a.coverage


def test_income_by_country_groups():
    classes = {"a": SubscriberClass("a", "tourist", "ES"),
               "b": SubscriberClass("b", "tourist", "ES"),
               "c": SubscriberClass("c", "tourist", "FR")}
    out = income_by_country(classes, {"a": 100.0, "b": 200.0, "c": None})
    assert out["ES"].median == 150.0
    assert not out["FR"].defined


def test_income_enumeration_order_invariance():
    pa = income_profile({"a": 100.0, "b": 300.0, "c": 200.0})
    pb = income_profile({"c": 200.0, "a": 100.0, "b": 300.0})
    assert (pa.median, pa.q25, pa.q75) == (pb.median, pb.q25, pb.q75)
