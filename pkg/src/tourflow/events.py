"""Event scorecards and cross-event radar normalization."""

from __future__ import annotations

import json
from dataclasses import dataclass

from . import congestion, economics, indicators
from .indicators import TimeWindow
from .util import DataError, parse_iso_date

INDICATOR_NAMES = ("tourist_days", "new_tourists", "repeat_rate",
                   "spatial_dispersion", "income_median", "peak_congestion")


@dataclass(slots=True, frozen=True)
class EventDef:
    name: str
    window: TimeWindow
    lookback_days: int | None = None
    followup_days: int | None = None


@dataclass
class EventScorecard:
    name: str
    tourist_days: int
    new_tourists: int
    repeat_rate: float
    spatial_dispersion: float
    income_median: float | None
    peak_congestion: float

    @property
    def income_defined(self) -> bool:
        return self.income_median is not None

    def value(self, indicator: str) -> float:
        """Raw radar value; undefined income compares as 0.0."""
        v = getattr(self, indicator)
        return 0.0 if v is None else float(v)


def window_from_dates(start_date: str, end_date: str, utc_offset_minutes: int) -> TimeWindow:
    """Local calendar window, inclusive of both endpoint days."""
    d0 = parse_iso_date(start_date)
    d1 = parse_iso_date(end_date)
    if d1 < d0:
        raise DataError(f"event end date {end_date} precedes start date {start_date}")
    off = utc_offset_minutes * 60
    return TimeWindow(d0 * 86400 - off, (d1 + 1) * 86400 - off)


def load_events(path, utc_offset_minutes: int):
    """Read the events.json array of {name, start, end, lookback_days?, followup_days?}."""
    try:
        with open(path, "r", encoding="utf-8") as f:
            arr = json.load(f)
    except FileNotFoundError:
        raise DataError(f"events file not found: {path}") from None
    except json.JSONDecodeError as e:
        raise DataError(f"bad events JSON: {e}", path=path) from None
    if not isinstance(arr, list):
        raise DataError("events.json must be an array", path=path)
    out = []
    seen = set()
    for i, obj in enumerate(arr):
        try:
            name = obj["name"]
            window = window_from_dates(obj["start"], obj["end"], utc_offset_minutes)
        except (KeyError, TypeError) as e:
            raise DataError(f"event #{i}: missing field {e}", path=path) from None
        if name in seen:
            raise DataError(f"duplicate event name {name!r}", path=path)
        seen.add(name)
        out.append(EventDef(name, window,
                            lookback_days=obj.get("lookback_days"),
                            followup_days=obj.get("followup_days")))
    return out


def evaluate_event(event: EventDef, records, classes, visits_by_sid, bundle,
                   params) -> EventScorecard:
    """Compose the five-indicator scorecard for one event window.

    Congestion restricts the O-D build, counts and scale fit to the event
    window; an event with no movements short-circuits to peak 0 while a
    nonempty O-D with no usable count station propagates the scale error.
    """
    off = params.utc_offset_minutes
    win_records = [r for r in records if event.window.contains(r.ts)]
    tourist_visits = {sid: v for sid, v in visits_by_sid.items()
                      if sid in classes and classes[sid].category == "tourist"}

    flow = indicators.segmented_flows(visits_by_sid, classes, event.window, off)
    new = indicators.new_tourists(tourist_visits, event.window, off, event.lookback_days)
    _, repeat_rate = indicators.repeat_tourists(tourist_visits, event.window, off,
                                                event.followup_days)
    spatial = indicators.spatial_distribution(
        win_records, classes, event.window, "day", bundle.towers, off, params.day_hours)

    e_lo, e_hi = event.window.day_span(off)
    attendees = set()
    for sid, visits in tourist_visits.items():
        if any(e_lo <= d <= e_hi for v in visits for d in v.active_days):
            attendees.add(sid)
    attendee_records = {}
    for r in win_records:
        if r.subscriber_id in attendees:
            attendee_records.setdefault(r.subscriber_id, []).append(r)
    prices = {sid: economics.subscriber_price(attendee_records.get(sid, ()), bundle.tac_prices)
              for sid in sorted(attendees)}
    income = economics.income_profile(prices)

    od = congestion.build_od_matrix(win_records, classes, "all",
                                    params.od_window_minutes, params.od_max_gap_minutes)
    if not od.counts:
        peak = 0.0
    else:
        snapping = congestion.snap_towers(bundle.towers, bundle.graph, params.snap_max_m)
        flows = congestion.assign_to_links(od, bundle.graph, snapping)
        if not flows.flows:
            peak = 0.0
        else:
            win_counts = [c for c in bundle.counts if event.window.contains(c.window_start)]
            fit = congestion.fit_scale(flows, win_counts)
            peak = congestion.peak_congestion(flows, fit.beta).score

    return EventScorecard(
        name=event.name,
        tourist_days=flow.total_tourist_days,
        new_tourists=len(new),
        repeat_rate=repeat_rate,
        spatial_dispersion=spatial.dispersion,
        income_median=income.median,
        peak_congestion=peak,
    )


def compare_events(scorecards, invert=frozenset()):
    """Min-max normalize each indicator across events.

    Returns {event name: {indicator: normalized value in [0, 1]}}. An indicator
    constant across events maps to 0.5 everywhere; indicators named in
    ``invert`` are flipped to 1 - normalized.
    """
    if len(scorecards) < 2:
        raise DataError("compare_events needs at least 2 events")
    bad = set(invert) - set(INDICATOR_NAMES)
    if bad:
        raise ValueError(f"unknown indicator(s) in invert: {sorted(bad)}")
    out = {sc.name: {} for sc in scorecards}
    for ind in INDICATOR_NAMES:
        values = [sc.value(ind) for sc in scorecards]
        lo, hi = min(values), max(values)
        for sc, v in zip(scorecards, values):
            norm = 0.5 if hi == lo else (v - lo) / (hi - lo)
            if ind in invert:
                norm = 1.0 - norm
            out[sc.name][ind] = norm
    return out


def _csv_field(s: str) -> str:
    if any(ch in s for ch in ',"\n'):
        return '"' + s.replace('"', '""') + '"'
    return s


def radar_csv_lines(scorecards, normalized):
    lines = ["event,indicator,raw,normalized"]
    for sc in scorecards:
        for ind in INDICATOR_NAMES:
            lines.append(f"{_csv_field(sc.name)},{ind},"
                         f"{sc.value(ind)!r},{normalized[sc.name][ind]!r}")
    return lines


def scorecards_json_obj(scorecards):
    return {
        "events": [
            {
                "name": sc.name,
                "tourist_days": sc.tourist_days,
                "new_tourists": sc.new_tourists,
                "repeat_rate": sc.repeat_rate,
                "spatial_dispersion": sc.spatial_dispersion,
                "income_median": sc.income_median,
                "income_defined": sc.income_defined,
                "peak_congestion": sc.peak_congestion,
            }
            for sc in scorecards
        ]
    }
