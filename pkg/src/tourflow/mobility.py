"""Subscriber classification and visit segmentation.

A visit is a maximal run of a subscriber's active local days in which no two
consecutive active days are separated by ``visit_gap_days`` or more empty
days. Visits are the unit behind every tourist indicator.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field

from .util import format_iso_ts, local_day

DEFAULT_VISIT_GAP_DAYS = 2
DEFAULT_UTC_OFFSET_MINUTES = 120


@dataclass(slots=True, frozen=True)
class SubscriberClass:
    subscriber_id: str
    category: str  # "local" | "tourist"
    origin_country: str


@dataclass(slots=True)
class Visit:
    subscriber_id: str
    first_seen: int
    last_seen: int
    active_days: frozenset  # local day numbers
    towers_touched: Counter = field(default_factory=Counter)


def classify_subscribers(records, home_country: str):
    """Map every subscriber to local/tourist by registry country.

    Subscribers whose records disagree on registry country are resolved by
    majority, ties by the country seen first. Returns ``(classes, n_mixed)``
    where n_mixed counts subscribers with more than one observed country.
    """
    per_sub = {}
    for idx, r in enumerate(records):
        stats = per_sub.get(r.subscriber_id)
        if stats is None:
            per_sub[r.subscriber_id] = {r.registry_country: [1, idx]}
        else:
            entry = stats.get(r.registry_country)
            if entry is None:
                stats[r.registry_country] = [1, idx]
            else:
                entry[0] += 1
    classes = {}
    n_mixed = 0
    for sid, stats in per_sub.items():
        if len(stats) > 1:
            n_mixed += 1
        origin = min(stats, key=lambda cc: (-stats[cc][0], stats[cc][1]))
        category = "local" if origin == home_country else "tourist"
        classes[sid] = SubscriberClass(sid, category, origin)
    return classes, n_mixed


def _group_days(days_sorted, visit_gap_days):
    """Split an ascending unique day list into visit segments (start/end indexes)."""
    segments = []
    start = 0
    for i in range(1, len(days_sorted)):
        if days_sorted[i] - days_sorted[i - 1] - 1 >= visit_gap_days:
            segments.append((start, i))
            start = i
    if days_sorted:
        segments.append((start, len(days_sorted)))
    return segments


def extract_visits(records, visit_gap_days: int = DEFAULT_VISIT_GAP_DAYS,
                   utc_offset_minutes: int = DEFAULT_UTC_OFFSET_MINUTES):
    """Segment one subscriber's records into visits ordered by first_seen.

    Input order does not matter (records are sorted by timestamp) and exact
    duplicate records are ignored, so the result is idempotent under record
    duplication. Raises ValueError if records span multiple subscribers.
    """
    if visit_gap_days <= 0:
        raise ValueError("visit_gap_days must be positive")
    seen = set()
    uniq = []
    sid = None
    for r in records:
        if sid is None:
            sid = r.subscriber_id
        elif r.subscriber_id != sid:
            raise ValueError("extract_visits expects records of a single subscriber")
        key = (r.ts, r.tower_id, r.registry_country, r.tac, r.service)
        if key in seen:
            continue
        seen.add(key)
        uniq.append(r)
    if not uniq:
        return []
    uniq.sort(key=lambda r: r.ts)

    by_day = {}
    for r in uniq:
        by_day.setdefault(local_day(r.ts, utc_offset_minutes), []).append(r)
    days_sorted = sorted(by_day)

    visits = []
    for lo, hi in _group_days(days_sorted, visit_gap_days):
        segment_days = days_sorted[lo:hi]
        segment_records = [r for d in segment_days for r in by_day[d]]
        towers = Counter(r.tower_id for r in segment_records)
        visits.append(Visit(
            subscriber_id=sid,
            first_seen=min(r.ts for r in segment_records),
            last_seen=max(r.ts for r in segment_records),
            active_days=frozenset(segment_days),
            towers_touched=towers,
        ))
    return visits


def visits_from_day_spans(sid, day_minmax, visit_gap_days: int):
    """Assemble visits from per-day (min_ts, max_ts) aggregates.

    ``day_minmax`` maps local day -> (first ts, last ts) for that day. This is
    the bulk-pipeline route; it yields the same visits as extract_visits minus
    the towers_touched multiset.
    """
    days_sorted = sorted(day_minmax)
    visits = []
    for lo, hi in _group_days(days_sorted, visit_gap_days):
        segment = days_sorted[lo:hi]
        visits.append(Visit(
            subscriber_id=sid,
            first_seen=min(day_minmax[d][0] for d in segment),
            last_seen=max(day_minmax[d][1] for d in segment),
            active_days=frozenset(segment),
        ))
    return visits


def visits_by_subscriber(records, visit_gap_days: int = DEFAULT_VISIT_GAP_DAYS,
                         utc_offset_minutes: int = DEFAULT_UTC_OFFSET_MINUTES):
    """extract_visits applied per subscriber over a mixed record stream."""
    per_sub = {}
    for r in records:
        per_sub.setdefault(r.subscriber_id, []).append(r)
    return {sid: extract_visits(recs, visit_gap_days, utc_offset_minutes)
            for sid, recs in per_sub.items()}


def visits_csv_lines(visits_by_sid, classes):
    """Rows for the visits.csv export, sorted by (subscriber, first_seen)."""
    lines = ["subscriber_id,origin_country,first_seen,last_seen,n_active_days"]
    for sid in sorted(visits_by_sid):
        origin = classes[sid].origin_country if sid in classes else ""
        for v in visits_by_sid[sid]:
            lines.append(f"{sid},{origin},{format_iso_ts(v.first_seen)},"
                         f"{format_iso_ts(v.last_seen)},{len(v.active_days)}")
    return lines
