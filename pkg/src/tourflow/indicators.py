"""Tourist indicators over arbitrary time windows.

All operations are pure over immutable inputs; aggregations are commutative
and associative so results are independent of record order and of subscriber
partitioning. Float reductions iterate subscribers in sorted order so that
partitioned runs reproduce byte-identical outputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .ingest import POI_CATEGORIES
from .util import haversine_m, local_day, local_hour_index

DEFAULT_DAY_HOURS = (8, 20)


@dataclass(slots=True, frozen=True)
class TimeWindow:
    start: int  # epoch seconds, inclusive
    end: int  # epoch seconds, exclusive

    def __post_init__(self):
        if self.start >= self.end:
            raise ValueError("TimeWindow start must precede end")

    def contains(self, ts: int) -> bool:
        return self.start <= ts < self.end

    def day_span(self, utc_offset_minutes: int):
        """Inclusive (first, last) local day numbers the window intersects."""
        return (local_day(self.start, utc_offset_minutes),
                local_day(self.end - 1, utc_offset_minutes))


@dataclass(slots=True, frozen=True)
class CountryFlow:
    visitors: int
    tourist_days: int


@dataclass
class SegmentedFlow:
    per_country: dict  # origin country -> CountryFlow

    @property
    def total_visitors(self) -> int:
        return sum(f.visitors for f in self.per_country.values())

    @property
    def total_tourist_days(self) -> int:
        return sum(f.tourist_days for f in self.per_country.values())


@dataclass
class SpatialDistribution:
    period: str  # "day" | "night"
    shares: dict  # zone -> share in [0, 1]; zero presence -> all zeros
    dispersion: float  # normalized entropy in [0, 1]
    n_presence: int  # distinct (tourist, zone, local hour) triples counted


@dataclass
class InterestProfile:
    weights: dict  # category -> weight, nonnegative, summing to 1


def _days_in_span(days, lo, hi):
    return sum(1 for d in days if lo <= d <= hi)


def segmented_flows(visits_by_sid, classes, window: TimeWindow,
                    utc_offset_minutes: int) -> SegmentedFlow:
    """Distinct tourists and (tourist, day) pairs per origin country in the window."""
    lo, hi = window.day_span(utc_offset_minutes)
    visitors = {}
    days = {}
    for sid in visits_by_sid:
        cls = classes.get(sid)
        if cls is None or cls.category != "tourist":
            continue
        active = set()
        for v in visits_by_sid[sid]:
            active.update(d for d in v.active_days if lo <= d <= hi)
        if active:
            visitors[cls.origin_country] = visitors.get(cls.origin_country, 0) + 1
            days[cls.origin_country] = days.get(cls.origin_country, 0) + len(active)
    return SegmentedFlow({cc: CountryFlow(visitors[cc], days[cc]) for cc in sorted(visitors)})


def new_tourists(visits_by_sid, event: TimeWindow, utc_offset_minutes: int,
                 lookback_days=None):
    """Subscribers attending the event with no active day in the lookback period.

    The lookback period is [event.start - lookback_days, event.start) in local
    days; with lookback_days None, all available prior history disqualifies.
    A visit straddling the event start has prior active days and therefore does
    not count as new.
    """
    e_lo, e_hi = event.day_span(utc_offset_minutes)
    prior_hi = local_day(event.start - 1, utc_offset_minutes)
    if lookback_days is None:
        prior_lo = None
    else:
        prior_lo = local_day(event.start - lookback_days * 86400, utc_offset_minutes)
    out = set()
    for sid, visits in visits_by_sid.items():
        attends = False
        prior = False
        for v in visits:
            for d in v.active_days:
                if e_lo <= d <= e_hi:
                    attends = True
                if d <= prior_hi and (prior_lo is None or d >= prior_lo):
                    prior = True
        if attends and not prior:
            out.add(sid)
    return out


def repeat_tourists(visits_by_sid, event: TimeWindow, utc_offset_minutes: int,
                    followup_days=None):
    """Attendees with a distinct later visit starting within the follow-up period.

    Returns (set, revisit_rate); the rate denominator is the attendee count and
    the rate is 0.0 when no one attended. A single visit spanning past the event
    end is not a revisit.
    """
    e_lo, e_hi = event.day_span(utc_offset_minutes)
    cutoff = None if followup_days is None else event.end + followup_days * 86400
    revisitors = set()
    n_attendees = 0
    for sid, visits in visits_by_sid.items():
        attending = [v for v in visits
                     if any(e_lo <= d <= e_hi for d in v.active_days)]
        if not attending:
            continue
        n_attendees += 1
        for v in visits:
            if v.first_seen <= event.end:
                continue
            if cutoff is not None and v.first_seen > cutoff:
                continue
            if any(a is not v for a in attending):
                revisitors.add(sid)
                break
    rate = len(revisitors) / n_attendees if n_attendees else 0.0
    return revisitors, rate


def normalized_entropy(shares_values, n_zones: int) -> float:
    """Shannon entropy of the share vector divided by ln(number of zones)."""
    if n_zones <= 1:
        return 0.0
    h = -sum(p * math.log(p) for p in shares_values if p > 0.0)
    if h == 0.0:
        return 0.0
    return h / math.log(n_zones)


def spatial_distribution(records, classes, window: TimeWindow, period: str, towers,
                         utc_offset_minutes: int,
                         day_hours=DEFAULT_DAY_HOURS) -> SpatialDistribution:
    """Zone shares of tourist presence in the window, day or night period.

    The presence unit is a distinct (tourist, zone, local hour) triple, which
    damps bursty call behavior. Zones come from the tower file (tower_id where
    the zone label is empty); dispersion is normalized over all such zones.
    """
    if period not in ("day", "night"):
        raise ValueError(f"period must be 'day' or 'night', got {period!r}")
    lo_h, hi_h = day_hours
    zone_of = {tid: (t.zone if t.zone else tid) for tid, t in towers.items()}
    universe = sorted(set(zone_of.values()))
    triples = set()
    for r in records:
        if not window.contains(r.ts):
            continue
        cls = classes.get(r.subscriber_id)
        if cls is None or cls.category != "tourist":
            continue
        hidx = local_hour_index(r.ts, utc_offset_minutes)
        in_day = lo_h <= hidx % 24 < hi_h
        if in_day != (period == "day"):
            continue
        zone = zone_of.get(r.tower_id, r.tower_id)
        triples.add((r.subscriber_id, zone, hidx))
    per_zone = {z: 0 for z in universe}
    for _, zone, _ in triples:
        per_zone[zone] = per_zone.get(zone, 0) + 1
    return spatial_from_zone_counts(per_zone, period)


def spatial_from_zone_counts(per_zone, period: str) -> SpatialDistribution:
    """Shares and normalized entropy from presence counts over the zone universe.

    ``per_zone`` must list every zone of the universe (zero counts included);
    unknown towers fall back to their own label, widening the universe so the
    dispersion stays in [0, 1].
    """
    total = sum(per_zone.values())
    if total == 0:
        return SpatialDistribution(period, {z: 0.0 for z in sorted(per_zone)}, 0.0, 0)
    shares = {z: per_zone[z] / total for z in sorted(per_zone)}
    dispersion = normalized_entropy(shares.values(), len(per_zone))
    return SpatialDistribution(period, shares, dispersion, total)


def tower_category_weights(towers, pois, poi_radius_m: float = 300.0):
    """Category mix of each tower from POI counts within the radius.

    Towers with no POI in range get {"other": 1.0}. Distances are great-circle.
    """
    weights = {}
    for tid in sorted(towers):
        t = towers[tid]
        counts = {}
        for p in pois:
            if haversine_m(t.lat, t.lon, p.lat, p.lon) <= poi_radius_m:
                counts[p.category] = counts.get(p.category, 0) + 1
        total = sum(counts.values())
        if total == 0:
            weights[tid] = {"other": 1.0}
        else:
            weights[tid] = {c: counts[c] / total for c in sorted(counts)}
    return weights


def _normalize(vec):
    total = sum(vec.values())
    if total <= 0:
        return {}
    return {k: v / total for k, v in vec.items()}


def interest_profiles(records, classes, towers, pois, poi_radius_m: float = 300.0,
                      utc_offset_minutes: int = 120):
    """Per origin-country activity-interest distributions.

    Each subscriber's profile is the normalized sum of the category weights of
    the towers they connect to, one contribution per distinct (tower, local
    hour) stay; the country profile is the normalized sum of its subscribers'
    profiles. Locals fall under the home country.
    """
    tw = tower_category_weights(towers, pois, poi_radius_m)
    stays = {}
    for r in records:
        hidx = local_hour_index(r.ts, utc_offset_minutes)
        stays.setdefault(r.subscriber_id, set()).add((r.tower_id, hidx))

    per_sub = {}
    for sid in stays:
        acc = {}
        tower_hours = {}
        for tower_id, _ in stays[sid]:
            tower_hours[tower_id] = tower_hours.get(tower_id, 0) + 1
        for tower_id in sorted(tower_hours):
            w = tw.get(tower_id, {"other": 1.0})
            n = tower_hours[tower_id]
            for cat, x in w.items():
                acc[cat] = acc.get(cat, 0.0) + n * x
        per_sub[sid] = _normalize(acc)

    by_country = {}
    for sid in sorted(per_sub):
        cls = classes.get(sid)
        if cls is None:
            continue
        by_country.setdefault(cls.origin_country, []).append(per_sub[sid])
    profiles = {}
    for cc in sorted(by_country):
        acc = dict.fromkeys(POI_CATEGORIES, 0.0)
        for prof in by_country[cc]:
            for cat, x in prof.items():
                acc[cat] += x
        norm = _normalize(acc)
        profiles[cc] = InterestProfile({c: norm.get(c, 0.0) for c in POI_CATEGORIES})
    return profiles
