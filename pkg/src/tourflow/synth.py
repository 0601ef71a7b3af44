"""Deterministic synthetic CDR world generator with exported ground truth.

Every random draw comes from seeded splitmix64 streams, one stream per
subscriber plus fixed streams for world fixtures, so a (seed, config) pair
reproduces byte-identical output files. Ground truth (visits, movements,
interest mixes, planted scale) is emitted as separate CSVs, never inferred
from the generated records after the fact.
"""

from __future__ import annotations

import json
import os
import zlib
from dataclasses import dataclass, field, fields

from . import congestion
from .ingest import POI_CATEGORIES, Arc, RoadGraph, Tower
from .rng import SplitMix64, substream_seed
from .util import (DataError, atomic_write_text, format_iso_date, format_iso_ts,
                   haversine_m, parse_iso_date)

REAL_CATEGORIES = POI_CATEGORIES[:5]  # towers are tagged with these; "other" is a fallback

# substream domains
_D_GRAPH = 1
_D_TOWERS = 2
_D_COUNTS = 3
_D_SUBSCRIBER = 10


@dataclass
class SynthEvent:
    name: str
    start: str  # YYYY-MM-DD, local
    end: str
    attraction: float = 1.0


@dataclass
class VisitModel:
    arrival_rate_per_day: float = 1.0  # relative arrival intensity
    stay_geom_p: float = 0.45  # stay length = 1 + Geometric(p) days
    revisit_prob: float = 0.25
    max_visits: int = 4
    active_hours_geom_p: float = 0.35  # active hours per day = 1 + Geometric(p)


@dataclass
class MovementModel:
    step_prob_per_hour: float = 0.5
    max_hop_m: float | None = None  # None = any tower reachable in one hop


DEFAULT_COUNTRY_MIX = {"ES": 0.55, "FR": 0.35, "RU": 0.04, "BE": 0.02, "PT": 0.02, "NL": 0.02}

DEFAULT_INTEREST_MIX = {
    # anchored loosely to the reported nationality-interest splits
    "ES": {"shopping": 0.45, "nature": 0.25, "culture": 0.15, "sports": 0.10, "wellness": 0.05},
    "FR": {"shopping": 0.40, "nature": 0.27, "culture": 0.18, "sports": 0.10, "wellness": 0.05},
    "RU": {"shopping": 0.10, "nature": 0.60, "culture": 0.17, "sports": 0.08, "wellness": 0.05},
    "NL": {"shopping": 0.33, "nature": 0.33, "culture": 0.14, "sports": 0.15, "wellness": 0.05},
}

DEFAULT_TAC_POOL = [
    ("35875106", "pearfone", "P6", 420.0),
    ("35316809", "pearfone", "P6 Plus", 560.0),
    ("35998205", "pearfone", "P7", 740.0),
    ("86471203", "starlet", "S5", 380.0),
    ("86471299", "starlet", "S5 Mini", 260.0),
    ("35209004", "starlet", "Note Pro", 820.0),
    ("49015420", "budgetel", "B1", 90.0),
    ("49015433", "budgetel", "B2", 130.0),
    ("35672801", "budgetel", "B3 Lite", 70.0),
    ("91004482", "lumora", "L9", 980.0),
    ("91004483", "lumora", "L9 Max", 1150.0),
    ("35404902", "lumora", "L5", 510.0),
]


@dataclass
class SynthConfig:
    seed: int = 42
    n_subscribers: int = 1000
    n_towers: int = 30
    n_zones: int = 6
    country_mix: dict = field(default_factory=lambda: dict(DEFAULT_COUNTRY_MIX))
    local_share: float = 0.2
    home_country: str = "AD"
    start_date: str = "2015-07-01"
    n_days: int = 31
    visit: VisitModel = field(default_factory=VisitModel)
    movement: MovementModel = field(default_factory=MovementModel)
    interest_mix: dict = field(default_factory=lambda: {k: dict(v) for k, v in
                                                        DEFAULT_INTEREST_MIX.items()})
    records_per_active_hour: float = 1.5
    tac_pool: list = field(default_factory=lambda: [tuple(t) for t in DEFAULT_TAC_POOL])
    events: list = field(default_factory=list)
    graph_nodes: int = 60
    graph_edges: int = 150
    bbox: tuple = (42.42, 1.40, 42.66, 1.80)  # lat0, lon0, lat1, lon1
    planted_beta: float = 4.2
    count_noise_sigma: float = 0.0
    n_stations: int = 20
    od_window_minutes: int = 60
    od_max_gap_minutes: int = 60
    visit_gap_days: int = 2
    utc_offset_minutes: int = 120

    def validate(self):
        problems = []
        if self.n_subscribers < 0:
            problems.append("n_subscribers: must be >= 0")
        if self.n_towers < len(REAL_CATEGORIES):
            problems.append(f"n_towers: need at least {len(REAL_CATEGORIES)}")
        if self.n_zones < 1:
            problems.append("n_zones: must be >= 1")
        if self.graph_nodes < 2:
            problems.append("graph_nodes: must be >= 2")
        if self.graph_edges < self.graph_nodes - 1:
            problems.append("graph_edges: too few for a connected graph")
        if self.n_days < 1:
            problems.append("n_days: must be >= 1")
        s = sum(self.country_mix.values())
        if abs(s - 1.0) > 1e-9:
            problems.append(f"country_mix: shares sum to {s!r}, expected 1")
        if any(v < 0 for v in self.country_mix.values()):
            problems.append("country_mix: negative share")
        if not 0.0 <= self.local_share < 1.0:
            problems.append("local_share: must be in [0, 1)")
        for cc, mix in self.interest_mix.items():
            if abs(sum(mix.values()) - 1.0) > 1e-9:
                problems.append(f"interest_mix[{cc}]: weights must sum to 1")
            bad = set(mix) - set(REAL_CATEGORIES)
            if bad:
                problems.append(f"interest_mix[{cc}]: unknown categories {sorted(bad)}")
        if self.records_per_active_hour < 0:
            problems.append("records_per_active_hour: must be >= 0")
        if self.visit.arrival_rate_per_day < 0:
            problems.append("visit.arrival_rate_per_day: must be >= 0")
        if not 0.0 < self.visit.stay_geom_p <= 1.0:
            problems.append("visit.stay_geom_p: must be in (0, 1]")
        if not 0.0 <= self.visit.revisit_prob < 1.0:
            problems.append("visit.revisit_prob: must be in [0, 1)")
        if not 0.0 <= self.movement.step_prob_per_hour <= 1.0:
            problems.append("movement.step_prob_per_hour: must be in [0, 1]")
        if self.planted_beta <= 0:
            problems.append("planted_beta: must be > 0")
        if self.count_noise_sigma < 0:
            problems.append("count_noise_sigma: must be >= 0")
        if self.od_window_minutes <= 0 or self.od_max_gap_minutes <= 0:
            problems.append("od window/gap minutes: must be > 0")
        if self.visit_gap_days <= 0:
            problems.append("visit_gap_days: must be > 0")
        if not self.tac_pool:
            problems.append("tac_pool: must not be empty")
        for entry in self.tac_pool:
            tac = entry[0]
            if len(tac) != 8 or not tac.isdigit():
                problems.append(f"tac_pool: bad tac {tac!r}")
            if float(entry[3]) < 0:
                problems.append(f"tac_pool: negative price for {tac}")
        for ev in self.events:
            try:
                if parse_iso_date(ev.end) < parse_iso_date(ev.start):
                    problems.append(f"events[{ev.name}]: end precedes start")
            except ValueError:
                problems.append(f"events[{ev.name}]: bad dates")
            if ev.attraction < 0:
                problems.append(f"events[{ev.name}]: negative attraction")
        if problems:
            raise DataError("invalid synth config: " + "; ".join(problems))

    @classmethod
    def from_json(cls, source):
        if isinstance(source, (str, os.PathLike)):
            with open(source, "r", encoding="utf-8") as f:
                obj = json.load(f)
        else:
            obj = dict(source)
        known = {f.name for f in fields(cls)}
        unknown = set(obj) - known
        if unknown:
            raise DataError(f"invalid synth config: unknown keys {sorted(unknown)}")
        kwargs = dict(obj)
        if "visit" in kwargs:
            kwargs["visit"] = VisitModel(**kwargs["visit"])
        if "movement" in kwargs:
            kwargs["movement"] = MovementModel(**kwargs["movement"])
        if "events" in kwargs:
            kwargs["events"] = [SynthEvent(**e) for e in kwargs["events"]]
        if "tac_pool" in kwargs:
            kwargs["tac_pool"] = [tuple(t) for t in kwargs["tac_pool"]]
        if "bbox" in kwargs:
            kwargs["bbox"] = tuple(kwargs["bbox"])
        cfg = cls(**kwargs)
        cfg.validate()
        return cfg


@dataclass
class GenerationSummary:
    n_records: int
    n_subscribers: int
    subscribers_by_country: dict
    n_truth_movements: int
    n_stations: int
    paths: dict


_MMSS = [f"{i // 60:02d}:{i % 60:02d}Z" for i in range(3600)]


class _IsoCache:
    """Fast epoch-seconds -> ISO-8601 formatting via an hour-prefix cache."""

    def __init__(self):
        self.hours = {}

    def format(self, ts):
        h = ts // 3600
        prefix = self.hours.get(h)
        if prefix is None:
            prefix = self.hours[h] = format_iso_ts(h * 3600)[:14]
        return prefix + _MMSS[ts % 3600]


def _build_graph(cfg):
    rng = SplitMix64(substream_seed(cfg.seed, _D_GRAPH))
    lat0, lon0, lat1, lon1 = cfg.bbox
    nodes = []
    for i in range(cfg.graph_nodes):
        lat = lat0 + rng.random() * (lat1 - lat0)
        lon = lon0 + rng.random() * (lon1 - lon0)
        nodes.append((f"N{i:04d}", lat, lon))

    # topology: a chain for connectivity, then nearest-neighbor links until the target
    pairs = []
    seen = set()
    for i in range(cfg.graph_nodes - 1):
        pairs.append((i, i + 1))
        seen.add((i, i + 1))
    candidates = []
    for i in range(cfg.graph_nodes):
        dists = sorted(
            (haversine_m(nodes[i][1], nodes[i][2], nodes[j][1], nodes[j][2]), j)
            for j in range(cfg.graph_nodes) if j != i)
        for _, j in dists[:3]:
            key = (min(i, j), max(i, j))
            if key not in seen:
                seen.add(key)
                candidates.append(key)
    candidates.sort()
    for key in candidates:
        if len(pairs) >= cfg.graph_edges:
            break
        pairs.append(key)

    edges = []
    for k, (i, j) in enumerate(pairs):
        dist = haversine_m(nodes[i][1], nodes[i][2], nodes[j][1], nodes[j][2])
        length = max(50.0, round(dist * (1.1 + 0.3 * rng.random()), 1))
        speed = 30 + 10 * rng.randrange(7)  # 30..90 km/h
        cap = 400 + 200 * rng.randrange(9)  # 400..2000 veh/h
        chain = k < cfg.graph_nodes - 1
        bidir = 1 if chain or rng.random() >= 0.15 else 0
        edges.append((f"E{k:04d}", nodes[i][0], nodes[j][0], length, speed, cap, bidir))
    return nodes, edges


def _build_towers(cfg, nodes):
    rng = SplitMix64(substream_seed(cfg.seed, _D_TOWERS))
    towers = []
    for i in range(cfg.n_towers):
        _, nlat, nlon = nodes[i % len(nodes)]
        lat = nlat + (rng.random() - 0.5) * 0.004
        lon = nlon + (rng.random() - 0.5) * 0.004
        zone = f"Z{i % cfg.n_zones:02d}"
        category = REAL_CATEGORIES[i % len(REAL_CATEGORIES)]
        towers.append((f"T{i:03d}", lat, lon, zone, category))
    return towers


def _interest_tables(cfg, towers):
    """Per-country cumulative interest weights aligned to tower categories."""
    by_cat = {c: [] for c in REAL_CATEGORIES}
    for idx, t in enumerate(towers):
        by_cat[t[4]].append(idx)
    tables = {}
    countries = set(cfg.country_mix) | {cfg.home_country} | set(cfg.interest_mix)
    for cc in sorted(countries):
        mix = cfg.interest_mix.get(cc)
        if mix is None:
            mix = {c: 1.0 / len(REAL_CATEGORIES) for c in REAL_CATEGORIES}
        cats = [c for c in REAL_CATEGORIES if mix.get(c, 0.0) > 0.0]
        cum = []
        acc = 0.0
        for c in cats:
            acc += mix[c]
            cum.append(acc)
        tables[cc] = (cats, cum)
    return tables, by_cat


def _tac_table(cfg):
    """Country-tilted cumulative weights over the TAC pool (deterministic)."""
    tables = {}
    pool = cfg.tac_pool
    countries = set(cfg.country_mix) | {cfg.home_country}
    for cc in sorted(countries):
        base = zlib.crc32(cc.encode())
        weights = [1 + (base + j) % 5 for j in range(len(pool))]
        cum = []
        acc = 0.0
        for w in weights:
            acc += w
            cum.append(acc)
        tables[cc] = cum
    return tables


def _day_weights(cfg):
    start = parse_iso_date(cfg.start_date)
    boost = [cfg.visit.arrival_rate_per_day] * cfg.n_days
    for ev in cfg.events:
        d0 = parse_iso_date(ev.start) - start
        d1 = parse_iso_date(ev.end) - start
        for d in range(max(0, d0), min(cfg.n_days - 1, d1) + 1):
            boost[d] *= ev.attraction
    cum = []
    acc = 0.0
    for w in boost:
        acc += w
        cum.append(acc)
    return cum


def _pick_cum(rng, cum):
    """Index into a cumulative weight array."""
    u = rng.random() * cum[-1]
    lo, hi = 0, len(cum) - 1
    while lo < hi:
        mid = (lo + hi) // 2
        if u < cum[mid]:
            hi = mid
        else:
            lo = mid + 1
    return lo


def _country_table(cfg):
    items = sorted(cfg.country_mix.items())
    cum = []
    acc = 0.0
    for _, w in items:
        acc += w
        cum.append(acc)
    return [cc for cc, _ in items], cum


class _SubscriberSim:
    """Generates one subscriber's records and tracks its ground truth."""

    __slots__ = ("cfg", "rng", "sid", "country", "tac", "iso", "interest",
                 "by_cat", "towers", "hop_ok")

    def __init__(self, cfg, index, tables, by_cat, towers, tac_tables, hop_ok, iso,
                 country_table):
        self.cfg = cfg
        self.rng = SplitMix64(substream_seed(cfg.seed, _D_SUBSCRIBER, index))
        self.sid = f"s{index:06d}"
        if self.rng.random() < cfg.local_share:
            self.country = cfg.home_country
        else:
            countries, cum = country_table
            self.country = countries[_pick_cum(self.rng, cum)]
        self.tac = cfg.tac_pool[_pick_cum(self.rng, tac_tables[self.country])][0]
        self.interest = tables[self.country]
        self.by_cat = by_cat
        self.towers = towers
        self.hop_ok = hop_ok
        self.iso = iso

    def plan_visits(self, day_cum):
        cfg = self.cfg
        rng = self.rng
        if self.country == cfg.home_country:
            return [(0, cfg.n_days - 1)]
        visits = []
        d0 = _pick_cum(rng, day_cum)
        while len(visits) < cfg.visit.max_visits:
            stay = 1 + rng.geometric(cfg.visit.stay_geom_p)
            end = min(d0 + stay - 1, cfg.n_days - 1)
            visits.append((d0, end))
            if end >= cfg.n_days - 1 or rng.random() >= cfg.visit.revisit_prob:
                break
            gap = cfg.visit_gap_days + 1 + rng.geometric(0.5)
            d0 = end + gap
            if d0 > cfg.n_days - 1:
                break
        return visits

    def pick_tower(self, current):
        cats, cum = self.interest
        cat = cats[_pick_cum(self.rng, cum)]
        if current is not None and self.hop_ok is not None:
            candidates = self.hop_ok[current][cat]
        else:
            candidates = self.by_cat[cat]
        return candidates[self.rng.randrange(len(candidates))]


def generate(cfg: SynthConfig, out_dir) -> GenerationSummary:
    """Write the full synthetic world into out_dir and return its summary."""
    cfg.validate()
    os.makedirs(out_dir, exist_ok=True)
    nodes, edges = _build_graph(cfg)
    towers = _build_towers(cfg, nodes)
    tables, by_cat = _interest_tables(cfg, towers)
    tac_tables = _tac_table(cfg)
    day_cum = _day_weights(cfg)
    country_table = _country_table(cfg)
    iso = _IsoCache()

    hop_ok = None
    if cfg.movement.max_hop_m is not None:
        hop_ok = []
        for i, t in enumerate(towers):
            per_cat = {}
            for cat in REAL_CATEGORIES:
                near = [j for j in by_cat[cat]
                        if haversine_m(t[1], t[2], towers[j][1], towers[j][2])
                        <= cfg.movement.max_hop_m]
                if not near:
                    nearest = min(by_cat[cat],
                                  key=lambda j: (haversine_m(t[1], t[2],
                                                             towers[j][1], towers[j][2]), j))
                    near = [nearest]
                per_cat[cat] = near
            hop_ok.append(per_cat)

    start_day = parse_iso_date(cfg.start_date)
    off_s = cfg.utc_offset_minutes * 60
    window_s = cfg.od_window_minutes * 60
    max_gap_s = cfg.od_max_gap_minutes * 60
    n_towers = cfg.n_towers

    paths = {name: os.path.join(out_dir, name) for name in (
        "cdr.csv", "towers.csv", "roads_nodes.csv", "roads_edges.csv", "pois.csv",
        "counts.csv", "tac_prices.csv", "truth_visits.csv", "truth_od.csv",
        "truth_interests.csv", "truth_beta.txt", "truth_subscribers.csv")}

    truth_od = {}
    truth_visit_lines = ["subscriber_id,first_seen,last_seen,active_days"]
    truth_sub_lines = ["subscriber_id,country,tac"]
    country_counts = {}
    n_records = 0

    services = ("call", "sms", "data")
    tmp_cdr = paths["cdr.csv"] + ".tmp~"
    with open(tmp_cdr, "w", encoding="utf-8", newline="") as f:
        f.write("subscriber_id,timestamp,tower_id,registry_country,tac,service\n")
        for index in range(cfg.n_subscribers):
            sim = _SubscriberSim(cfg, index, tables, by_cat, towers, tac_tables, hop_ok, iso,
                                 country_table)
            rng = sim.rng
            country_counts[sim.country] = country_counts.get(sim.country, 0) + 1
            truth_sub_lines.append(f"{sim.sid},{sim.country},{sim.tac}")
            prefix = f"{sim.sid},"
            suffix_base = f",{sim.country},{sim.tac},"
            tower = None
            seq = []  # (ts, tower index) in emission order
            lines = []
            for v0, v1 in sim.plan_visits(day_cum):
                first_ts = None
                last_ts = None
                for d in range(v0, v1 + 1):
                    day_local = (start_day + d) * 86400
                    wake = 7 + rng.randrange(12)
                    n_hours = min(1 + rng.geometric(cfg.visit.active_hours_geom_p),
                                  24 - wake)
                    for h in range(wake, wake + n_hours):
                        if tower is None or rng.random() < cfg.movement.step_prob_per_hour:
                            tower = sim.pick_tower(tower)
                        k = rng.poisson(cfg.records_per_active_hour)
                        if k < 1:
                            k = 1
                        secs = sorted({rng.randrange(3600) for _ in range(k)})
                        tid = towers[tower][0]
                        for s in secs:
                            ts = day_local + h * 3600 + s - off_s
                            seq.append((ts, tower))
                            u = rng.random()
                            svc = services[0] if u < 0.5 else services[1] if u < 0.8 \
                                else services[2]
                            lines.append(prefix + iso.format(ts) + "," + tid
                                         + suffix_base + svc)
                            if first_ts is None:
                                first_ts = ts
                            last_ts = ts
                if first_ts is not None:
                    days = ";".join(format_iso_date(start_day + d) for d in range(v0, v1 + 1))
                    truth_visit_lines.append(
                        f"{sim.sid},{format_iso_ts(first_ts)},{format_iso_ts(last_ts)},{days}")
            if lines:
                f.write("\n".join(lines))
                f.write("\n")
                n_records += len(lines)
            for i in range(len(seq) - 1):
                ts_a, ta = seq[i]
                ts_b, tb = seq[i + 1]
                if ta != tb and ts_b - ts_a <= max_gap_s:
                    key = ((ts_a // window_s) * n_towers + ta) * n_towers + tb
                    truth_od[key] = truth_od.get(key, 0) + 1
    os.replace(tmp_cdr, paths["cdr.csv"])

    _write_reference(cfg, paths, nodes, edges, towers)
    atomic_write_text(paths["truth_visits.csv"], "\n".join(truth_visit_lines) + "\n")
    atomic_write_text(paths["truth_subscribers.csv"], "\n".join(truth_sub_lines) + "\n")

    od_lines = ["window_start,from_tower,to_tower,count"]
    for key in sorted(truth_od):
        widx, rem = divmod(key, n_towers * n_towers)
        a, b = divmod(rem, n_towers)
        od_lines.append(f"{format_iso_ts(widx * window_s)},{towers[a][0]},{towers[b][0]},"
                        f"{truth_od[key]}")
    atomic_write_text(paths["truth_od.csv"], "\n".join(od_lines) + "\n")

    interest_lines = ["country,category,weight"]
    for cc in sorted(tables):
        cats, cum = tables[cc]
        mix = {}
        prev = 0.0
        for c, acc in zip(cats, cum):
            mix[c] = (acc - prev) / cum[-1]
            prev = acc
        for cat in POI_CATEGORIES:
            interest_lines.append(f"{cc},{cat},{mix.get(cat, 0.0)!r}")
    atomic_write_text(paths["truth_interests.csv"], "\n".join(interest_lines) + "\n")

    n_stations = _write_counts(cfg, paths, nodes, edges, towers, truth_od)
    atomic_write_text(paths["truth_beta.txt"], f"{cfg.planted_beta!r}\n")

    return GenerationSummary(
        n_records=n_records,
        n_subscribers=cfg.n_subscribers,
        subscribers_by_country=country_counts,
        n_truth_movements=sum(truth_od.values()),
        n_stations=n_stations,
        paths=paths,
    )


def _write_reference(cfg, paths, nodes, edges, towers):
    lines = ["tower_id,lat,lon,zone"]
    for tid, lat, lon, zone, _ in towers:
        lines.append(f"{tid},{lat:.6f},{lon:.6f},{zone}")
    atomic_write_text(paths["towers.csv"], "\n".join(lines) + "\n")

    lines = ["node_id,lat,lon"]
    for nid, lat, lon in nodes:
        lines.append(f"{nid},{lat:.6f},{lon:.6f}")
    atomic_write_text(paths["roads_nodes.csv"], "\n".join(lines) + "\n")

    lines = ["edge_id,from_node,to_node,length_m,freeflow_kmh,capacity_vph,bidirectional"]
    for eid, a, b, length, speed, cap, bidir in edges:
        lines.append(f"{eid},{a},{b},{length:.1f},{speed},{cap},{bidir}")
    atomic_write_text(paths["roads_edges.csv"], "\n".join(lines) + "\n")

    lines = ["poi_id,lat,lon,category"]
    for i, (tid, lat, lon, zone, category) in enumerate(towers):
        lines.append(f"P{i:04d},{lat:.6f},{lon:.6f},{category}")
    atomic_write_text(paths["pois.csv"], "\n".join(lines) + "\n")

    lines = ["tac,brand,model,price_usd"]
    for tac, brand, model, price in cfg.tac_pool:
        lines.append(f"{tac},{brand},{model},{float(price)!r}")
    atomic_write_text(paths["tac_prices.csv"], "\n".join(lines) + "\n")


def _write_counts(cfg, paths, nodes, edges, towers, truth_od):
    """Traffic counts: planted_beta x assigned truth flow, with optional noise."""
    graph = RoadGraph(
        nodes={nid: (lat, lon) for nid, lat, lon in nodes},
        arcs=[arc for eid, a, b, length, speed, cap, bidir in edges
              for arc in ([Arc(eid, "F", a, b, length, speed, cap)]
                          + ([Arc(eid, "R", b, a, length, speed, cap)] if bidir else []))],
    )
    tower_objs = {t[0]: Tower(t[0], t[1], t[2], t[3]) for t in towers}
    snapping = congestion.snap_towers(tower_objs, graph, max_snap_m=1e9)

    n_towers = cfg.n_towers
    window_s = cfg.od_window_minutes * 60
    od_counts = {}
    for key, c in truth_od.items():
        widx, rem = divmod(key, n_towers * n_towers)
        a, b = divmod(rem, n_towers)
        od_counts[(widx, towers[a][0], towers[b][0])] = c
    od = congestion.OdMatrix(cfg.od_window_minutes, od_counts)
    flows = congestion.assign_to_links(od, graph, snapping)

    per_edge = {}
    for (widx, ai), fl in flows.flows.items():
        d = per_edge.setdefault(graph.arcs[ai].edge_id, {})
        d[widx] = d.get(widx, 0) + fl
    totals = sorted(((-sum(w.values()), eid) for eid, w in per_edge.items()))
    stations = [eid for _, eid in totals[:cfg.n_stations]]

    rng = SplitMix64(substream_seed(cfg.seed, _D_COUNTS))
    lines = ["edge_id,window_start,window_minutes,vehicle_count"]
    for eid in sorted(stations):
        for widx in sorted(per_edge[eid]):
            f = per_edge[eid][widx]
            value = cfg.planted_beta * f
            if cfg.count_noise_sigma > 0:
                value *= max(0.0, 1.0 + cfg.count_noise_sigma * rng.gauss())
            lines.append(f"{eid},{format_iso_ts(widx * window_s)},"
                         f"{cfg.od_window_minutes},{value!r}")
    atomic_write_text(paths["counts.csv"], "\n".join(lines) + "\n")
    return len(stations)
