"""Input parsing and validation.

All inputs are plain CSV with fixed headers (see README for the schemas).
Parsing is strict: every loaded object satisfies its type invariants or the
load fails (reference data) / the row is rejected and counted (CDR stream).
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

from .util import DataError, parse_iso_ts

CDR_HEADER = ["subscriber_id", "timestamp", "tower_id", "registry_country", "tac", "service"]
SERVICES = ("call", "sms", "data")
POI_CATEGORIES = ("shopping", "nature", "culture", "sports", "wellness", "other")

MAX_REPORTED_REASONS = 100


@dataclass(slots=True)
class CdrRecord:
    subscriber_id: str
    ts: int  # epoch seconds, UTC
    tower_id: str
    registry_country: str
    tac: str | None
    service: str


@dataclass(slots=True, frozen=True)
class Tower:
    tower_id: str
    lat: float
    lon: float
    zone: str | None = None


@dataclass(slots=True, frozen=True)
class Arc:
    """One directed road arc; a bidirectional edge expands to two arcs sharing edge_id."""

    edge_id: str
    direction: str  # "F" forward (from->to as listed), "R" reverse
    from_node: str
    to_node: str
    length_m: float
    freeflow_kmh: float
    capacity_vph: float

    @property
    def travel_time_s(self) -> float:
        return self.length_m * 3.6 / self.freeflow_kmh


@dataclass
class RoadGraph:
    nodes: dict  # node_id -> (lat, lon)
    arcs: list  # list[Arc]
    out_arcs: dict = field(default_factory=dict)  # node_id -> [arc index]

    def __post_init__(self):
        if not self.out_arcs:
            out = {n: [] for n in self.nodes}
            # deterministic relaxation order: sorted by (edge_id, direction)
            for i in sorted(range(len(self.arcs)),
                            key=lambda k: (self.arcs[k].edge_id, self.arcs[k].direction)):
                out[self.arcs[i].from_node].append(i)
            self.out_arcs = out

    @property
    def n_edges(self) -> int:
        return len({a.edge_id for a in self.arcs})


@dataclass(slots=True, frozen=True)
class Poi:
    poi_id: str
    lat: float
    lon: float
    category: str


@dataclass(slots=True, frozen=True)
class TrafficCount:
    edge_id: str
    window_start: int  # epoch seconds
    window_minutes: int
    vehicle_count: float  # nonnegative; synthetic counts may carry decimals


@dataclass(slots=True, frozen=True)
class TacEntry:
    brand: str
    model: str
    price_usd: float


@dataclass
class ParseReport:
    rows_read: int = 0
    rows_rejected: int = 0
    reasons: list = field(default_factory=list)  # first 100 "row N: why" strings

    def reject(self, row_number: int, why: str):
        self.rows_rejected += 1
        if len(self.reasons) < MAX_REPORTED_REASONS:
            self.reasons.append(f"row {row_number}: {why}")


@dataclass
class ReferenceBundle:
    towers: dict  # tower_id -> Tower
    graph: RoadGraph
    pois: list
    counts: list
    tac_prices: dict  # tac -> TacEntry
    poi_category_warnings: int = 0

    @property
    def zones(self) -> list:
        """Distinct zone labels over the tower file (tower_id where zone empty), sorted."""
        return sorted({t.zone if t.zone else t.tower_id for t in self.towers.values()})


def _reader_from(source):
    if isinstance(source, (bytes, bytearray)):
        source = io.BytesIO(source)
    if isinstance(source, io.TextIOBase):
        return source
    return io.TextIOWrapper(source, encoding="utf-8", newline="")


def validate_cdr_row(row, date_cache, cc_cache, tac_cache):
    """Validate one CSV row; return a field tuple or raise ValueError with the reason.

    Caches avoid re-validating the handful of distinct dates / country codes /
    TACs that dominate real streams.
    """
    if len(row) != 6:
        raise ValueError("wrong field count")
    sid, ts_s, tower, cc, tac, service = row
    if not sid:
        raise ValueError("empty subscriber_id")
    ts = date_cache.get(ts_s)
    if ts is None:
        ts = parse_iso_ts(ts_s)  # raises ValueError("bad timestamp ...")
        if len(date_cache) < 1 << 20:
            date_cache[ts_s] = ts
    if not tower:
        raise ValueError("empty tower_id")
    if cc not in cc_cache:
        if len(cc) == 2 and cc.isascii() and cc.isalpha() and cc.isupper():
            cc_cache.add(cc)
        else:
            raise ValueError("bad registry_country")
    if tac and tac not in tac_cache:
        if len(tac) == 8 and tac.isdigit():
            tac_cache.add(tac)
        else:
            raise ValueError("bad tac")
    if service not in SERVICES:
        raise ValueError("bad service")
    return sid, ts, tower, cc, tac, service


def parse_cdr_stream(source, policy: str = "skip_and_count"):
    """Parse a CDR byte stream into records plus a loss-accounting report.

    Returns ``(iterator, report)``; the report is complete once the iterator
    is exhausted (rows_read == yielded + rejected). With ``fail_fast`` the
    first malformed row raises DataError carrying the row number.
    """
    if policy not in ("fail_fast", "skip_and_count"):
        raise ValueError(f"unknown policy {policy!r}")
    f = _reader_from(source)
    reader = csv.reader(f)
    header = next(reader, None)
    if header != CDR_HEADER:
        raise DataError(f"bad CDR header: expected {','.join(CDR_HEADER)}")
    report = ParseReport()

    def gen():
        date_cache, cc_cache, tac_cache = {}, set(), set()
        for row_number, row in enumerate(reader, start=2):
            report.rows_read += 1
            try:
                sid, ts, tower, cc, tac, service = validate_cdr_row(
                    row, date_cache, cc_cache, tac_cache)
            except ValueError as e:
                if policy == "fail_fast":
                    raise DataError(str(e), row=row_number) from None
                report.reject(row_number, str(e))
                continue
            yield CdrRecord(sid, ts, tower, cc, tac if tac else None, service)

    return gen(), report


def _open_csv(path, expected_header):
    f = open(path, "r", encoding="utf-8", newline="")
    reader = csv.reader(f)
    header = next(reader, None)
    if header != expected_header:
        f.close()
        raise DataError(f"bad header: expected {','.join(expected_header)}", path=path)
    return f, reader


def _float_field(value, name, path, row):
    try:
        x = float(value)
    except ValueError:
        raise DataError(f"bad {name} {value!r}", path=path, row=row) from None
    if not math.isfinite(x):
        raise DataError(f"bad {name} {value!r}", path=path, row=row)
    return x


def load_towers(path):
    towers = {}
    f, reader = _open_csv(path, ["tower_id", "lat", "lon", "zone"])
    with f:
        for i, row in enumerate(reader, start=2):
            if len(row) != 4:
                raise DataError("wrong field count", path=path, row=i)
            tid, lat_s, lon_s, zone = row
            if tid in towers:
                raise DataError(f"duplicate tower_id {tid}", path=path)
            lat = _float_field(lat_s, "lat", path, i)
            lon = _float_field(lon_s, "lon", path, i)
            if not -90.0 <= lat <= 90.0 or not -180.0 <= lon <= 180.0:
                raise DataError(f"coordinates out of range for tower {tid}", path=path, row=i)
            towers[tid] = Tower(tid, lat, lon, zone if zone else None)
    return towers


def load_road_graph(nodes_path, edges_path):
    nodes = {}
    f, reader = _open_csv(nodes_path, ["node_id", "lat", "lon"])
    with f:
        for i, row in enumerate(reader, start=2):
            if len(row) != 3:
                raise DataError("wrong field count", path=nodes_path, row=i)
            nid, lat_s, lon_s = row
            if nid in nodes:
                raise DataError(f"duplicate node_id {nid}", path=nodes_path)
            nodes[nid] = (_float_field(lat_s, "lat", nodes_path, i),
                          _float_field(lon_s, "lon", nodes_path, i))

    arcs = []
    seen_edges = set()
    hdr = ["edge_id", "from_node", "to_node", "length_m", "freeflow_kmh",
           "capacity_vph", "bidirectional"]
    f, reader = _open_csv(edges_path, hdr)
    with f:
        for i, row in enumerate(reader, start=2):
            if len(row) != 7:
                raise DataError("wrong field count", path=edges_path, row=i)
            eid, a, b, length_s, speed_s, cap_s, bidir = row
            if eid in seen_edges:
                raise DataError(f"duplicate edge_id {eid}", path=edges_path)
            seen_edges.add(eid)
            for endpoint in (a, b):
                if endpoint not in nodes:
                    raise DataError(f"edge {eid} references unknown node {endpoint}",
                                    path=edges_path)
            length = _float_field(length_s, "length_m", edges_path, i)
            speed = _float_field(speed_s, "freeflow_kmh", edges_path, i)
            cap = _float_field(cap_s, "capacity_vph", edges_path, i)
            if length <= 0 or speed <= 0 or cap <= 0:
                raise DataError(f"nonpositive length/speed/capacity on edge {eid}",
                                path=edges_path, row=i)
            if bidir not in ("0", "1"):
                raise DataError(f"bad bidirectional flag {bidir!r}", path=edges_path, row=i)
            arcs.append(Arc(eid, "F", a, b, length, speed, cap))
            if bidir == "1":
                arcs.append(Arc(eid, "R", b, a, length, speed, cap))
    return RoadGraph(nodes=nodes, arcs=arcs)


def load_pois(path):
    pois = []
    warnings = 0
    seen = set()
    f, reader = _open_csv(path, ["poi_id", "lat", "lon", "category"])
    with f:
        for i, row in enumerate(reader, start=2):
            if len(row) != 4:
                raise DataError("wrong field count", path=path, row=i)
            pid, lat_s, lon_s, cat = row
            if pid in seen:
                raise DataError(f"duplicate poi_id {pid}", path=path)
            seen.add(pid)
            if cat not in POI_CATEGORIES:
                cat = "other"
                warnings += 1
            pois.append(Poi(pid, _float_field(lat_s, "lat", path, i),
                            _float_field(lon_s, "lon", path, i), cat))
    return pois, warnings


def load_counts(path, known_edges=None):
    counts = []
    f, reader = _open_csv(path, ["edge_id", "window_start", "window_minutes", "vehicle_count"])
    with f:
        for i, row in enumerate(reader, start=2):
            if len(row) != 4:
                raise DataError("wrong field count", path=path, row=i)
            eid, start_s, minutes_s, n_s = row
            if known_edges is not None and eid not in known_edges:
                raise DataError(f"count references unknown edge {eid}", path=path)
            try:
                start = parse_iso_ts(start_s)
            except ValueError:
                raise DataError(f"bad window_start {start_s!r}", path=path, row=i) from None
            try:
                minutes = int(minutes_s)
            except ValueError:
                raise DataError(f"bad window_minutes {minutes_s!r}", path=path, row=i) from None
            if minutes <= 0:
                raise DataError(f"bad window_minutes {minutes_s!r}", path=path, row=i)
            n = _float_field(n_s, "vehicle_count", path, i)
            if n < 0:
                raise DataError(f"negative vehicle_count on edge {eid}", path=path, row=i)
            counts.append(TrafficCount(eid, start, minutes, n))
    return counts


def load_tac_prices(path):
    table = {}
    f, reader = _open_csv(path, ["tac", "brand", "model", "price_usd"])
    with f:
        for i, row in enumerate(reader, start=2):
            if len(row) != 4:
                raise DataError("wrong field count", path=path, row=i)
            tac, brand, model, price_s = row
            if tac in table:
                raise DataError(f"duplicate tac {tac}", path=path)
            if len(tac) != 8 or not tac.isdigit():
                raise DataError(f"bad tac {tac!r}", path=path, row=i)
            price = _float_field(price_s, "price_usd", path, i)
            if price < 0:
                raise DataError(f"negative price for tac {tac}", path=path, row=i)
            table[tac] = TacEntry(brand, model, price)
    return table


def load_reference(towers_path, roads_nodes_path, roads_edges_path, pois_path,
                   counts_path, tac_prices_path) -> ReferenceBundle:
    """Load and cross-validate the full reference set.

    Referential integrity (edge endpoints, count-station edge ids) is checked
    here; any violation raises DataError naming the offending id.
    """
    towers = load_towers(towers_path)
    graph = load_road_graph(roads_nodes_path, roads_edges_path)
    pois, poi_warnings = load_pois(pois_path)
    known_edges = {a.edge_id for a in graph.arcs}
    counts = load_counts(counts_path, known_edges)
    tac_prices = load_tac_prices(tac_prices_path)
    return ReferenceBundle(towers=towers, graph=graph, pois=pois, counts=counts,
                           tac_prices=tac_prices, poi_category_warnings=poi_warnings)
