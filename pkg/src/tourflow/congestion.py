"""Tower-to-tower O-D estimation, all-or-nothing road assignment, count scaling.

Assignment is deterministic: shortest paths by travel time with ties broken on
(cost, hop count, lexicographic node sequence, incoming edge id). Unreachable
O-D pairs are reported, never silently dropped into link flows.
"""

from __future__ import annotations

import csv
import heapq
import math
from dataclasses import dataclass, field

from .util import DataError, format_iso_ts, haversine_m, parse_iso_ts


@dataclass
class OdMatrix:
    window_minutes: int
    counts: dict  # (window_index, from_tower, to_tower) -> movements

    @property
    def total_movements(self) -> int:
        return sum(self.counts.values())

    def window_start_ts(self, window_index: int) -> int:
        return window_index * self.window_minutes * 60


@dataclass
class LinkFlows:
    window_minutes: int
    graph: object  # RoadGraph the arc indexes refer to
    flows: dict  # (window_index, arc_index) -> movement units
    n_unreachable_pairs: int = 0
    n_unreachable_movements: int = 0
    unreachable: set = field(default_factory=set)  # (from_tower, to_tower)


@dataclass
class ScaleFit:
    beta: float  # vehicles per movement unit
    rmse: float
    n_stations_used: int
    n_excluded_zero_flow: int = 0


@dataclass
class PeakCongestion:
    score: float  # max volume/capacity ratio
    edge_id: str | None = None
    direction: str | None = None
    window_index: int | None = None


def build_od_matrix(records, classes, segment_filter: str = "all",
                    window_minutes: int = 60, max_gap_minutes: int = 60) -> OdMatrix:
    """Count tower-to-tower movements per time window.

    Each pair of consecutive records of one subscriber at different towers
    within max_gap_minutes contributes one movement, timestamped at the
    earlier record's window (departure convention). segment_filter is
    "all", "tourists", or an origin country code.
    """
    if window_minutes <= 0 or max_gap_minutes <= 0:
        raise ValueError("window_minutes and max_gap_minutes must be positive")

    def keep(sid):
        if segment_filter == "all":
            return True
        cls = classes.get(sid)
        if cls is None:
            return False
        if segment_filter == "tourists":
            return cls.category == "tourist"
        return cls.origin_country == segment_filter

    per_sub = {}
    for r in records:
        if keep(r.subscriber_id):
            per_sub.setdefault(r.subscriber_id, []).append((r.ts, r.tower_id))
    window_s = window_minutes * 60
    max_gap_s = max_gap_minutes * 60
    counts = {}
    for sid in per_sub:
        seq = per_sub[sid]
        seq.sort(key=lambda p: p[0])
        for i in range(len(seq) - 1):
            ts_a, tower_a = seq[i]
            ts_b, tower_b = seq[i + 1]
            if tower_a != tower_b and ts_b - ts_a <= max_gap_s:
                key = (ts_a // window_s, tower_a, tower_b)
                counts[key] = counts.get(key, 0) + 1
    return OdMatrix(window_minutes, counts)


def snap_towers(towers, graph, max_snap_m: float = 2000.0):
    """Nearest-node mapping for every tower, ties broken lexicographically.

    A tower farther than max_snap_m from every node is a data error.
    """
    if not graph.nodes:
        raise DataError("cannot snap towers: road graph has no nodes")
    node_items = sorted(graph.nodes.items())
    snapping = {}
    for tid in sorted(towers):
        t = towers[tid]
        best = min((haversine_m(t.lat, t.lon, lat, lon), nid)
                   for nid, (lat, lon) in node_items)
        if best[0] > max_snap_m:
            raise DataError(f"tower {tid} unsnappable: nearest node {best[1]} "
                            f"at {best[0]:.0f} m exceeds {max_snap_m:.0f} m")
        snapping[tid] = best[1]
    return snapping


def shortest_path_tree(graph, src):
    """Deterministic Dijkstra from src.

    Returns {node: (cost_seconds, hops, pred_arc_index)}; ties resolved by
    (cost, hops, lexicographic node sequence, incoming (edge_id, direction)).
    """
    arcs = graph.arcs
    settled = {}
    # heap entries: (cost, hops, node path tuple, incoming arc sort key, node, pred arc)
    heap = [(0.0, 0, (src,), ("", ""), src, None)]
    while heap:
        cost, hops, path, _, node, pred = heapq.heappop(heap)
        if node in settled:
            continue
        settled[node] = (cost, hops, pred)
        for ai in graph.out_arcs.get(node, ()):
            a = arcs[ai]
            if a.to_node in settled:
                continue
            heapq.heappush(heap, (cost + a.travel_time_s, hops + 1, path + (a.to_node,),
                                  (a.edge_id, a.direction), a.to_node, ai))
    return settled


def assign_to_links(od: OdMatrix, graph, snapping) -> LinkFlows:
    """All-or-nothing assignment of O-D movements onto shortest paths.

    Pairs snapped to one node contribute nothing; unreachable pairs are
    counted and reported on the result.
    """
    trees = {}
    path_cache = {}
    flows = {}
    unreachable = set()
    n_unreach_pairs = 0
    n_unreach_moves = 0
    arcs = graph.arcs
    for key in sorted(od.counts):
        widx, a, b = key
        c = od.counts[key]
        try:
            src, dst = snapping[a], snapping[b]
        except KeyError as e:
            raise DataError(f"O-D references tower {e.args[0]} absent from snapping") from None
        if src == dst:
            continue
        pk = (src, dst)
        arc_list = path_cache.get(pk)
        if arc_list is None:
            tree = trees.get(src)
            if tree is None:
                tree = trees[src] = shortest_path_tree(graph, src)
            if dst not in tree:
                arc_list = path_cache[pk] = ()
            else:
                rev = []
                node = dst
                while node != src:
                    _, _, pred = tree[node]
                    rev.append(pred)
                    node = arcs[pred].from_node
                arc_list = path_cache[pk] = tuple(reversed(rev))
        if not arc_list:
            if (a, b) not in unreachable:
                unreachable.add((a, b))
                n_unreach_pairs += 1
            n_unreach_moves += c
            continue
        for ai in arc_list:
            fk = (widx, ai)
            flows[fk] = flows.get(fk, 0) + c
    return LinkFlows(od.window_minutes, graph, flows,
                     n_unreachable_pairs=n_unreach_pairs,
                     n_unreachable_movements=n_unreach_moves,
                     unreachable=unreachable)


def _edge_to_arcs(graph):
    m = {}
    for i, a in enumerate(graph.arcs):
        m.setdefault(a.edge_id, []).append(i)
    return m


def station_pairs(flows: LinkFlows, counts):
    """(model_flow, observed_count) per count row, both directions of the edge summed.

    Count windows must sit on the flows' window grid; misalignment is a data
    error because the fitted scale would be unit-ambiguous otherwise.
    """
    window_s = flows.window_minutes * 60
    edge_arcs = _edge_to_arcs(flows.graph)
    pairs = []
    for c in counts:
        if c.window_minutes != flows.window_minutes:
            raise DataError(f"count on edge {c.edge_id}: window_minutes {c.window_minutes} "
                            f"does not match O-D window {flows.window_minutes}")
        if c.window_start % window_s != 0:
            raise DataError(f"count on edge {c.edge_id}: window_start "
                            f"{format_iso_ts(c.window_start)} off the window grid")
        widx = c.window_start // window_s
        if c.edge_id not in edge_arcs:
            raise DataError(f"count references unknown edge {c.edge_id}")
        f = sum(flows.flows.get((widx, ai), 0) for ai in edge_arcs[c.edge_id])
        pairs.append((widx, float(f), float(c.vehicle_count)))
    return pairs


def _fit(points):
    """Least squares through the origin over stations with positive model flow."""
    usable = [(f, c) for f, c in points if f > 0.0]
    excluded = sum(1 for f, c in points if f == 0.0 and c > 0.0)
    if not usable:
        raise DataError("unidentifiable scale: no count station has positive model flow")
    num = sum(c * f for f, c in usable)
    den = sum(f * f for f, _ in usable)
    beta = num / den
    if not (beta > 0.0 and math.isfinite(beta)):
        raise DataError(f"unidentifiable scale: fitted beta {beta!r} not positive")
    rmse = math.sqrt(sum((beta * f - c) ** 2 for f, c in usable) / len(usable))
    return ScaleFit(beta=beta, rmse=rmse, n_stations_used=len(usable),
                    n_excluded_zero_flow=excluded)


def fit_scale(flows: LinkFlows, counts, per_window: bool = False):
    """Scale movement units to vehicles against count stations.

    Returns a ScaleFit, or with per_window a dict window_index -> ScaleFit over
    the windows where at least one station has positive model flow.
    """
    triples = station_pairs(flows, counts)
    if not per_window:
        return _fit([(f, c) for _, f, c in triples])
    by_window = {}
    for widx, f, c in triples:
        by_window.setdefault(widx, []).append((f, c))
    fits = {}
    for widx in sorted(by_window):
        try:
            fits[widx] = _fit(by_window[widx])
        except DataError:
            continue
    if not fits:
        raise DataError("unidentifiable scale: no window has a usable count station")
    return fits


OD_CSV_HEADER = "window_start,from_tower,to_tower,count"
LINK_FLOWS_CSV_HEADER = "window_start,edge_id,direction,flow,scaled_vph,vc_ratio"


def od_csv_lines(od: OdMatrix):
    lines = [OD_CSV_HEADER]
    iso = {}
    for key in sorted(od.counts):
        widx, a, b = key
        start = iso.get(widx)
        if start is None:
            start = iso[widx] = format_iso_ts(od.window_start_ts(widx))
        lines.append(f"{start},{a},{b},{od.counts[key]}")
    return lines


def read_od_csv(path, window_minutes: int) -> OdMatrix:
    window_s = window_minutes * 60
    counts = {}
    with open(path, "r", encoding="utf-8", newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header != OD_CSV_HEADER.split(","):
            raise DataError(f"bad header: expected {OD_CSV_HEADER}", path=path)
        ts_cache = {}
        for i, row in enumerate(reader, start=2):
            if len(row) != 4:
                raise DataError("wrong field count", path=path, row=i)
            start_s, a, b, n_s = row
            ts = ts_cache.get(start_s)
            if ts is None:
                try:
                    ts = ts_cache[start_s] = parse_iso_ts(start_s)
                except ValueError:
                    raise DataError(f"bad window_start {start_s!r}", path=path, row=i) from None
            if ts % window_s != 0:
                raise DataError(f"window_start {start_s} off the {window_minutes}-minute grid",
                                path=path, row=i)
            if a == b:
                raise DataError(f"self-pair {a}->{b}", path=path, row=i)
            try:
                n = int(n_s)
            except ValueError:
                raise DataError(f"bad count {n_s!r}", path=path, row=i) from None
            if n < 0:
                raise DataError(f"negative count {n_s}", path=path, row=i)
            key = (ts // window_s, a, b)
            counts[key] = counts.get(key, 0) + n
    return OdMatrix(window_minutes, counts)


def link_flows_csv_lines(flows: LinkFlows, beta=None):
    """Sorted link_flows rows; scaled columns stay empty until a beta is known."""
    arcs = flows.graph.arcs
    per_hour = 60.0 / flows.window_minutes
    window_s = flows.window_minutes * 60
    iso = {}
    keyed = sorted(((widx, arcs[ai].edge_id, arcs[ai].direction, ai)
                    for (widx, ai) in flows.flows),
                   key=lambda k: k[:3])
    lines = [LINK_FLOWS_CSV_HEADER]
    for widx, eid, direction, ai in keyed:
        start = iso.get(widx)
        if start is None:
            start = iso[widx] = format_iso_ts(widx * window_s)
        f = flows.flows[(widx, ai)]
        if beta is None:
            scaled = vc = ""
        else:
            vph = beta * f * per_hour
            scaled = repr(vph)
            vc = repr(vph / arcs[ai].capacity_vph)
        lines.append(f"{start},{eid},{direction},{int(f)},{scaled},{vc}")
    return lines


def read_link_flows_csv(path, graph, window_minutes: int) -> LinkFlows:
    arc_index = {(a.edge_id, a.direction): i for i, a in enumerate(graph.arcs)}
    window_s = window_minutes * 60
    flows = {}
    with open(path, "r", encoding="utf-8", newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header != LINK_FLOWS_CSV_HEADER.split(","):
            raise DataError(f"bad header: expected {LINK_FLOWS_CSV_HEADER}", path=path)
        ts_cache = {}
        for i, row in enumerate(reader, start=2):
            if len(row) != 6:
                raise DataError("wrong field count", path=path, row=i)
            start_s, eid, direction, flow_s = row[0], row[1], row[2], row[3]
            ts = ts_cache.get(start_s)
            if ts is None:
                try:
                    ts = ts_cache[start_s] = parse_iso_ts(start_s)
                except ValueError:
                    raise DataError(f"bad window_start {start_s!r}", path=path, row=i) from None
            if ts % window_s != 0:
                raise DataError(f"window_start {start_s} off the {window_minutes}-minute grid",
                                path=path, row=i)
            ai = arc_index.get((eid, direction))
            if ai is None:
                raise DataError(f"unknown arc {eid}/{direction}", path=path, row=i)
            try:
                fl = int(flow_s)
            except ValueError:
                raise DataError(f"bad flow {flow_s!r}", path=path, row=i) from None
            key = (ts // window_s, ai)
            flows[key] = flows.get(key, 0) + fl
    return LinkFlows(window_minutes, graph, flows)


def peak_congestion(flows: LinkFlows, beta: float) -> PeakCongestion:
    """Max volume/capacity ratio over (arc, window), with its deterministic argmax.

    Flow is scaled to vehicles per hour: beta * flow * 60 / window_minutes.
    """
    per_hour = 60.0 / flows.window_minutes
    arcs = flows.graph.arcs
    best = None
    for (widx, ai), f in flows.flows.items():
        a = arcs[ai]
        ratio = beta * f * per_hour / a.capacity_vph
        key = (-ratio, widx, a.edge_id, a.direction)
        if best is None or key < best[0]:
            best = (key, ratio, a, widx)
    if best is None:
        return PeakCongestion(0.0)
    _, ratio, arc, widx = best
    return PeakCongestion(ratio, arc.edge_id, arc.direction, widx)
