import json
import os

import pytest

from tourflow.ingest import Arc, CdrRecord, Poi, RoadGraph, TacEntry, Tower
from tourflow.util import parse_iso_ts


def rec(sid, when, tower="T01", cc="ES", tac=None, service="call"):
    ts = parse_iso_ts(when) if isinstance(when, str) else when
    return CdrRecord(sid, ts, tower, cc, tac, service)


def day_ts(day_str, hour=12, utc_offset_minutes=120):
    """Epoch seconds for a local date + hour under the given offset."""
    from tourflow.util import parse_iso_date

    return parse_iso_date(day_str) * 86400 + hour * 3600 - utc_offset_minutes * 60


def make_graph(nodes, edges):
    """nodes: {id: (lat, lon)}; edges: (edge_id, a, b, minutes, bidirectional[, capacity])."""
    arcs = []
    for e in edges:
        eid, a, b, minutes, bidir = e[:5]
        cap = e[5] if len(e) > 5 else 1000.0
        # freeflow 3.6 km/h makes travel_time_s == length_m, so lengths are costs
        length = minutes * 60.0
        arcs.append(Arc(eid, "F", a, b, length, 3.6, cap))
        if bidir:
            arcs.append(Arc(eid, "R", b, a, length, 3.6, cap))
    return RoadGraph(nodes=dict(nodes), arcs=arcs)


@pytest.fixture
def towers4():
    return {
        "T01": Tower("T01", 42.50, 1.52, "Z1"),
        "T02": Tower("T02", 42.51, 1.53, "Z2"),
        "T03": Tower("T03", 42.52, 1.54, "Z3"),
        "T04": Tower("T04", 42.53, 1.55, "Z4"),
    }


def write_world_config(world_dir, out_path=None, **overrides):
    cfg = {
        "cdr": os.path.join(world_dir, "cdr.csv"),
        "towers": os.path.join(world_dir, "towers.csv"),
        "roads_nodes": os.path.join(world_dir, "roads_nodes.csv"),
        "roads_edges": os.path.join(world_dir, "roads_edges.csv"),
        "pois": os.path.join(world_dir, "pois.csv"),
        "counts": os.path.join(world_dir, "counts.csv"),
        "tac_prices": os.path.join(world_dir, "tac_prices.csv"),
    }
    cfg.update(overrides)
    if out_path is None:
        out_path = os.path.join(world_dir, "run_config.json")
    with open(out_path, "w", encoding="utf-8") as f:
        json.dump(cfg, f, indent=1)
    return out_path


@pytest.fixture(scope="session")
def small_world(tmp_path_factory):
    """A modest deterministic synth world shared by integration-style tests."""
    from tourflow import synth

    out = tmp_path_factory.mktemp("small_world")
    cfg = synth.SynthConfig(
        seed=20150701, n_subscribers=400, n_towers=20, n_zones=5, n_days=25,
        start_date="2015-07-01", n_stations=12, graph_nodes=40, graph_edges=90,
        events=[synth.SynthEvent("fest", "2015-07-10", "2015-07-13", 3.0)],
    )
    summary = synth.generate(cfg, str(out))
    return {"dir": str(out), "config": cfg, "summary": summary}
