import io

import pytest
from hypothesis import given, strategies as st

from tourflow.ingest import (CDR_HEADER, load_counts, load_pois, load_reference,
                             load_road_graph, load_towers, parse_cdr_stream)
from tourflow.util import DataError

HEADER = ",".join(CDR_HEADER)


def parse_all(text, policy="skip_and_count"):
    gen, report = parse_cdr_stream(io.BytesIO(text.encode()), policy)
    return list(gen), report


def test_parse_direct_field_mapping():
    records, report = parse_all(HEADER + "\nu1,2015-07-15T09:30:00Z,T01,ES,35875106,call\n")
    assert len(records) == 1
    r = records[0]
    assert r.subscriber_id == "u1"
    assert r.tower_id == "T01"
    assert r.registry_country == "ES"
    assert r.tac == "35875106"
    assert r.service == "call"
    assert r.ts == 1436952600  # 2015-07-15T09:30:00Z
    assert report.rows_read == 1 and report.rows_rejected == 0


def test_parse_malformed_timestamp_skipped():
    records, report = parse_all(HEADER + "\nu1,notatime,T01,ES,,call\n")
    assert records == []
    assert report.rows_rejected == 1
    assert "bad timestamp" in report.reasons[0]


def test_parse_empty_tac_becomes_absent():
    records, _ = parse_all(HEADER + "\nu1,2015-07-15T09:30:00Z,T01,ES,,data\n")
    assert records[0].tac is None
    assert records[0].service == "data"


def test_parse_fail_fast_carries_row_number():
    gen, _ = parse_cdr_stream(io.BytesIO(
        (HEADER + "\nu1,2015-07-15T09:30:00Z,T01,ES,,call\nu2,bad,T01,ES,,call\n").encode()),
        "fail_fast")
    with pytest.raises(DataError) as exc:
        list(gen)
    assert "row 3" in str(exc.value)
    assert "bad timestamp" in str(exc.value)


def test_parse_rejects_bad_header():
    with pytest.raises(DataError):
        parse_all("a,b,c\nu1,x,y\n")


@pytest.mark.parametrize("row,why", [
    ("u1,2015-07-15T09:30:00Z,T01,es,,call", "bad registry_country"),
    ("u1,2015-07-15T09:30:00Z,T01,ESP,,call", "bad registry_country"),
    ("u1,2015-07-15T09:30:00Z,T01,ES,123,call", "bad tac"),
    ("u1,2015-07-15T09:30:00Z,T01,ES,,fax", "bad service"),
    ("u1,2015-07-15T09:30:00Z,,ES,,call", "empty tower_id"),
    (",2015-07-15T09:30:00Z,T01,ES,,call", "empty subscriber_id"),
    ("u1,2015-07-15T09:30:00Z,T01,ES,,call,extra", "wrong field count"),
    ("u1,2015-07-15T09:30:61Z,T01,ES,,call", "bad timestamp"),
    ("u1,2015-02-30T09:30:00Z,T01,ES,,call", "bad timestamp"),
], ids=["lowercase-cc", "threeletter-cc", "short-tac", "bad-service", "no-tower",
        "no-subscriber", "extra-field", "leap-second", "bad-date"])
def test_parse_rejections(row, why):
    records, report = parse_all(HEADER + "\n" + row + "\n")
    assert records == []
    assert report.rows_rejected == 1
    assert why in report.reasons[0]


def test_parse_rfc4180_quoting():
    records, _ = parse_all(HEADER + '\n"u,1",2015-07-15T09:30:00Z,T01,ES,,call\n')
    assert records[0].subscriber_id == "u,1"


def test_parse_loss_accounting_and_determinism():
    text = HEADER + "\n" + "\n".join([
        "u1,2015-07-15T09:30:00Z,T01,ES,,call",
        "u2,broken,T01,ES,,call",
        "u3,2015-07-15T10:30:00Z,T02,FR,35875106,sms",
        "u4,2015-07-15T10:30:00Z,T02,XX!,,sms",
    ]) + "\n"
    r1, rep1 = parse_all(text)
    r2, rep2 = parse_all(text)
    assert rep1.rows_read == 4
    assert rep1.rows_read == len(r1) + rep1.rows_rejected
    assert r1 == r2


@given(st.lists(st.sampled_from([
    "u1,2015-07-15T09:30:00Z,T01,ES,,call",
    "u2,2015-07-16T12:00:00Z,T02,FR,35875106,data",
    "u3,nope,T01,ES,,call",
    "u4,2015-07-15T09:30:00Z,T01,E5,,call",
    "u5,2015-07-15T09:30:00Z,T01,ES,999,sms",
    "",
]), max_size=40))
def test_parse_loss_accounting_property(rows):
    text = HEADER + "\n" + "".join(r + "\n" for r in rows)
    records, report = parse_all(text)
    assert report.rows_read == len(rows)
    assert report.rows_read == len(records) + report.rows_rejected
    assert len(report.reasons) == min(report.rows_rejected, 100)


def _write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def test_load_towers_duplicate_id(tmp_path):
    path = _write(tmp_path, "towers.csv",
                  "tower_id,lat,lon,zone\nT01,42.5,1.5,Z1\nT01,42.6,1.6,Z2\n")
    with pytest.raises(DataError) as exc:
        load_towers(path)
    assert "duplicate tower_id T01" in str(exc.value)


def test_load_towers_range_check(tmp_path):
    path = _write(tmp_path, "towers.csv", "tower_id,lat,lon,zone\nT01,99.0,1.5,\n")
    with pytest.raises(DataError):
        load_towers(path)


def test_load_counts_unknown_edge(tmp_path):
    path = _write(tmp_path, "counts.csv",
                  "edge_id,window_start,window_minutes,vehicle_count\n"
                  "E99,2015-07-15T09:00:00Z,60,12\n")
    with pytest.raises(DataError) as exc:
        load_counts(path, known_edges={"E01"})
    assert "count references unknown edge E99" in str(exc.value)


def test_load_graph_dangling_endpoint(tmp_path):
    nodes = _write(tmp_path, "n.csv", "node_id,lat,lon\nN1,42.5,1.5\n")
    edges = _write(tmp_path, "e.csv",
                   "edge_id,from_node,to_node,length_m,freeflow_kmh,capacity_vph,bidirectional\n"
                   "E1,N1,N9,100,50,500,1\n")
    with pytest.raises(DataError) as exc:
        load_road_graph(nodes, edges)
    assert "unknown node N9" in str(exc.value)


def _reference_fixture(tmp_path):
    towers = _write(tmp_path, "towers.csv",
                    "tower_id,lat,lon,zone\nT01,42.50,1.50,Z1\nT02,42.51,1.51,Z1\n"
                    "T03,42.52,1.52,\n")
    nodes = _write(tmp_path, "nodes.csv",
                   "node_id,lat,lon\nN1,42.50,1.50\nN2,42.51,1.51\nN3,42.52,1.52\n")
    edges = _write(tmp_path, "edges.csv",
                   "edge_id,from_node,to_node,length_m,freeflow_kmh,capacity_vph,bidirectional\n"
                   "E1,N1,N2,1200,50,800,1\nE2,N2,N3,900,50,800,1\n")
    pois = _write(tmp_path, "pois.csv", "poi_id,lat,lon,category\nP1,42.50,1.50,shopping\n"
                  "P2,42.51,1.51,daytrip\n")
    counts = _write(tmp_path, "counts.csv",
                    "edge_id,window_start,window_minutes,vehicle_count\n"
                    "E1,2015-07-15T09:00:00Z,60,42\n")
    prices = _write(tmp_path, "tac.csv", "tac,brand,model,price_usd\n35875106,x,y,420\n")
    return towers, nodes, edges, pois, counts, prices


def test_load_reference_hand_counted_fixture(tmp_path):
    bundle = load_reference(*_reference_fixture(tmp_path))
    assert len(bundle.towers) == 3
    assert len(bundle.graph.arcs) == 4  # two bidirectional edges expand to four arcs
    assert bundle.graph.n_edges == 2
    assert bundle.poi_category_warnings == 1  # "daytrip" mapped to other
    assert [p.category for p in bundle.pois] == ["shopping", "other"]
    assert bundle.counts[0].vehicle_count == 42
    assert bundle.tac_prices["35875106"].price_usd == 420
    assert bundle.zones == ["T03", "Z1"]  # empty zone falls back to tower_id


def test_arc_travel_time():
    from tourflow.ingest import Arc

    a = Arc("E1", "F", "N1", "N2", length_m=1000.0, freeflow_kmh=60.0, capacity_vph=800)
    assert a.travel_time_s == pytest.approx(60.0)
