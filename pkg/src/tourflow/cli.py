"""Command-line entry point: validate, synth, indicators, od, assign, scale, event, compare.

Exit codes: 0 success, 1 usage error, 2 data error. Every run writes a
machine-readable manifest (parameter values plus content digests of data
inputs and outputs) named manifest_<subcommand>.json in the output directory.
Outputs are written atomically (temp file then rename).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys

from . import congestion, economics, events as events_mod, indicators, ingest, mobility, \
    pipeline, synth
from .config import RunConfig
from .events import INDICATOR_NAMES
from .util import DataError, atomic_write_text, format_iso_ts

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2

# a window wide enough to cover any plausible CDR archive ("all data")
_ALL_WINDOW = indicators.TimeWindow(-(1 << 40), 1 << 40)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def build_parser() -> _Parser:
    p = _Parser(prog="tourflow", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="cmd", metavar="subcommand")
    sub.required = True

    def add(name, help_text, events_flag=False):
        s = sub.add_parser(name, help=help_text)
        s.add_argument("--config", required=True, metavar="PATH",
                       help="JSON run configuration")
        s.add_argument("--out", required=True, metavar="DIR", help="output directory")
        s.add_argument("--threads", type=int, default=os.cpu_count() or 1, metavar="N",
                       help="worker processes (results are independent of N)")
        s.add_argument("--policy", choices=["fail_fast", "skip"], default="skip",
                       help="malformed CDR row handling")
        if events_flag:
            s.add_argument("--events", required=True, metavar="PATH",
                           help="events.json with named date windows")
        return s

    add("validate", "validate all configured input files")
    add("synth", "generate a synthetic world (config is a synth config)")
    s = add("indicators", "compute tourist indicators")
    s.add_argument("--events", metavar="PATH", help="optional event windows")
    s = add("od", "build the tower-to-tower O-D matrix")
    s.add_argument("--segment", default="all", metavar="all|tourists|CC")
    s = add("assign", "assign O-D movements to road links")
    s.add_argument("--od", dest="od_path", metavar="PATH", help="od.csv (default OUT/od.csv)")
    s.add_argument("--beta", type=float, default=None,
                   help="scale for the link_flows scaled columns")
    s = add("scale", "fit vehicles-per-movement against count stations")
    s.add_argument("--flows", dest="flows_path", metavar="PATH",
                   help="link_flows.csv (default OUT/link_flows.csv)")
    s.add_argument("--per-window", action="store_true", dest="per_window")
    add("event", "evaluate event scorecards", events_flag=True) \
        .add_argument("--name", default=None, help="evaluate a single named event")
    add("compare", "evaluate and min-max normalize events", events_flag=True) \
        .add_argument("--invert", default="", metavar="INDICATOR[,..]",
                      help="indicators plotted inverted (1 - normalized)")
    return p


class Run:
    """Collects manifest data while a subcommand executes."""

    def __init__(self, cmd, out_dir):
        self.cmd = cmd
        self.out_dir = out_dir
        self.parameters = {}
        self.inputs = {}
        self.outputs = {}
        self.stats = {}
        os.makedirs(out_dir, exist_ok=True)

    def add_input(self, name, path, digest=None):
        self.inputs[name] = digest if digest else pipeline.multiset_digest_file(path)

    def write(self, name, text):
        atomic_write_text(os.path.join(self.out_dir, name), text)
        self.outputs[name] = _sha256_bytes(text.encode("utf-8"))

    def manifest(self, error=None):
        obj = {
            "subcommand": self.cmd,
            "parameters": self.parameters,
            "inputs": self.inputs,
            "outputs": self.outputs,
            "stats": self.stats,
        }
        if error is not None:
            obj["error"] = error
        text = json.dumps(obj, sort_keys=True, indent=2) + "\n"
        atomic_write_text(os.path.join(self.out_dir, f"manifest_{self.cmd}.json"), text)


def _check_out_dir(cfg: RunConfig, out_dir):
    out_abs = os.path.abspath(out_dir)
    for key, path in cfg.paths.items():
        if os.path.dirname(os.path.abspath(path)) == out_abs:
            raise UsageError(f"input {key!r} resides in the output directory")


def _policy(args) -> str:
    return "fail_fast" if args.policy == "fail_fast" else "skip_and_count"


def _load_bundle(cfg: RunConfig, run: Run):
    paths = cfg.require("towers", "roads_nodes", "roads_edges", "pois", "counts",
                        "tac_prices")
    for key, path in zip(("towers", "roads_nodes", "roads_edges", "pois", "counts",
                          "tac_prices"), paths):
        run.add_input(key, path)
    return ingest.load_reference(*paths)


def _params_dict(params):
    return {
        "utc_offset_minutes": params.utc_offset_minutes,
        "visit_gap_days": params.visit_gap_days,
        "od_window_minutes": params.od_window_minutes,
        "od_max_gap_minutes": params.od_max_gap_minutes,
        "snap_max_m": params.snap_max_m,
        "poi_radius_m": params.poi_radius_m,
        "day_hours": list(params.day_hours),
        "home_country": params.home_country,
    }


def _iso_or_none(ts):
    if ts is None or not (-(1 << 39)) < ts < (1 << 39):
        return None
    return format_iso_ts(ts)


def _window_specs(args, params):
    """(window_id, TimeWindow, lookback, followup) per requested window."""
    if getattr(args, "events", None):
        evs = events_mod.load_events(args.events, params.utc_offset_minutes)
        return [(e.name, e.window, e.lookback_days, e.followup_days) for e in evs]
    return [("all", _ALL_WINDOW, None, None)]


def cmd_validate(args) -> int:
    cfg = RunConfig.from_json(args.config)
    run = Run("validate", args.out)
    _check_out_dir(cfg, args.out)
    run.parameters = _params_dict(cfg.params)
    bundle = _load_bundle(cfg, run)
    report_obj = {
        "towers": len(bundle.towers),
        "graph_nodes": len(bundle.graph.nodes),
        "graph_edges": bundle.graph.n_edges,
        "graph_arcs": len(bundle.graph.arcs),
        "pois": len(bundle.pois),
        "poi_category_warnings": bundle.poi_category_warnings,
        "counts": len(bundle.counts),
        "tac_prices": len(bundle.tac_prices),
    }
    if "cdr" in cfg.paths:
        (path,) = cfg.require("cdr")
        with open(path, "rb") as f:
            records, parse_report = ingest.parse_cdr_stream(f, _policy(args))
            n = sum(1 for _ in records)
        run.add_input("cdr", path)
        report_obj["cdr"] = {
            "rows_read": parse_report.rows_read,
            "rows_rejected": parse_report.rows_rejected,
            "records": n,
            "reasons": parse_report.reasons,
        }
        run.stats["rows_read"] = parse_report.rows_read
        run.stats["rows_rejected"] = parse_report.rows_rejected
    run.write("validation_report.json", json.dumps(report_obj, sort_keys=True, indent=2) + "\n")
    run.manifest()
    return EXIT_OK


def cmd_synth(args) -> int:
    run = Run("synth", args.out)
    cfg = synth.SynthConfig.from_json(args.config)
    with open(args.config, "rb") as f:
        run.inputs["synth_config"] = _sha256_bytes(f.read())
    summary = synth.generate(cfg, args.out)
    for name, path in sorted(summary.paths.items()):
        with open(path, "rb") as f:
            run.outputs[name] = _sha256_bytes(f.read())
    run.stats = {
        "n_records": summary.n_records,
        "n_subscribers": summary.n_subscribers,
        "subscribers_by_country": dict(sorted(summary.subscribers_by_country.items())),
        "n_truth_movements": summary.n_truth_movements,
        "n_stations": summary.n_stations,
    }
    run.manifest()
    print(f"synth: {summary.n_records} records, {summary.n_subscribers} subscribers")
    return EXIT_OK


def _flow_json(flow):
    return {
        "per_country": {cc: {"visitors": f.visitors, "tourist_days": f.tourist_days}
                        for cc, f in flow.per_country.items()},
        "totals": {"visitors": flow.total_visitors, "tourist_days": flow.total_tourist_days},
    }


def _spatial_json(sd):
    return {"shares": sd.shares, "dispersion": sd.dispersion, "n_presence": sd.n_presence}


def cmd_indicators(args) -> int:
    cfg = RunConfig.from_json(args.config)
    run = Run("indicators", args.out)
    _check_out_dir(cfg, args.out)
    run.parameters = _params_dict(cfg.params)
    run.parameters["policy"] = _policy(args)
    bundle = _load_bundle(cfg, run)
    (cdr_path,) = cfg.require("cdr")
    specs = _window_specs(args, cfg.params)
    if getattr(args, "events", None):
        run.add_input("events", args.events)
    result = pipeline.run_indicators(cdr_path, bundle, cfg.params, specs,
                                     max(args.threads, 1), _policy(args))
    run.inputs["cdr"] = result.cdr_digest

    windows_out = []
    for wid, window, lookback, followup in specs:
        revisitors, rate = result.repeat[wid]
        windows_out.append({
            "id": wid,
            "start": _iso_or_none(window.start),
            "end": _iso_or_none(window.end),
            "lookback_days": lookback,
            "followup_days": followup,
            "flows": _flow_json(result.flows[wid]),
            "new_tourists": len(result.new[wid]),
            "n_revisitors": len(revisitors),
            "repeat_rate": rate,
            "spatial": {period: _spatial_json(result.spatial[(wid, period)])
                        for period in ("day", "night")},
        })
    obj = {
        "windows": windows_out,
        "interest_profiles": {cc: prof.weights for cc, prof in result.interest.items()},
        "parse": {"rows_read": result.report.rows_read,
                  "rows_rejected": result.report.rows_rejected},
        "n_mixed_country": result.n_mixed,
    }
    run.write("indicators.json", json.dumps(obj, sort_keys=True, indent=2) + "\n")
    run.write("visits.csv",
              "\n".join(mobility.visits_csv_lines(result.visits_by_sid, result.classes)) + "\n")
    run.write("income_by_country.csv",
              "\n".join(economics.income_csv_lines(result.income)) + "\n")
    run.stats["rows_read"] = result.report.rows_read
    run.stats["rows_rejected"] = result.report.rows_rejected
    run.stats["n_subscribers"] = len(result.classes)
    run.manifest()
    return EXIT_OK


def cmd_od(args) -> int:
    cfg = RunConfig.from_json(args.config)
    run = Run("od", args.out)
    _check_out_dir(cfg, args.out)
    run.parameters = _params_dict(cfg.params)
    run.parameters["policy"] = _policy(args)
    run.parameters["segment"] = args.segment
    if args.segment not in ("all", "tourists") and (
            len(args.segment) != 2 or not args.segment.isupper()):
        raise UsageError(f"--segment must be all, tourists or a 2-letter country code, "
                         f"got {args.segment!r}")
    (cdr_path,) = cfg.require("cdr")
    result = pipeline.run_od(cdr_path, cfg.params, args.segment,
                             max(args.threads, 1), _policy(args))
    run.inputs["cdr"] = result.cdr_digest
    run.write("od.csv", "\n".join(result.csv_lines()) + "\n")
    run.stats["rows_read"] = result.report.rows_read
    run.stats["rows_rejected"] = result.report.rows_rejected
    run.stats["total_movements"] = result.total_movements
    run.stats["od_entries"] = int(len(result.keys))
    run.manifest()
    return EXIT_OK


def cmd_assign(args) -> int:
    cfg = RunConfig.from_json(args.config)
    run = Run("assign", args.out)
    _check_out_dir(cfg, args.out)
    run.parameters = _params_dict(cfg.params)
    if args.beta is not None:
        run.parameters["beta"] = args.beta
    bundle = _load_bundle(cfg, run)
    od_path = args.od_path or os.path.join(args.out, "od.csv")
    if not os.path.exists(od_path):
        raise DataError(f"missing file: {od_path}")
    run.add_input("od", od_path)
    tower_ids, widx, from_code, to_code, counts = pipeline.read_od_arrays(
        od_path, cfg.params.od_window_minutes)
    od_towers = {tid: bundle.towers[tid] for tid in tower_ids if tid in bundle.towers}
    missing = [tid for tid in tower_ids if tid not in bundle.towers]
    if missing:
        raise DataError(f"O-D references unknown tower {missing[0]}")
    snapping = congestion.snap_towers(od_towers, bundle.graph, cfg.params.snap_max_m)
    flows = pipeline.assign_bulk(tower_ids, widx, from_code, to_code, counts,
                                 cfg.params.od_window_minutes, bundle.graph, snapping)
    run.write("link_flows.csv",
              "\n".join(congestion.link_flows_csv_lines(flows, args.beta)) + "\n")
    run.stats["assigned_movements"] = int(counts.sum() - flows.n_unreachable_movements) \
        if len(counts) else 0
    run.stats["unreachable_pairs"] = flows.n_unreachable_pairs
    run.stats["unreachable_movements"] = flows.n_unreachable_movements
    run.manifest()
    return EXIT_OK


def cmd_scale(args) -> int:
    cfg = RunConfig.from_json(args.config)
    run = Run("scale", args.out)
    _check_out_dir(cfg, args.out)
    run.parameters = _params_dict(cfg.params)
    run.parameters["per_window"] = bool(args.per_window)
    bundle = _load_bundle(cfg, run)
    flows_path = args.flows_path or os.path.join(args.out, "link_flows.csv")
    if not os.path.exists(flows_path):
        raise DataError(f"missing file: {flows_path}")
    run.add_input("link_flows", flows_path)
    flows = congestion.read_link_flows_csv(flows_path, bundle.graph,
                                           cfg.params.od_window_minutes)
    fit = congestion.fit_scale(flows, bundle.counts, per_window=args.per_window)
    if args.per_window:
        global_fit = congestion.fit_scale(flows, bundle.counts)
        obj = {
            "beta": global_fit.beta,
            "rmse": global_fit.rmse,
            "n_stations_used": global_fit.n_stations_used,
            "n_excluded_zero_flow": global_fit.n_excluded_zero_flow,
            "per_window": {
                format_iso_ts(w * flows.window_minutes * 60): {
                    "beta": f.beta, "rmse": f.rmse, "n_stations_used": f.n_stations_used,
                } for w, f in sorted(fit.items())
            },
        }
        beta = global_fit.beta
    else:
        obj = {
            "beta": fit.beta,
            "rmse": fit.rmse,
            "n_stations_used": fit.n_stations_used,
            "n_excluded_zero_flow": fit.n_excluded_zero_flow,
        }
        beta = fit.beta
    peak = congestion.peak_congestion(flows, beta)
    obj["peak_congestion"] = {
        "score": peak.score,
        "edge_id": peak.edge_id,
        "direction": peak.direction,
        "window_start": _iso_or_none(None if peak.window_index is None
                                     else peak.window_index * flows.window_minutes * 60),
    }
    run.write("scale.json", json.dumps(obj, sort_keys=True, indent=2) + "\n")
    run.write("link_flows.csv",
              "\n".join(congestion.link_flows_csv_lines(flows, beta)) + "\n")
    run.stats["beta"] = beta
    run.manifest()
    return EXIT_OK


def _evaluate_events(args, cfg, run):
    bundle = _load_bundle(cfg, run)
    (cdr_path,) = cfg.require("cdr")
    run.add_input("cdr", cdr_path)
    run.add_input("events", args.events)
    evs = events_mod.load_events(args.events, cfg.params.utc_offset_minutes)
    with open(cdr_path, "rb") as f:
        gen, report = ingest.parse_cdr_stream(f, _policy(args))
        records = list(gen)
    classes, n_mixed = mobility.classify_subscribers(records, cfg.params.home_country)
    visits = mobility.visits_by_subscriber(records, cfg.params.visit_gap_days,
                                           cfg.params.utc_offset_minutes)
    scorecards = [events_mod.evaluate_event(e, records, classes, visits, bundle, cfg.params)
                  for e in evs]
    run.stats["rows_read"] = report.rows_read
    run.stats["rows_rejected"] = report.rows_rejected
    return evs, scorecards


def cmd_event(args) -> int:
    cfg = RunConfig.from_json(args.config)
    run = Run("event", args.out)
    _check_out_dir(cfg, args.out)
    run.parameters = _params_dict(cfg.params)
    if args.name:
        run.parameters["name"] = args.name
    evs, scorecards = _evaluate_events(args, cfg, run)
    if args.name is not None:
        chosen = [sc for sc in scorecards if sc.name == args.name]
        if not chosen:
            raise DataError(f"no event named {args.name!r} in {args.events}")
        scorecards = chosen
    run.write("scorecards.json",
              json.dumps(events_mod.scorecards_json_obj(scorecards),
                         sort_keys=True, indent=2) + "\n")
    run.manifest()
    return EXIT_OK


def cmd_compare(args) -> int:
    cfg = RunConfig.from_json(args.config)
    run = Run("compare", args.out)
    _check_out_dir(cfg, args.out)
    run.parameters = _params_dict(cfg.params)
    invert = frozenset(x for x in args.invert.split(",") if x)
    bad = invert - set(INDICATOR_NAMES)
    if bad:
        raise UsageError(f"unknown indicator(s) in --invert: {','.join(sorted(bad))}")
    run.parameters["invert"] = sorted(invert)
    evs, scorecards = _evaluate_events(args, cfg, run)
    normalized = events_mod.compare_events(scorecards, invert)
    run.write("scorecards.json",
              json.dumps(events_mod.scorecards_json_obj(scorecards),
                         sort_keys=True, indent=2) + "\n")
    run.write("radar.csv",
              "\n".join(events_mod.radar_csv_lines(scorecards, normalized)) + "\n")
    run.manifest()
    return EXIT_OK


_COMMANDS = {
    "validate": cmd_validate,
    "synth": cmd_synth,
    "indicators": cmd_indicators,
    "od": cmd_od,
    "assign": cmd_assign,
    "scale": cmd_scale,
    "event": cmd_event,
    "compare": cmd_compare,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.threads < 1:
            raise UsageError("--threads must be >= 1")
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    try:
        return _COMMANDS[args.cmd](args)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as e:
        print(f"error: {e}", file=sys.stderr)
        try:
            Run(args.cmd, args.out).manifest(error=str(e))
        except OSError:
            pass
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
