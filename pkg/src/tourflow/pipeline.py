"""Bulk CDR engine: sharded tokenizer feeding vectorized aggregations.

The CLI's heavy subcommands run here. Work is partitioned by a stable hash of
subscriber_id so one worker holds every record of its subscribers; partial
results merge by integer addition or disjoint union, and float reductions
happen in canonical lexicographic order. Outputs are therefore byte-identical
for any worker count and any subscriber-level shuffle of the input file.
"""

from __future__ import annotations

import csv
import multiprocessing
import zlib
from array import array
from dataclasses import dataclass, field
from hashlib import blake2b

import numpy as np

from . import economics, indicators, mobility
from .congestion import LinkFlows, OdMatrix, shortest_path_tree
from .ingest import CDR_HEADER, POI_CATEGORIES, ParseReport, validate_cdr_row
from .mobility import SubscriberClass
from .util import DataError, format_iso_ts, parse_iso_ts

_DIGEST_MOD = 1 << 128
_OTHER_WEIGHTS = tuple(1.0 if c == "other" else 0.0 for c in POI_CATEGORIES)


def digest_add(acc: int, line: bytes) -> int:
    return (acc + int.from_bytes(blake2b(line, digest_size=16).digest(), "big")) % _DIGEST_MOD


def multiset_digest_file(path) -> str:
    """Order-insensitive content digest: per-line blake2b summed mod 2^128."""
    acc = 0
    with open(path, "rb") as f:
        for raw in f:
            acc = digest_add(acc, raw)
    return f"{acc:032x}"


@dataclass
class TokenBatch:
    """One shard's validated CDR columns (file order preserved)."""

    sids: list
    sub: np.ndarray  # int32 codes into sids
    ts: np.ndarray  # int64 epoch seconds
    tower: np.ndarray  # int32 codes into towers
    towers: list
    cc: np.ndarray  # int32 codes into ccs
    ccs: list
    tac: np.ndarray  # int32 codes into tacs, -1 = absent
    tacs: list
    rownum: np.ndarray  # int32 csv row numbers
    rows_read: int = 0
    n_rejects: int = 0
    rejects: list = field(default_factory=list)  # (row_number, reason), first 100
    digest: int | None = None

    @property
    def n_rows(self) -> int:
        return len(self.ts)


def _np(arr, dtype):
    if len(arr) == 0:
        return np.array([], dtype=dtype)
    return np.frombuffer(arr, dtype=dtype)


def tokenize(path, shard: int, nshards: int, policy: str, want_digest: bool) -> TokenBatch:
    if policy not in ("fail_fast", "skip_and_count"):
        raise ValueError(f"unknown policy {policy!r}")
    digest_acc = [0] if want_digest else None

    def lines():
        with open(path, "rb") as f:
            if digest_acc is not None:
                acc = 0
                for raw in f:
                    acc = digest_add(acc, raw)
                    yield raw.decode("utf-8")
                digest_acc[0] = acc
            else:
                for raw in f:
                    yield raw.decode("utf-8")

    reader = csv.reader(lines())
    try:
        header = next(reader, None)
        if header != CDR_HEADER:
            raise DataError(f"bad CDR header: expected {','.join(CDR_HEADER)}", path=path)

        subs, towers, ccs, tacs = {}, {}, {}, {}
        sub_list, tower_list, cc_list, tac_list = [], [], [], []
        a_sub = array("i")
        a_ts = array("q")
        a_tower = array("i")
        a_cc = array("i")
        a_tac = array("i")
        a_row = array("i")
        rows_read = 0
        n_rejects = 0
        rejects = []
        date_cache, cc_cache, tac_cache = {}, set(), set()
        crc = zlib.crc32
        fail_fast = policy == "fail_fast"
        sharded = nshards > 1

        for rownum, row in enumerate(reader, start=2):
            if sharded:
                key = row[0] if row else ""
                if crc(key.encode()) % nshards != shard:
                    continue
            rows_read += 1
            try:
                sid, ts, tower, cc, tac, _service = validate_cdr_row(
                    row, date_cache, cc_cache, tac_cache)
            except ValueError as e:
                if fail_fast:
                    raise DataError(str(e), path=path, row=rownum) from None
                n_rejects += 1
                if len(rejects) < 100:
                    rejects.append((rownum, str(e)))
                continue
            si = subs.get(sid)
            if si is None:
                si = subs[sid] = len(sub_list)
                sub_list.append(sid)
            ti = towers.get(tower)
            if ti is None:
                ti = towers[tower] = len(tower_list)
                tower_list.append(tower)
            ci = ccs.get(cc)
            if ci is None:
                ci = ccs[cc] = len(cc_list)
                cc_list.append(cc)
            if tac:
                ki = tacs.get(tac)
                if ki is None:
                    ki = tacs[tac] = len(tac_list)
                    tac_list.append(tac)
            else:
                ki = -1
            a_sub.append(si)
            a_ts.append(ts)
            a_tower.append(ti)
            a_cc.append(ci)
            a_tac.append(ki)
            a_row.append(rownum)
    except UnicodeDecodeError:
        raise DataError("not valid UTF-8", path=path) from None

    return TokenBatch(
        sids=sub_list,
        sub=_np(a_sub, np.int32),
        ts=_np(a_ts, np.int64),
        tower=_np(a_tower, np.int32),
        towers=tower_list,
        cc=_np(a_cc, np.int32),
        ccs=cc_list,
        tac=_np(a_tac, np.int32),
        tacs=tac_list,
        rownum=_np(a_row, np.int32),
        rows_read=rows_read,
        n_rejects=n_rejects,
        rejects=rejects,
        digest=digest_acc[0] if digest_acc is not None else None,
    )


def _classify_batch(batch: TokenBatch, home_country: str):
    """Per-subscriber origin (majority country, ties by first-seen) and tourist mask."""
    n_sub = len(batch.sids)
    if n_sub == 0:
        return np.array([], np.int64), np.array([], bool), 0
    n_cc = max(len(batch.ccs), 1)
    packed = batch.sub.astype(np.int64) * n_cc + batch.cc
    uniq, first_idx, counts = np.unique(packed, return_index=True, return_counts=True)
    usub = uniq // n_cc
    ucc = uniq % n_cc
    order = np.lexsort((first_idx, -counts, usub))
    us = usub[order]
    lead = np.ones(len(us), bool)
    lead[1:] = us[1:] != us[:-1]
    rows = order[lead]
    origin = np.zeros(n_sub, np.int64)
    origin[usub[rows]] = ucc[rows]
    n_mixed = int(np.count_nonzero(np.bincount(usub, minlength=n_sub) > 1))
    foreign = np.array([c != home_country for c in batch.ccs], bool)
    tourist = foreign[origin] if len(batch.ccs) else np.zeros(n_sub, bool)
    return origin, tourist, n_mixed


def _day_aggregate(batch: TokenBatch, off_s: int):
    """Per (subscriber, local day) first/last timestamps, sorted by (sub, day)."""
    if batch.n_rows == 0:
        e = np.array([], np.int64)
        return e, e, e, e
    day = (batch.ts + off_s) // 86400
    base = int(day.min())
    span = int(day.max()) - base + 1
    packed = batch.sub.astype(np.int64) * span + (day - base)
    order = np.argsort(packed, kind="stable")
    ps = packed[order]
    ts_sorted = batch.ts[order]
    lead = np.ones(len(ps), bool)
    lead[1:] = ps[1:] != ps[:-1]
    starts = np.flatnonzero(lead)
    mn = np.minimum.reduceat(ts_sorted, starts)
    mx = np.maximum.reduceat(ts_sorted, starts)
    keys = ps[starts]
    return keys // span, keys % span + base, mn, mx


@dataclass
class IndicatorsJob:
    """Immutable worker parameters for the indicators pass."""

    off_s: int
    day_hours: tuple
    windows: list  # (window_id, start_ts, end_ts)
    zone_of: dict  # tower_id -> zone label (from the tower file)
    tower_weights: dict  # tower_id -> category weight tuple, POI_CATEGORIES order
    price_by_tac: dict
    home_country: str


@dataclass
class IndicatorsWorkerOut:
    sids: list
    origin: list  # country string per subscriber
    tourist: np.ndarray
    day_sub: np.ndarray
    day_day: np.ndarray
    day_mn: np.ndarray
    day_mx: np.ndarray
    presence: dict  # (window_id, period) -> {zone label: count}
    profiles: np.ndarray  # (n_sub, 6) float64, rows sum to 1
    prices: np.ndarray  # float64, nan = unpriced
    n_mixed: int
    rows_read: int
    n_rejects: int
    rejects: list
    digest: int | None


def _indicators_worker(args) -> IndicatorsWorkerOut:
    path, shard, nshards, policy, job = args
    batch = tokenize(path, shard, nshards, policy, want_digest=(shard == 0))
    origin, tourist, n_mixed = _classify_batch(batch, job.home_country)
    day_sub, day_day, day_mn, day_mx = _day_aggregate(batch, job.off_s)

    n_rows = batch.n_rows
    presence = {}
    profiles = np.zeros((len(batch.sids), len(POI_CATEGORIES)))
    prices = np.full(len(batch.sids), np.nan)

    if n_rows:
        hidx = (batch.ts + job.off_s) // 3600
        hbase = int(hidx.min())
        hspan = int(hidx.max()) - hbase + 1
        hrel = hidx - hbase
        hod = hidx % 24
        lo_h, hi_h = job.day_hours
        in_day = (hod >= lo_h) & (hod < hi_h)

        # spatial presence: distinct (tourist, zone, local hour) per window and period
        zone_labels = []
        zone_index = {}
        zmap = np.empty(len(batch.towers), np.int64)
        for i, tid in enumerate(batch.towers):
            label = job.zone_of.get(tid, tid)
            zi = zone_index.get(label)
            if zi is None:
                zi = zone_index[label] = len(zone_labels)
                zone_labels.append(label)
            zmap[i] = zi
        nz = max(len(zone_labels), 1)
        zrow = zmap[batch.tower]
        tourist_row = tourist[batch.sub]
        sub64 = batch.sub.astype(np.int64)
        for wid, w_start, w_end in job.windows:
            wmask = tourist_row & (batch.ts >= w_start) & (batch.ts < w_end)
            for period, pmask in (("day", in_day), ("night", ~in_day)):
                m = wmask & pmask
                counter = {}
                if m.any():
                    pk = (sub64[m] * nz + zrow[m]) * hspan + hrel[m]
                    uniq = np.unique(pk)
                    z = (uniq // hspan) % nz
                    cnt = np.bincount(z, minlength=nz)
                    counter = {zone_labels[i]: int(cnt[i])
                               for i in np.flatnonzero(cnt)}
                presence[(wid, period)] = counter

        # interest stays: distinct (subscriber, tower, local hour), towers in
        # lexicographic rank order so float accumulation is canonical
        rank_order = sorted(range(len(batch.towers)), key=batch.towers.__getitem__)
        rank_of = np.empty(len(batch.towers), np.int64)
        for rank, code in enumerate(rank_order):
            rank_of[code] = rank
        ntw = len(batch.towers)
        weights = np.array([job.tower_weights.get(batch.towers[code], _OTHER_WEIGHTS)
                            for code in rank_order])
        pk = (sub64 * ntw + rank_of[batch.tower]) * hspan + hrel
        uniq = np.unique(pk)
        st = uniq // hspan
        sub_c = st // ntw
        twr = st % ntw
        for c in range(len(POI_CATEGORIES)):
            profiles[:, c] = np.bincount(sub_c, weights=weights[twr, c],
                                         minlength=len(batch.sids))
        totals = profiles.sum(axis=1)
        nonzero = totals > 0
        profiles[nonzero] /= totals[nonzero, None]

        # modal priced TAC per subscriber, ties to the most recent row
        if batch.tacs:
            price_vec = np.array([job.price_by_tac.get(t, np.nan) for t in batch.tacs])
            has = batch.tac >= 0
            ok = has.copy()
            ok[has] = ~np.isnan(price_vec[batch.tac[has]])
            if ok.any():
                n_tac = len(batch.tacs)
                pk = sub64[ok] * n_tac + batch.tac[ok]
                rn = batch.rownum[ok].astype(np.int64)
                order = np.argsort(pk, kind="stable")
                ps = pk[order]
                lead = np.ones(len(ps), bool)
                lead[1:] = ps[1:] != ps[:-1]
                starts = np.flatnonzero(lead)
                last = np.maximum.reduceat(rn[order], starts)
                counts = np.diff(np.append(starts, len(ps)))
                gsub = ps[starts] // n_tac
                gtac = ps[starts] % n_tac
                pick = np.lexsort((-last, -counts, gsub))
                gs = gsub[pick]
                lead2 = np.ones(len(gs), bool)
                lead2[1:] = gs[1:] != gs[:-1]
                rows = pick[lead2]
                prices[gsub[rows]] = price_vec[gtac[rows]]

    origin_str = [batch.ccs[c] for c in origin] if len(batch.sids) else []
    return IndicatorsWorkerOut(
        sids=batch.sids, origin=origin_str, tourist=tourist,
        day_sub=day_sub, day_day=day_day, day_mn=day_mn, day_mx=day_mx,
        presence=presence, profiles=profiles, prices=prices, n_mixed=n_mixed,
        rows_read=batch.rows_read, n_rejects=batch.n_rejects, rejects=batch.rejects,
        digest=batch.digest,
    )


def _run_workers(worker, path, nshards, policy, job):
    tasks = [(path, shard, nshards, policy, job) for shard in range(nshards)]
    if nshards <= 1:
        return [worker(tasks[0])]
    ctx = multiprocessing.get_context("fork")
    with ctx.Pool(processes=nshards) as pool:
        return pool.map(worker, tasks)


def _merge_reports(parts) -> ParseReport:
    report = ParseReport()
    merged = []
    for p in parts:
        report.rows_read += p.rows_read
        report.rows_rejected += p.n_rejects
        merged.extend(p.rejects)
    merged.sort()
    report.reasons = [f"row {row}: {why}" for row, why in merged[:100]]
    return report


@dataclass
class IndicatorsResult:
    report: ParseReport
    classes: dict
    n_mixed: int
    visits_by_sid: dict
    windows: list  # (window_id, TimeWindow, lookback_days, followup_days)
    flows: dict  # window_id -> SegmentedFlow
    new: dict  # window_id -> set of subscriber ids
    repeat: dict  # window_id -> (set, rate)
    spatial: dict  # (window_id, period) -> SpatialDistribution
    interest: dict  # country -> InterestProfile
    income: dict  # country -> IncomeProfile
    prices: dict  # subscriber -> price or None
    cdr_digest: str


def run_indicators(cdr_path, bundle, params, window_specs, nshards: int,
                   policy: str) -> IndicatorsResult:
    """Full indicator computation over the CDR file.

    ``window_specs`` is a list of (window_id, TimeWindow, lookback_days,
    followup_days); presence is collected per window in one pass.
    """
    off_s = params.utc_offset_minutes * 60
    zone_of = {tid: (t.zone if t.zone else tid) for tid, t in bundle.towers.items()}
    tw = indicators.tower_category_weights(bundle.towers, bundle.pois, params.poi_radius_m)
    tower_weights = {tid: tuple(w.get(c, 0.0) for c in POI_CATEGORIES)
                     for tid, w in tw.items()}
    price_by_tac = {tac: entry.price_usd for tac, entry in bundle.tac_prices.items()}
    job = IndicatorsJob(
        off_s=off_s, day_hours=tuple(params.day_hours),
        windows=[(wid, w.start, w.end) for wid, w, _, _ in window_specs],
        zone_of=zone_of, tower_weights=tower_weights, price_by_tac=price_by_tac,
        home_country=params.home_country)
    parts = _run_workers(_indicators_worker, cdr_path, nshards, policy, job)

    report = _merge_reports(parts)
    classes = {}
    visits_by_sid = {}
    prices = {}
    country_rows = {}  # sid -> (origin, profile row)
    n_mixed = 0
    presence = {}
    digest = None
    for p in parts:
        n_mixed += p.n_mixed
        if p.digest is not None:
            digest = p.digest
        for i, sid in enumerate(p.sids):
            classes[sid] = SubscriberClass(
                sid, "tourist" if p.tourist[i] else "local", p.origin[i])
            v = p.prices[i]
            prices[sid] = None if np.isnan(v) else float(v)
            country_rows[sid] = (p.origin[i], p.profiles[i])
        # walk the (sub, day) rows, contiguous per subscriber
        i = 0
        ds, dd, dmn, dmx = p.day_sub, p.day_day, p.day_mn, p.day_mx
        n = len(ds)
        while i < n:
            code = ds[i]
            j = i
            spans = {}
            while j < n and ds[j] == code:
                spans[int(dd[j])] = (int(dmn[j]), int(dmx[j]))
                j += 1
            sid = p.sids[code]
            visits_by_sid[sid] = mobility.visits_from_day_spans(
                sid, spans, params.visit_gap_days)
            i = j
        for key, counter in p.presence.items():
            acc = presence.setdefault(key, {})
            for zone, cnt in counter.items():
                acc[zone] = acc.get(zone, 0) + cnt

    flows = {}
    new = {}
    repeat = {}
    spatial = {}
    universe = bundle.zones
    tourist_visits = {sid: v for sid, v in visits_by_sid.items()
                      if classes[sid].category == "tourist"}
    for wid, window, lookback, followup in window_specs:
        flows[wid] = indicators.segmented_flows(visits_by_sid, classes, window,
                                                params.utc_offset_minutes)
        new[wid] = indicators.new_tourists(tourist_visits, window,
                                           params.utc_offset_minutes, lookback)
        repeat[wid] = indicators.repeat_tourists(tourist_visits, window,
                                                 params.utc_offset_minutes, followup)
        for period in ("day", "night"):
            per_zone = {z: 0 for z in universe}
            for zone, cnt in presence.get((wid, period), {}).items():
                per_zone[zone] = per_zone.get(zone, 0) + cnt
            spatial[(wid, period)] = indicators.spatial_from_zone_counts(per_zone, period)

    # country interest profiles: subscriber rows summed in sorted-id order
    acc = {}
    for sid in sorted(country_rows):
        origin, row = country_rows[sid]
        if row.sum() <= 0:
            continue
        cur = acc.get(origin)
        if cur is None:
            acc[origin] = row.copy()
        else:
            cur += row
    interest = {}
    for cc in sorted(acc):
        total = acc[cc].sum()
        interest[cc] = indicators.InterestProfile(
            {c: float(acc[cc][k] / total) for k, c in enumerate(POI_CATEGORIES)})

    income = economics.income_by_country(classes, prices)
    return IndicatorsResult(
        report=report, classes=classes, n_mixed=n_mixed, visits_by_sid=visits_by_sid,
        windows=window_specs, flows=flows, new=new, repeat=repeat, spatial=spatial,
        interest=interest, income=income, prices=prices,
        cdr_digest=f"{digest:032x}" if digest is not None else "",
    )


@dataclass
class OdJob:
    window_minutes: int
    max_gap_minutes: int
    segment_filter: str
    home_country: str


@dataclass
class OdWorkerOut:
    towers: list
    keys: np.ndarray  # int64 (widx * T + from) * T + to, worker-local tower codes
    counts: np.ndarray  # int64
    rows_read: int
    n_rejects: int
    rejects: list
    digest: int | None


def _od_worker(args) -> OdWorkerOut:
    path, shard, nshards, policy, job = args
    batch = tokenize(path, shard, nshards, policy, want_digest=(shard == 0))
    _, tourist, _ = _classify_batch(batch, job.home_country)

    if batch.n_rows == 0:
        empty = np.array([], np.int64)
        return OdWorkerOut(batch.towers, empty, empty, batch.rows_read,
                           batch.n_rejects, batch.rejects, batch.digest)

    if job.segment_filter == "all":
        rowmask = None
    elif job.segment_filter == "tourists":
        rowmask = tourist[batch.sub]
    else:
        origin, _, _ = _classify_batch(batch, job.home_country)
        cc_match = np.array([batch.ccs[c] == job.segment_filter for c in origin], bool) \
            if len(batch.sids) else np.array([], bool)
        rowmask = cc_match[batch.sub]

    sub = batch.sub if rowmask is None else batch.sub[rowmask]
    ts = batch.ts if rowmask is None else batch.ts[rowmask]
    tower = batch.tower if rowmask is None else batch.tower[rowmask]

    if len(ts) < 2:
        empty = np.array([], np.int64)
        return OdWorkerOut(batch.towers, empty, empty, batch.rows_read,
                           batch.n_rejects, batch.rejects, batch.digest)

    order = np.lexsort((ts, sub))
    s = sub[order]
    t = ts[order]
    tw = tower[order].astype(np.int64)
    same = s[1:] == s[:-1]
    moved = tw[1:] != tw[:-1]
    close = (t[1:] - t[:-1]) <= job.max_gap_minutes * 60
    m = same & moved & close
    if not m.any():
        empty = np.array([], np.int64)
        return OdWorkerOut(batch.towers, empty, empty, batch.rows_read,
                           batch.n_rejects, batch.rejects, batch.digest)
    widx = t[:-1][m] // (job.window_minutes * 60)
    ntw = len(batch.towers)
    keys = (widx * ntw + tw[:-1][m]) * ntw + tw[1:][m]
    uniq, inv = np.unique(keys, return_inverse=True)
    counts = np.bincount(inv).astype(np.int64)
    return OdWorkerOut(batch.towers, uniq, counts, batch.rows_read,
                       batch.n_rejects, batch.rejects, batch.digest)


@dataclass
class OdResult:
    window_minutes: int
    tower_ids: list  # global rank -> tower id (sorted)
    keys: np.ndarray  # packed with global ranks, ascending
    counts: np.ndarray
    report: ParseReport
    cdr_digest: str

    @property
    def total_movements(self) -> int:
        return int(self.counts.sum()) if len(self.counts) else 0

    def to_matrix(self) -> OdMatrix:
        t = len(self.tower_ids)
        out = {}
        for key, n in zip(self.keys.tolist(), self.counts.tolist()):
            widx, rem = divmod(key, t * t)
            a, b = divmod(rem, t)
            out[(widx, self.tower_ids[a], self.tower_ids[b])] = n
        return OdMatrix(self.window_minutes, out)

    def csv_lines(self):
        lines = ["window_start,from_tower,to_tower,count"]
        t = len(self.tower_ids)
        window_s = self.window_minutes * 60
        iso = {}
        ids = self.tower_ids
        for key, n in zip(self.keys.tolist(), self.counts.tolist()):
            widx, rem = divmod(key, t * t)
            a, b = divmod(rem, t)
            start = iso.get(widx)
            if start is None:
                start = iso[widx] = format_iso_ts(widx * window_s)
            lines.append(f"{start},{ids[a]},{ids[b]},{n}")
        return lines


def run_od(cdr_path, params, segment_filter: str, nshards: int, policy: str) -> OdResult:
    job = OdJob(window_minutes=params.od_window_minutes,
                max_gap_minutes=params.od_max_gap_minutes,
                segment_filter=segment_filter, home_country=params.home_country)
    parts = _run_workers(_od_worker, cdr_path, nshards, policy, job)
    report = _merge_reports(parts)
    digest = next((p.digest for p in parts if p.digest is not None), None)

    global_ids = sorted({tid for p in parts for tid in p.towers})
    rank = {tid: i for i, tid in enumerate(global_ids)}
    t_g = max(len(global_ids), 1)
    repacked = []
    recounts = []
    for p in parts:
        if len(p.keys) == 0:
            continue
        t_l = len(p.towers)
        lmap = np.array([rank[tid] for tid in p.towers], np.int64)
        widx, rem = np.divmod(p.keys, t_l * t_l)
        a, b = np.divmod(rem, t_l)
        repacked.append((widx * t_g + lmap[a]) * t_g + lmap[b])
        recounts.append(p.counts)
    if repacked:
        keys = np.concatenate(repacked)
        counts = np.concatenate(recounts)
        uniq, inv = np.unique(keys, return_inverse=True)
        totals = np.bincount(inv, weights=counts.astype(np.float64)).astype(np.int64)
    else:
        uniq = np.array([], np.int64)
        totals = np.array([], np.int64)
    return OdResult(
        window_minutes=params.od_window_minutes, tower_ids=global_ids,
        keys=uniq, counts=totals, report=report,
        cdr_digest=f"{digest:032x}" if digest is not None else "",
    )


def read_od_arrays(path, window_minutes: int):
    """Fast columnar reader for od.csv (same validations as read_od_csv)."""
    window_s = window_minutes * 60
    tower_index = {}
    tower_ids = []
    a_w = array("q")
    a_a = array("i")
    a_b = array("i")
    a_c = array("q")
    ts_cache = {}
    with open(path, "r", encoding="utf-8", newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header != ["window_start", "from_tower", "to_tower", "count"]:
            raise DataError("bad header: expected window_start,from_tower,to_tower,count",
                            path=path)
        for i, row in enumerate(reader, start=2):
            if len(row) != 4:
                raise DataError("wrong field count", path=path, row=i)
            start_s, a, b, n_s = row
            ts = ts_cache.get(start_s)
            if ts is None:
                try:
                    ts = ts_cache[start_s] = parse_iso_ts(start_s)
                except ValueError:
                    raise DataError(f"bad window_start {start_s!r}", path=path, row=i) \
                        from None
                if ts % window_s != 0:
                    raise DataError(f"window_start {start_s} off the "
                                    f"{window_minutes}-minute grid", path=path, row=i)
            if a == b:
                raise DataError(f"self-pair {a}->{b}", path=path, row=i)
            try:
                n = int(n_s)
            except ValueError:
                raise DataError(f"bad count {n_s!r}", path=path, row=i) from None
            if n < 0:
                raise DataError(f"negative count {n_s}", path=path, row=i)
            ai = tower_index.get(a)
            if ai is None:
                ai = tower_index[a] = len(tower_ids)
                tower_ids.append(a)
            bi = tower_index.get(b)
            if bi is None:
                bi = tower_index[b] = len(tower_ids)
                tower_ids.append(b)
            a_w.append(ts // window_s)
            a_a.append(ai)
            a_b.append(bi)
            a_c.append(n)
    return (tower_ids, _np(a_w, np.int64), _np(a_a, np.int32), _np(a_b, np.int32),
            _np(a_c, np.int64))


def assign_bulk(tower_ids, widx, from_code, to_code, counts, window_minutes,
                graph, snapping) -> LinkFlows:
    """Vectorized all-or-nothing assignment; equals congestion.assign_to_links."""
    n_arcs = len(graph.arcs)
    flows = LinkFlows(window_minutes, graph, {})
    if len(widx) == 0 or n_arcs == 0:
        return flows
    src_nodes = []
    for tid in tower_ids:
        node = snapping.get(tid)
        if node is None:
            raise DataError(f"O-D references tower {tid} absent from snapping")
        src_nodes.append(node)

    trees = {}
    pair_paths = {}
    t64 = from_code.astype(np.int64)
    pair_key = t64 * len(tower_ids) + to_code
    order = np.argsort(pair_key, kind="stable")
    pk_sorted = pair_key[order]
    lead = np.ones(len(pk_sorted), bool)
    lead[1:] = pk_sorted[1:] != pk_sorted[:-1]
    starts = np.flatnonzero(lead)
    ends = np.append(starts[1:], len(pk_sorted))

    wmin = int(widx.min())
    wspan = int(widx.max()) - wmin + 1
    flat_total = np.zeros(wspan * n_arcs)
    n_unreach_pairs = 0
    n_unreach_moves = 0
    unreachable = set()

    chunk_keys = []
    chunk_weights = []
    chunk_size = 0
    for s_i, e_i in zip(starts, ends):
        key = int(pk_sorted[s_i])
        a, b = divmod(key, len(tower_ids))
        src = src_nodes[a]
        dst = src_nodes[b]
        if src == dst:
            continue
        arcs = pair_paths.get((src, dst))
        if arcs is None:
            tree = trees.get(src)
            if tree is None:
                tree = trees[src] = shortest_path_tree(graph, src)
            if dst not in tree:
                arcs = ()
            else:
                rev = []
                node = dst
                while node != src:
                    _, _, pred = tree[node]
                    rev.append(pred)
                    node = graph.arcs[pred].from_node
                arcs = tuple(reversed(rev))
            pair_paths[(src, dst)] = arcs
        rows = order[s_i:e_i]
        if not arcs:
            unreachable.add((tower_ids[a], tower_ids[b]))
            n_unreach_pairs += 1
            n_unreach_moves += int(counts[rows].sum())
            continue
        arc_arr = np.array(arcs, np.int64)
        w_rel = widx[rows] - wmin
        flat = (w_rel[:, None] * n_arcs + arc_arr[None, :]).ravel()
        weight = np.repeat(counts[rows], len(arcs)).astype(np.float64)
        chunk_keys.append(flat)
        chunk_weights.append(weight)
        chunk_size += len(flat)
        if chunk_size >= 4_000_000:
            flat_total += np.bincount(np.concatenate(chunk_keys),
                                      weights=np.concatenate(chunk_weights),
                                      minlength=wspan * n_arcs)
            chunk_keys, chunk_weights, chunk_size = [], [], 0
    if chunk_keys:
        flat_total += np.bincount(np.concatenate(chunk_keys),
                                  weights=np.concatenate(chunk_weights),
                                  minlength=wspan * n_arcs)

    nz = np.flatnonzero(flat_total)
    out = {}
    for idx in nz.tolist():
        w_rel, ai = divmod(idx, n_arcs)
        out[(w_rel + wmin, ai)] = int(flat_total[idx])
    flows.flows = out
    flows.n_unreachable_pairs = n_unreach_pairs
    flows.n_unreachable_movements = n_unreach_moves
    flows.unreachable = unreachable
    return flows
