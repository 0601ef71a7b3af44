"""Phone-price income proxy from the TAC price table."""

from __future__ import annotations

import statistics
from dataclasses import dataclass


@dataclass
class IncomeProfile:
    n_subscribers: int
    n_priced: int
    median: float | None
    q25: float | None
    q75: float | None

    @property
    def coverage(self) -> float:
        return self.n_priced / self.n_subscribers if self.n_subscribers else 0.0

    @property
    def defined(self) -> bool:
        return self.n_priced > 0


def subscriber_price(records, table):
    """Price of the subscriber's modal priced TAC; None if no record carries one.

    Ties between equally frequent TACs go to the most recently seen. TACs
    absent from the table are ignored (SIMs seen in unpriceable devices).
    """
    stats = {}
    for idx, r in enumerate(records):
        if r.tac and r.tac in table:
            entry = stats.get(r.tac)
            if entry is None:
                stats[r.tac] = [1, idx]
            else:
                entry[0] += 1
                entry[1] = idx
    if not stats:
        return None
    winner = max(stats, key=lambda tac: (stats[tac][0], stats[tac][1]))
    return table[winner].price_usd


def income_profile(prices_by_subscriber) -> IncomeProfile:
    """Quartile summary over priced subscribers (linear interpolation).

    ``prices_by_subscriber`` maps subscriber_id -> price or None. An empty
    priced set yields an undefined profile (quantiles None, coverage 0).
    """
    n = len(prices_by_subscriber)
    priced = sorted(p for p in prices_by_subscriber.values() if p is not None)
    if not priced:
        return IncomeProfile(n, 0, None, None, None)
    if len(priced) == 1:
        v = priced[0]
        return IncomeProfile(n, 1, v, v, v)
    q25, med, q75 = statistics.quantiles(priced, n=4, method="inclusive")
    return IncomeProfile(n, len(priced), med, q25, q75)


def income_by_country(classes, prices_by_subscriber):
    """Per origin-country IncomeProfile over all classified subscribers."""
    groups = {}
    for sid in sorted(prices_by_subscriber):
        cls = classes.get(sid)
        if cls is None:
            continue
        groups.setdefault(cls.origin_country, {})[sid] = prices_by_subscriber[sid]
    return {cc: income_profile(groups[cc]) for cc in sorted(groups)}


def income_csv_lines(profiles_by_country):
    """Rows for income_by_country.csv."""
    lines = ["country,n,priced,median,q25,q75,coverage"]
    for cc in sorted(profiles_by_country):
        p = profiles_by_country[cc]
        med = "" if p.median is None else repr(p.median)
        q25 = "" if p.q25 is None else repr(p.q25)
        q75 = "" if p.q75 is None else repr(p.q75)
        lines.append(f"{cc},{p.n_subscribers},{p.n_priced},{med},{q25},{q75},{p.coverage!r}")
    return lines
