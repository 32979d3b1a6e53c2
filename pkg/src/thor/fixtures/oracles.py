"""Brute-force reference answers for the scenario corpus.

Each oracle reads raw table rows with plain ``sqlite3`` and computes the
expected answer in Python. Nothing here goes through the engine's parser,
dialect rewrite or executor.
"""
from __future__ import annotations

import math
import re
import sqlite3
from collections import Counter
from dataclasses import dataclass
from datetime import datetime
from pathlib import Path

from thor.domain import METERS_PER_MILE

TS = "%Y-%m-%d %H:%M:%S"


def _rows(db: str | Path, table: str) -> list[sqlite3.Row]:
    conn = sqlite3.connect(f"file:{db}?mode=ro", uri=True)
    conn.row_factory = sqlite3.Row
    try:
        return list(conn.execute(f'SELECT * FROM "{table}"'))
    finally:
        conn.close()


def months_before(when: datetime, months: int) -> datetime:
    index = when.year * 12 + (when.month - 1) - months
    year, month = divmod(index, 12)
    return when.replace(year=year, month=month + 1)


def _naive(now: datetime) -> datetime:
    return now.replace(tzinfo=None)


@dataclass(frozen=True)
class OracleResult:
    rows: list
    compare: str  # "ordered" | "set" | "keyed_rel"
    tolerance: float = 0.0
    key_column: int = 0
    value_column: int = -1


def deliveries_by_month(db, now: datetime) -> OracleResult:
    """Monthly request counts per status over the last 18 months, up to now."""
    now = _naive(now)
    lo, hi = months_before(now, 18).strftime(TS), now.strftime(TS)
    counts: Counter = Counter()
    for r in _rows(db, "delivery_requests"):
        if r["status"] is not None and lo <= r["created_at"] <= hi:
            counts[(r["created_at"][:7], r["status"])] += 1
    ordered = sorted(counts.items(), key=lambda kv: kv[0][1])
    ordered = sorted(ordered, key=lambda kv: kv[0][0], reverse=True)
    return OracleResult([(m, s, n) for (m, s), n in ordered], "ordered")


def income_per_mile(db, now: datetime) -> OracleResult:
    """sum(fee) / sum(distance / 1609.34) per region, delivered requests since midnight three months back."""
    now = _naive(now)
    lo = months_before(now.replace(hour=0, minute=0, second=0, microsecond=0), 3).strftime(TS)
    hi = now.strftime(TS)
    regions = {r["id"]: r["name"] for r in _rows(db, "regions")}
    account_region = {a["id"]: a["region_id"] for a in _rows(db, "accounts")}
    fee: dict[str, float] = {}
    miles: dict[str, float] = {}
    for r in _rows(db, "delivery_requests"):
        if r["status"] != "delivered" or not (lo <= r["created_at"] <= hi):
            continue
        name = regions[account_region[r["account_id"]]]
        fee[name] = fee.get(name, 0) + r["fee_total_calculated"]
        miles[name] = miles.get(name, 0.0) + r["distance"] / METERS_PER_MILE
    out = [(name, fee[name] / miles[name]) for name in fee if miles[name] > 0]
    out.sort(key=lambda kv: kv[1], reverse=True)
    return OracleResult(out[:10], "keyed_rel", tolerance=1e-9, key_column=0, value_column=-1)


_HIP_HOP = re.compile(r"hip.*hop|hip-hop|rap")


def hip_hop_tracks(db, now: datetime | None = None) -> OracleResult:
    n = sum(1 for t in _rows(db, "chinook_track") if t["genre"] and _HIP_HOP.search(t["genre"].lower()))
    return OracleResult([(n,)], "ordered")


def highest_price_track(db, now: datetime | None = None) -> OracleResult:
    tracks = _rows(db, "chinook_track")
    top = max(t["unit_price"] for t in tracks)
    return OracleResult([(t["name"], t["unit_price"]) for t in tracks if t["unit_price"] == top], "set")


def sales_past_three_months(db, now: datetime) -> OracleResult:
    """Invoice lines dated within [now - 3 months, now]."""
    now = _naive(now)
    lo, hi = months_before(now, 3).strftime(TS), now.strftime(TS)
    customers = {c["customer_id"]: c for c in _rows(db, "chinook_customer")}
    tracks = {t["track_id"]: t for t in _rows(db, "chinook_track")}
    invoices = {i["invoice_id"]: i for i in _rows(db, "chinook_invoice") if lo <= i["invoice_date"] <= hi}
    out = []
    for line in _rows(db, "chinook_invoice_line"):
        inv = invoices.get(line["invoice_id"])
        if inv is None:
            continue
        cust = customers[inv["customer_id"]]
        track = tracks.get(line["track_id"])
        out.append(
            (
                inv["invoice_id"],
                inv["customer_id"],
                inv["invoice_date"],
                inv["total"],
                f"{cust['first_name']} {cust['last_name']}",
                line["track_id"],
                track["name"] if track else None,
                line["unit_price"],
                line["quantity"],
                line["unit_price"] * line["quantity"],
            )
        )
    return OracleResult(out, "set")


def requests_per_status(db, now: datetime | None = None) -> OracleResult:
    counts = Counter(r["status"] for r in _rows(db, "delivery_requests"))
    return OracleResult(sorted(counts.items()), "set")


ORACLES = {
    "deliveries_by_month": deliveries_by_month,
    "income_per_mile": income_per_mile,
    "hip_hop_tracks": hip_hop_tracks,
    "highest_price_track": highest_price_track,
    "sales_past_three_months": sales_past_three_months,
    "requests_per_status": requests_per_status,
}


def compare(result: OracleResult, rows) -> tuple[bool, str]:
    """Check engine ``rows`` against an oracle; returns (ok, explanation)."""
    rows = [tuple(r) for r in rows]
    if result.compare == "ordered":
        ok = rows == [tuple(r) for r in result.rows]
        return ok, "rows match in order" if ok else f"expected {result.rows[:3]}..., got {rows[:3]}..."
    if result.compare == "set":
        ok = Counter(rows) == Counter(tuple(r) for r in result.rows)
        return ok, f"{len(rows)} rows match as a multiset" if ok else f"row sets differ ({len(rows)} vs {len(result.rows)})"
    expected = {r[result.key_column]: r[result.value_column] for r in result.rows}
    got = {r[result.key_column]: r[result.value_column] for r in rows}
    if set(expected) != set(got):
        return False, f"keys differ: expected {sorted(expected)}, got {sorted(got)}"
    worst = 0.0
    for key, value in expected.items():
        if not isinstance(got[key], (int, float)):
            return False, f"{key}: non-numeric value {got[key]!r}"
        rel = abs(got[key] - value) / max(abs(value), 1e-300)
        worst = max(worst, rel)
        if not math.isfinite(got[key]) or rel > result.tolerance:
            return False, f"{key}: {got[key]} vs oracle {value} (rel {rel:.3g})"
    return True, f"{len(expected)} values within rel {result.tolerance:g} (worst {worst:.2g})"
