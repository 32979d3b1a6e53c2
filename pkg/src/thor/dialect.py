"""Dialect plumbing.

Candidate SQL is read as Postgres (the superset the models emit: ILIKE,
DATE_TRUNC, INTERVAL arithmetic, ``||``) and rewritten into SQLite, the
reference execution engine. ``NOW()`` and friends are pinned to the engine
clock during the rewrite so results do not depend on the host's wall time.

The module also carries a tiny lexer following SQLite's quoting rules. The
guardrail uses it as a second opinion on statement boundaries, because the
parser and the executing engine must agree on where a statement ends.
"""
from __future__ import annotations

import logging
import re
import sqlite3
from datetime import datetime, timedelta

import sqlglot
from sqlglot import exp

from thor.clock import utc

READ_DIALECT = "postgres"
EXEC_DIALECT = "sqlite"

logging.getLogger("sqlglot").setLevel(logging.ERROR)

TIMESTAMP_FORMAT = "%Y-%m-%d %H:%M:%S"


def lex_sqlite(sql: str) -> list[tuple[str, str]]:
    """Split ``sql`` into (kind, text) tokens using SQLite's lexical rules.

    Kinds: ``word``, ``string``, ``ident``, ``comment``, ``semicolon``,
    ``space``, ``other``. Unterminated quotes swallow the rest of the input,
    which is what SQLite itself does before reporting an error.
    """
    tokens: list[tuple[str, str]] = []
    i, n = 0, len(sql)
    while i < n:
        ch = sql[i]
        if ch.isspace():
            j = i + 1
            while j < n and sql[j].isspace():
                j += 1
            tokens.append(("space", sql[i:j]))
        elif ch == "-" and sql.startswith("--", i):
            j = sql.find("\n", i)
            j = n if j < 0 else j + 1
            tokens.append(("comment", sql[i:j]))
        elif ch == "/" and sql.startswith("/*", i):
            j = sql.find("*/", i + 2)
            j = n if j < 0 else j + 2
            tokens.append(("comment", sql[i:j]))
        elif ch in "'\"`":
            j = i + 1
            while j < n:
                if sql[j] == ch:
                    if j + 1 < n and sql[j + 1] == ch:
                        j += 2
                        continue
                    break
                j += 1
            j = min(j + 1, n)
            tokens.append(("string" if ch == "'" else "ident", sql[i:j]))
        elif ch == "[":
            j = sql.find("]", i + 1)
            j = n if j < 0 else j + 1
            tokens.append(("ident", sql[i:j]))
        elif ch == ";":
            j = i + 1
            tokens.append(("semicolon", ";"))
        elif ch.isalnum() or ch == "_" or ord(ch) > 127:
            j = i + 1
            while j < n and (sql[j].isalnum() or sql[j] in "_$" or ord(sql[j]) > 127):
                j += 1
            tokens.append(("word", sql[i:j]))
        else:
            j = i + 1
            tokens.append(("other", ch))
        i = j
    return tokens


def count_statements(sql: str) -> int:
    """Number of non-empty statements SQLite would see in ``sql``."""
    count, pending = 0, False
    for kind, _ in lex_sqlite(sql):
        if kind == "semicolon":
            if pending:
                count += 1
            pending = False
        elif kind not in ("space", "comment"):
            pending = True
    return count + (1 if pending else 0)


def bare_words(sql: str) -> list[tuple[str, str | None, str | None]]:
    """Bare words outside literals and comments, each with its neighbours.

    Returns (word, previous word, next significant token) triples, words
    upper-cased.
    """
    sig = [(k, t) for k, t in lex_sqlite(sql) if k not in ("space", "comment")]
    out = []
    prev_word = None
    for idx, (kind, text) in enumerate(sig):
        if kind != "word":
            prev_word = None
            continue
        nxt = sig[idx + 1][1] if idx + 1 < len(sig) else None
        out.append((text.upper(), prev_word, nxt))
        prev_word = text.upper()
    return out


_UNIT_SECONDS = {"SECOND": 1, "MINUTE": 60, "HOUR": 3600, "DAY": 86400, "WEEK": 604800}
_SQLITE_UNITS = {
    "SECOND": "seconds",
    "MINUTE": "minutes",
    "HOUR": "hours",
    "DAY": "days",
    "MONTH": "months",
    "YEAR": "years",
}


def _interval_modifier(interval: exp.Interval, sign: int) -> str | None:
    raw = interval.this.name if interval.this is not None else ""
    unit = interval.unit.name if interval.unit is not None else ""
    if not unit:
        m = re.fullmatch(r"\s*(-?\d+(?:\.\d+)?)\s*([A-Za-z]+)\s*", raw)
        if not m:
            return None
        raw, unit = m.groups()
    unit = unit.upper().rstrip("S")
    try:
        amount = float(raw)
    except ValueError:
        return None
    if unit == "WEEK":
        unit, amount = "DAY", amount * 7
    elif unit == "QUARTER":
        unit, amount = "MONTH", amount * 3
    if unit not in _SQLITE_UNITS:
        return None
    amount *= sign
    text = f"{int(amount)}" if amount == int(amount) else f"{amount}"
    if not text.startswith("-"):
        text = "+" + text
    return f"{text} {_SQLITE_UNITS[unit]}"


def _pin_clock(node: exp.Expression, now: datetime) -> exp.Expression:
    stamp = utc(now).strftime(TIMESTAMP_FORMAT)
    midnight = utc(now).strftime("%Y-%m-%d") + " 00:00:00"
    if isinstance(node, (exp.CurrentTimestamp, exp.CurrentDatetime)):
        return exp.Literal.string(stamp)
    if isinstance(node, exp.CurrentDate):
        return exp.Literal.string(midnight)
    if isinstance(node, exp.Anonymous) and node.name.upper() in ("NOW", "GETDATE", "SYSDATE"):
        return exp.Literal.string(stamp)
    return node


def _rewrite(node: exp.Expression) -> exp.Expression:
    if isinstance(node, (exp.Add, exp.Sub)) and isinstance(node.expression, exp.Interval):
        mod = _interval_modifier(node.expression, -1 if isinstance(node, exp.Sub) else 1)
        if mod is not None:
            return exp.func("DATETIME", node.this, exp.Literal.string(mod))
    if isinstance(node, (exp.TimestampTrunc, exp.DateTrunc, exp.DatetimeTrunc)):
        unit = node.args.get("unit")
        unit_name = unit.name if unit is not None else "day"
        return exp.Anonymous(
            this="thor_date_trunc", expressions=[exp.Literal.string(unit_name.lower()), node.this]
        )
    if isinstance(node, exp.Cast):
        target = node.to.this if node.to is not None else None
        if target in (exp.DataType.Type.DATE,):
            return exp.func("DATE", node.this)
        if target in (exp.DataType.Type.TIMESTAMP, exp.DataType.Type.TIMESTAMPTZ, exp.DataType.Type.DATETIME):
            return exp.func("DATETIME", node.this)
    if isinstance(node, exp.Table):
        node.set("catalog", None)
        node.set("db", None)
    return node


def to_sqlite(tree: exp.Expression, now: datetime) -> str:
    """Render a parsed read-only statement as SQLite text with the clock pinned."""
    tree = tree.copy()
    tree = tree.transform(lambda n: _pin_clock(n, now))
    tree = tree.transform(_rewrite)
    return tree.sql(dialect=EXEC_DIALECT)


def parse_statements(sql: str) -> list[exp.Expression]:
    """Parse ``sql`` in the read dialect, dropping empty statements."""
    return [s for s in sqlglot.parse(sql, read=READ_DIALECT) if s is not None]


def _parse_ts(value):
    if value is None:
        return None
    text = str(value).replace("T", " ")
    for fmt in (TIMESTAMP_FORMAT, "%Y-%m-%d %H:%M:%S.%f", "%Y-%m-%d", "%Y-%m"):
        try:
            return datetime.strptime(text, fmt)
        except ValueError:
            continue
    return None


def _date_trunc(unit, value):
    ts = _parse_ts(value)
    if ts is None or unit is None:
        return None
    unit = str(unit).lower()
    if unit == "year":
        ts = ts.replace(month=1, day=1, hour=0, minute=0, second=0, microsecond=0)
    elif unit == "quarter":
        ts = ts.replace(month=(ts.month - 1) // 3 * 3 + 1, day=1, hour=0, minute=0, second=0, microsecond=0)
    elif unit == "month":
        ts = ts.replace(day=1, hour=0, minute=0, second=0, microsecond=0)
    elif unit == "week":
        ts = (ts - timedelta(days=ts.weekday())).replace(hour=0, minute=0, second=0, microsecond=0)
    elif unit == "day":
        ts = ts.replace(hour=0, minute=0, second=0, microsecond=0)
    elif unit == "hour":
        ts = ts.replace(minute=0, second=0, microsecond=0)
    elif unit == "minute":
        ts = ts.replace(second=0, microsecond=0)
    else:
        return None
    return ts.strftime(TIMESTAMP_FORMAT)


def install_functions(conn: sqlite3.Connection) -> None:
    """Register the helper functions emitted by :func:`to_sqlite`."""
    conn.create_function("thor_date_trunc", 2, _date_trunc, deterministic=True)
