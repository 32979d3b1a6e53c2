"""Turn a result table into key values and a short narrative."""
from __future__ import annotations

import math
import re
import statistics
from dataclasses import dataclass
from datetime import datetime

from thor.domain import ExecutionOutcome, OutcomeStatus
from thor.errors import PreconditionError, ProviderUnavailable

FLAT_EPSILON = 1e-9
MIN_TREND_ROWS = 3

_TS = re.compile(r"^(\d{4})-(\d{2})(?:-(\d{2})(?:[ T](\d{2}):(\d{2})(?::(\d{2})(?:\.\d+)?)?)?)?Z?$")
_NUMBER_TOKEN = re.compile(r"(?<![\w.])-?\d+(?:,\d{3})*(?:\.\d+)?")


def parse_timestamp(value) -> datetime | None:
    """Read ``YYYY-MM``, ``YYYY-MM-DD`` or ``YYYY-MM-DD HH:MM[:SS]`` text as a naive datetime."""
    if isinstance(value, datetime):
        return value.replace(tzinfo=None)
    if not isinstance(value, str):
        return None
    m = _TS.match(value.strip())
    if m is None:
        return None
    parts = [int(p) if p else None for p in m.groups()]
    year, month, day, hour, minute, second = parts
    try:
        return datetime(year, month, day or 1, hour or 0, minute or 0, second or 0)
    except ValueError:
        return None


def is_number(value) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool) and math.isfinite(value)


def format_value(value) -> str:
    if value is None:
        return "NULL"
    if isinstance(value, float) and value.is_integer() and abs(value) < 1e15:
        return str(int(value))
    return str(value)


@dataclass(frozen=True)
class KeyValueExtract:
    total_rows: int
    extrema: tuple[str, float, float] | None
    leading_row_summary: str
    trend: str | None = None
    trend_columns: tuple[str, str] | None = None
    truncated: bool = False

    def pairs(self) -> tuple[tuple[str, object], ...]:
        out: list[tuple[str, object]] = [("total_rows", self.total_rows)]
        if self.extrema is not None:
            col, lo, hi = self.extrema
            out += [(f"min {col}", lo), (f"max {col}", hi)]
        if self.trend is not None:
            out.append((f"trend of {self.trend_columns[1]} over {self.trend_columns[0]}", self.trend))
        return tuple(out)

    def describe(self) -> str:
        lines = [f"{label}: {format_value(v)}" for label, v in self.pairs()]
        lines.append(f"top row: {self.leading_row_summary}")
        return "\n".join(lines)

    def numbers(self) -> list[float]:
        vals = [float(self.total_rows)]
        if self.extrema is not None:
            vals += [float(self.extrema[1]), float(self.extrema[2])]
        return vals


def _numeric_columns(outcome: ExecutionOutcome) -> list[int]:
    idx = []
    for i in range(len(outcome.column_names)):
        values = [row[i] for row in outcome.rows if row[i] is not None]
        if values and all(is_number(v) for v in values):
            idx.append(i)
    return idx


def _time_column(outcome: ExecutionOutcome) -> int | None:
    for i in range(len(outcome.column_names)):
        values = [row[i] for row in outcome.rows if row[i] is not None]
        if values and all(parse_timestamp(v) is not None for v in values):
            return i
    return None


def trend_direction(points: list[tuple[float, float]]) -> str:
    """Sign of the least-squares slope; near-zero relative to the value range is flat."""
    xs = [p[0] for p in points]
    ys = [p[1] for p in points]
    if len(set(xs)) < 2:
        return "flat"
    slope = statistics.linear_regression(xs, ys).slope
    spread = max(ys) - min(ys)
    if abs(slope) <= FLAT_EPSILON * spread or spread == 0:
        return "flat"
    return "rising" if slope > 0 else "falling"


def extract_key_values(outcome: ExecutionOutcome) -> KeyValueExtract:
    if outcome.status not in (OutcomeStatus.ROWS, OutcomeStatus.TRUNCATED):
        raise PreconditionError(f"key values need rows, got status {outcome.status.value}")
    rows = outcome.rows
    names = outcome.column_names
    numeric = _numeric_columns(outcome)
    time_idx = _time_column(outcome)
    # the last numeric column is usually the measure; leading ones tend to be keys
    measure = next((i for i in reversed(numeric) if i != time_idx), None)
    extrema = None
    if measure is not None:
        values = [row[measure] for row in rows if row[measure] is not None]
        extrema = (names[measure], min(values), max(values))
    trend = trend_cols = None
    if time_idx is not None and measure is not None and len(rows) >= MIN_TREND_ROWS:
        points = []
        for row in rows:
            when = parse_timestamp(row[time_idx])
            if when is not None and row[measure] is not None:
                points.append((when.timestamp() / 86400.0, float(row[measure])))
        points.sort()
        if len(points) >= MIN_TREND_ROWS:
            trend = trend_direction(points)
            trend_cols = (names[time_idx], names[measure])
    summary = ", ".join(f"{n}={format_value(v)}" for n, v in zip(names, rows[0]))
    return KeyValueExtract(
        total_rows=len(rows),
        extrema=extrema,
        leading_row_summary=summary,
        trend=trend,
        trend_columns=trend_cols,
        truncated=outcome.status is OutcomeStatus.TRUNCATED,
    )


def fallback_narrative(extract: KeyValueExtract) -> str:
    noun = "row" if extract.total_rows == 1 else "rows"
    head = f"Query returned {extract.total_rows} {noun}"
    if extract.truncated:
        head += " (row limit reached)"
    return f"{head}; top row: {extract.leading_row_summary}."


def _data_numbers(outcome: ExecutionOutcome, extract: KeyValueExtract) -> list[float]:
    found = list(extract.numbers())
    for row in outcome.rows or ():
        for v in row:
            if is_number(v):
                found.append(float(v))
            elif isinstance(v, str):
                found.extend(float(t.replace(",", "")) for t in _NUMBER_TOKEN.findall(v))
    return found


def _token_matches(token: str, data: list[float]) -> bool:
    clean = token.replace(",", "")
    value = float(clean)
    decimals = len(clean.split(".")[1]) if "." in clean else 0
    for d in data:
        if d == value or round(d, decimals) == value or round(abs(d), decimals) == abs(value):
            return True
    return False


def unsupported_numbers(narrative: str, outcome: ExecutionOutcome, extract: KeyValueExtract) -> list[str]:
    """Numeric tokens in ``narrative`` that the rows and extract do not support.

    A token is supported when it equals a data value, possibly rounded to the
    token's own number of decimals.
    """
    data = _data_numbers(outcome, extract)
    return [t for t in _NUMBER_TOKEN.findall(narrative) if not _token_matches(t, data)]


@dataclass(frozen=True)
class Narration:
    text: str
    used_fallback: bool
    reason: str = ""
    provider_called: bool = False


def narrate(question, extract: KeyValueExtract, outcome: ExecutionOutcome, provider, verbosity: str = "concise") -> Narration:
    from thor.llm import PromptRole, ProviderRequest, render_prompt

    if provider is None:
        return Narration(fallback_narrative(extract), True, "no provider")
    prompt = render_prompt(PromptRole.INTERPRET_RESULT, question, "", (), outcome=outcome, extract=extract, verbosity=verbosity)
    try:
        response = provider.complete(ProviderRequest(PromptRole.INTERPRET_RESULT, prompt))
    except ProviderUnavailable as err:
        return Narration(fallback_narrative(extract), True, f"provider unavailable: {err}", True)
    text = response.text.strip()
    if not text:
        return Narration(fallback_narrative(extract), True, "empty narrative", True)
    bad = unsupported_numbers(text, outcome, extract)
    if bad:
        return Narration(fallback_narrative(extract), True, f"unsupported numbers: {', '.join(bad)}", True)
    return Narration(text, False, "", True)
