"""Shared value types and engine constants.

Every type here is an immutable value object: construct it once, validate in
``__post_init__``, and pass it around freely between pipelines.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from datetime import datetime
from enum import Enum
from typing import Any

from thor.clock import format_instant, utc
from thor.errors import CatalogError, PreconditionError

MAX_ATTEMPTS = 5
METERS_PER_MILE = 1609.34


class DataKind(str, Enum):
    INTEGER = "integer"
    DECIMAL = "decimal"
    TEXT = "text"
    TIMESTAMP = "timestamp"
    BOOLEAN = "boolean"
    OTHER = "other"


class Classification(str, Enum):
    SINGLE_SELECT = "single_select"
    WRITE = "write"
    DDL = "ddl"
    MULTI_STATEMENT = "multi_statement"
    LOCKING_SELECT = "locking_select"
    NON_SELECT = "non_select"
    UNPARSEABLE = "unparseable"


class RefusalReason(str, Enum):
    NOT_SELECT = "not_select"
    MULTI_STATEMENT = "multi_statement"
    LOCKING_CLAUSE = "locking_clause"
    WRITE_DETECTED = "write_detected"
    DDL_DETECTED = "ddl_detected"
    UNAUTHORIZED_COLUMN = "unauthorized_column"
    DENIED_FUNCTION = "denied_function"
    UNPARSEABLE = "unparseable"
    TOO_LONG = "too_long"


class OutcomeStatus(str, Enum):
    ROWS = "rows"
    EMPTY = "empty"
    ERROR = "error"
    TRUNCATED = "truncated"


class Verdict(str, Enum):
    ACCEPT = "accept"
    REGENERATE = "regenerate"


class Flag(str, Enum):
    EMPTY_RESULT = "empty_result"
    EXECUTION_ERROR = "execution_error"
    FUTURE_DATES_PRESENT = "future_dates_present"
    UNIT_MISMATCH = "unit_mismatch"
    EXACT_MATCH_ZERO_ROWS = "exact_match_zero_rows"
    LOW_LLM_SCORE = "low_llm_score"
    SUSPICIOUS_AGGREGATE_TRUNCATION = "suspicious_aggregate_truncation"


class FinalStatus(str, Enum):
    ANSWERED = "answered"
    REFUSED = "refused"
    EXHAUSTED = "exhausted"


@dataclass(frozen=True)
class EngineConstants:
    max_attempts: int = MAX_ATTEMPTS
    meters_per_mile: float = METERS_PER_MILE
    accept_threshold: float = 0.6
    row_limit: int = 1000
    sample_value_limit: int = 20
    prompt_schema_budget: int = 4000


def validate_constants(constants: EngineConstants) -> list[str]:
    """Return every invariant the constants violate. Never raises."""
    problems = []
    if constants.max_attempts != MAX_ATTEMPTS:
        problems.append(f"MAX_ATTEMPTS must equal {MAX_ATTEMPTS} (got {constants.max_attempts})")
    if constants.meters_per_mile != METERS_PER_MILE:
        problems.append(
            f"METERS_PER_MILE must equal {METERS_PER_MILE} (got {constants.meters_per_mile})"
        )
    if not (0.0 <= constants.accept_threshold <= 1.0):
        problems.append(f"ACCEPT_THRESHOLD must lie in [0, 1] (got {constants.accept_threshold})")
    if constants.row_limit < 1:
        problems.append(f"ROW_LIMIT must be positive (got {constants.row_limit})")
    if constants.sample_value_limit < 1:
        problems.append(f"SAMPLE_VALUE_LIMIT must be positive (got {constants.sample_value_limit})")
    if constants.prompt_schema_budget < 1:
        problems.append(
            f"PROMPT_SCHEMA_BUDGET must be positive (got {constants.prompt_schema_budget})"
        )
    return problems


@dataclass(frozen=True)
class Question:
    text: str
    datasource_id: str
    asked_at: datetime
    session_id: str

    def __post_init__(self):
        if not isinstance(self.text, str) or not self.text.strip():
            raise PreconditionError("question text must be non-empty")
        if not isinstance(self.asked_at, datetime):
            raise PreconditionError("asked_at must be a datetime")
        object.__setattr__(self, "asked_at", utc(self.asked_at))

    def to_dict(self) -> dict[str, Any]:
        return {
            "text": self.text,
            "datasource_id": self.datasource_id,
            "asked_at": format_instant(self.asked_at),
            "session_id": self.session_id,
        }


@dataclass(frozen=True)
class ColumnMeta:
    name: str
    data_kind: DataKind
    nullable: bool = True
    unit_hint: str | None = None
    sampled_values: tuple | None = None

    def __post_init__(self):
        object.__setattr__(self, "data_kind", DataKind(self.data_kind))
        if self.sampled_values is not None:
            values = tuple(self.sampled_values)
            if len(set(values)) != len(values):
                raise CatalogError(f"sampled values for {self.name} are not distinct")
            object.__setattr__(self, "sampled_values", values)

    def to_dict(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "data_kind": self.data_kind.value,
            "nullable": self.nullable,
            "unit_hint": self.unit_hint,
            "sampled_values": list(self.sampled_values) if self.sampled_values is not None else None,
        }


@dataclass(frozen=True)
class TableMeta:
    name: str
    columns: tuple[ColumnMeta, ...]
    row_count_estimate: int | None = None
    description: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "columns", tuple(self.columns))
        names = [c.name.lower() for c in self.columns]
        if len(set(names)) != len(names):
            raise CatalogError(f"duplicate column names in table {self.name}")
        if self.row_count_estimate is not None and self.row_count_estimate < 0:
            raise CatalogError(f"negative row count estimate for {self.name}")

    def column(self, name: str) -> ColumnMeta | None:
        name = name.lower()
        for col in self.columns:
            if col.name.lower() == name:
                return col
        return None

    def to_dict(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "columns": [c.to_dict() for c in self.columns],
            "row_count_estimate": self.row_count_estimate,
            "description": self.description,
        }


@dataclass(frozen=True)
class ForeignKey:
    table: str
    column: str
    ref_table: str
    ref_column: str

    def __str__(self) -> str:
        return f"{self.table}.{self.column} → {self.ref_table}.{self.ref_column}"


@dataclass(frozen=True)
class SchemaCatalog:
    datasource_id: str
    tables: tuple[TableMeta, ...]
    foreign_keys: tuple[ForeignKey, ...] = ()
    denied_columns: frozenset[str] = frozenset()
    snapshot_at: datetime | None = None

    def __post_init__(self):
        object.__setattr__(self, "tables", tuple(self.tables))
        object.__setattr__(self, "foreign_keys", tuple(self.foreign_keys))
        object.__setattr__(self, "denied_columns", frozenset(c.lower() for c in self.denied_columns))
        names = [t.name.lower() for t in self.tables]
        if len(set(names)) != len(names):
            raise CatalogError("duplicate table names in catalog")
        for fk in self.foreign_keys:
            if self.column(fk.table, fk.column) is None:
                raise CatalogError(f"foreign key source {fk.table}.{fk.column} does not exist")
            if self.column(fk.ref_table, fk.ref_column) is None:
                raise CatalogError(f"foreign key target {fk.ref_table}.{fk.ref_column} does not exist")
        for qualified in self.denied_columns:
            table, _, column = qualified.partition(".")
            if not column or self.column(table, column) is None:
                raise CatalogError(f"denied column {qualified} does not exist")

    def table(self, name: str) -> TableMeta | None:
        name = name.lower()
        for t in self.tables:
            if t.name.lower() == name:
                return t
        return None

    def column(self, table: str, column: str) -> ColumnMeta | None:
        t = self.table(table)
        return t.column(column) if t is not None else None

    def with_sampled_values(self, table: str, column: str, values) -> SchemaCatalog:
        t = self.table(table)
        if t is None or t.column(column) is None:
            raise CatalogError(f"unknown column {table}.{column}")
        new_cols = tuple(
            replace(c, sampled_values=tuple(values)) if c.name.lower() == column.lower() else c
            for c in t.columns
        )
        new_tables = tuple(replace(x, columns=new_cols) if x is t else x for x in self.tables)
        return replace(self, tables=new_tables)

    def to_dict(self) -> dict[str, Any]:
        return {
            "datasource_id": self.datasource_id,
            "tables": [t.to_dict() for t in self.tables],
            "foreign_keys": [
                {"table": f.table, "column": f.column, "ref_table": f.ref_table, "ref_column": f.ref_column}
                for f in self.foreign_keys
            ],
            "denied_columns": sorted(self.denied_columns),
            "snapshot_at": format_instant(self.snapshot_at) if self.snapshot_at else None,
        }


@dataclass(frozen=True)
class ColumnRef:
    """A column mention inside a parsed statement.

    ``table`` is the base table the qualifier resolved to (or ``None`` when
    the mention was bare); ``scope_tables`` is the FROM set of base tables the
    mention could come from. ``is_star`` marks ``*`` / ``t.*`` projections.
    """

    name: str
    table: str | None
    scope_tables: tuple[str, ...]
    outer_tables: tuple[str, ...] = ()
    is_star: bool = False
    inferred: bool = False

    def display(self) -> str:
        if self.is_star:
            return f"{self.table}.*" if self.table else "*"
        return f"{self.table}.{self.name}" if self.table else self.name


@dataclass(frozen=True)
class SqlCandidate:
    sql_text: str
    attempt_number: int
    classification: Classification
    referenced_columns: frozenset[str] | None = None
    column_refs: tuple[ColumnRef, ...] = field(default=(), compare=False, repr=False)
    functions: frozenset[str] = field(default=frozenset(), compare=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "classification", Classification(self.classification))
        if not 1 <= self.attempt_number <= MAX_ATTEMPTS:
            raise PreconditionError(f"attempt_number {self.attempt_number} outside [1, {MAX_ATTEMPTS}]")
        if self.classification is Classification.SINGLE_SELECT and self.referenced_columns is None:
            raise PreconditionError("single_select candidates must carry referenced columns")

    def to_dict(self) -> dict[str, Any]:
        return {
            "sql_text": self.sql_text,
            "attempt_number": self.attempt_number,
            "classification": self.classification.value,
            "referenced_columns": sorted(self.referenced_columns) if self.referenced_columns is not None else None,
        }


@dataclass(frozen=True)
class GuardrailVerdict:
    decision: str  # "allowed" | "refused"
    refusal_reason: RefusalReason | None = None
    detail: tuple[str, ...] = ()
    referenced_columns: frozenset[str] | None = None

    def __post_init__(self):
        if self.decision not in ("allowed", "refused"):
            raise PreconditionError(f"unknown guardrail decision {self.decision!r}")
        if self.decision == "allowed" and self.refusal_reason is not None:
            raise PreconditionError("allowed verdicts carry no refusal reason")
        if self.decision == "refused" and self.refusal_reason is None:
            raise PreconditionError("refused verdicts need a reason")

    @property
    def allowed(self) -> bool:
        return self.decision == "allowed"

    def describe(self) -> str:
        if self.allowed:
            return "allowed"
        suffix = f"({', '.join(self.detail)})" if self.detail else ""
        return f"refused:{self.refusal_reason.value}{suffix}"

    def to_dict(self) -> dict[str, Any]:
        return {
            "decision": self.decision,
            "refusal_reason": self.refusal_reason.value if self.refusal_reason else None,
            "detail": list(self.detail),
            "referenced_columns": sorted(self.referenced_columns) if self.referenced_columns is not None else None,
        }


def _json_value(value):
    if isinstance(value, float) and not math.isfinite(value):
        return repr(value)
    if isinstance(value, bytes):
        return value.hex()
    return value


@dataclass(frozen=True)
class ExecutionOutcome:
    status: OutcomeStatus
    rows: tuple[tuple, ...] | None = None
    column_names: tuple[str, ...] = ()
    error_message: str | None = None
    elapsed_ms: float = 0.0
    row_limit_applied: int | None = None

    def __post_init__(self):
        status = OutcomeStatus(self.status)
        object.__setattr__(self, "status", status)
        object.__setattr__(self, "column_names", tuple(self.column_names))
        if self.rows is not None:
            object.__setattr__(self, "rows", tuple(tuple(r) for r in self.rows))
        if status in (OutcomeStatus.ROWS, OutcomeStatus.TRUNCATED) and self.rows is None:
            raise PreconditionError(f"status {status.value} requires rows")
        if status is OutcomeStatus.EMPTY and self.rows:
            raise PreconditionError("empty outcomes carry zero rows")
        if status is OutcomeStatus.ERROR:
            if self.error_message is None:
                raise PreconditionError("error outcomes need an error message")
            if self.rows:
                raise PreconditionError("error outcomes carry no rows")
        elif self.error_message is not None:
            raise PreconditionError("error_message is only valid with status=error")
        if status is OutcomeStatus.TRUNCATED and len(self.rows) != self.row_limit_applied:
            raise PreconditionError("truncated outcomes hold exactly row_limit_applied rows")
        if self.elapsed_ms < 0:
            raise PreconditionError("elapsed_ms must be non-negative")

    @property
    def has_rows(self) -> bool:
        return self.status in (OutcomeStatus.ROWS, OutcomeStatus.TRUNCATED)

    def to_dict(self) -> dict[str, Any]:
        return {
            "status": self.status.value,
            "row_count": len(self.rows or ()),
            "column_names": list(self.column_names),
            "error_message": self.error_message,
            "elapsed_ms": self.elapsed_ms,
            "row_limit_applied": self.row_limit_applied,
        }


@dataclass(frozen=True)
class RatingReport:
    score: float
    verdict: Verdict
    flags: frozenset[Flag] = frozenset()
    rationale: str = ""

    def __post_init__(self):
        object.__setattr__(self, "verdict", Verdict(self.verdict))
        object.__setattr__(self, "flags", frozenset(Flag(f) for f in self.flags))
        if not 0.0 <= self.score <= 1.0:
            raise PreconditionError(f"rating score {self.score} outside [0, 1]")
        if self.flags and self.verdict is Verdict.ACCEPT:
            raise PreconditionError("flagged ratings cannot accept")

    @classmethod
    def decide(cls, score: float, flags, threshold: float, rationale: str = "") -> RatingReport:
        flags = frozenset(flags)
        if score < threshold:
            flags = flags | {Flag.LOW_LLM_SCORE}
        verdict = Verdict.ACCEPT if not flags else Verdict.REGENERATE
        return cls(score=score, verdict=verdict, flags=flags, rationale=rationale)

    def to_dict(self) -> dict[str, Any]:
        return {
            "score": self.score,
            "verdict": self.verdict.value,
            "flags": sorted(f.value for f in self.flags),
            "rationale": self.rationale,
        }


@dataclass(frozen=True)
class AttemptTrace:
    candidate: SqlCandidate
    guardrail_verdict: GuardrailVerdict
    outcome: ExecutionOutcome | None = None
    rating: RatingReport | None = None
    correction_hint: str | None = None

    def __post_init__(self):
        if self.outcome is not None and not self.guardrail_verdict.allowed:
            raise PreconditionError("refused candidates are never executed")
        if self.rating is not None and self.outcome is None:
            raise PreconditionError("ratings require an execution outcome")

    def to_dict(self) -> dict[str, Any]:
        return {
            "candidate": self.candidate.to_dict(),
            "guardrail_verdict": self.guardrail_verdict.to_dict(),
            "outcome": self.outcome.to_dict() if self.outcome else None,
            "rating": self.rating.to_dict() if self.rating else None,
            "correction_hint": self.correction_hint,
        }


@dataclass(frozen=True)
class QueryAnswer:
    final_status: FinalStatus
    rows: tuple[tuple, ...]
    column_names: tuple[str, ...]
    narrative: str
    key_values: tuple[tuple[str, Any], ...]
    attempts: tuple[AttemptTrace, ...]
    best_attempt: int | None = None
    transcript: tuple[dict, ...] = field(default=(), compare=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "final_status", FinalStatus(self.final_status))
        object.__setattr__(self, "attempts", tuple(self.attempts))
        if not 1 <= len(self.attempts) <= MAX_ATTEMPTS:
            raise PreconditionError(f"answers carry 1..{MAX_ATTEMPTS} attempts, got {len(self.attempts)}")
        if self.final_status is FinalStatus.ANSWERED and not self.narrative.strip():
            raise PreconditionError("answered results need a narrative")

    @property
    def refusal(self) -> GuardrailVerdict | None:
        if self.final_status is FinalStatus.REFUSED:
            return self.attempts[-1].guardrail_verdict
        return None

    def to_dict(self) -> dict[str, Any]:
        return {
            "final_status": self.final_status.value,
            "column_names": list(self.column_names),
            "rows": [[_json_value(v) for v in row] for row in self.rows],
            "narrative": self.narrative,
            "key_values": [[label, _json_value(value)] for label, value in self.key_values],
            "best_attempt": self.best_attempt,
            "attempts": [a.to_dict() for a in self.attempts],
        }
