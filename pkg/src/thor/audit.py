"""Append-only audit journal (JSON lines) with an in-memory index."""
from __future__ import annotations

import json
import os
import threading
from dataclasses import asdict, dataclass, field
from datetime import datetime
from pathlib import Path

from thor.clock import SystemClock, format_instant, parse_instant
from thor.errors import AuditFailure

RECORD_KINDS = ("attempt", "introspection", "terminal", "routing")


@dataclass(frozen=True)
class AuditRecord:
    record_id: int
    timestamp: str
    kind: str
    session_id: str
    question_text: str
    datasource_id: str = ""
    attempt_number: int | None = None
    sql_text: str | None = None
    guardrail_decision: str | None = None
    guardrail_reason: str | None = None
    outcome_status: str | None = None
    rating_score: float | None = None
    flags: tuple[str, ...] = ()
    final_status: str | None = None
    duration_ms: float = 0.0
    provider_calls: tuple[str, ...] = ()
    executor_calls: int = 0
    detail: str = ""

    def to_json(self) -> str:
        doc = asdict(self)
        doc["flags"] = list(self.flags)
        doc["provider_calls"] = list(self.provider_calls)
        return json.dumps(doc, sort_keys=True, ensure_ascii=False)

    @classmethod
    def from_json(cls, line: str) -> AuditRecord:
        doc = json.loads(line)
        doc["flags"] = tuple(doc.get("flags") or ())
        doc["provider_calls"] = tuple(doc.get("provider_calls") or ())
        return cls(**doc)


@dataclass(frozen=True)
class AuditFilter:
    session_id: str | None = None
    since: datetime | None = None
    until: datetime | None = None
    final_status: str | None = None
    kind: str | None = None

    def matches(self, rec: AuditRecord) -> bool:
        if self.session_id is not None and rec.session_id != self.session_id:
            return False
        if self.final_status is not None and rec.final_status != self.final_status:
            return False
        if self.kind is not None and rec.kind != self.kind:
            return False
        if self.since is not None or self.until is not None:
            when = parse_instant(rec.timestamp)
            if self.since is not None and when < self.since:
                return False
            if self.until is not None and when > self.until:
                return False
        return True


class AuditStore:
    """Journal file plus index. Appends are serialized and fsynced.

    There is deliberately no update or delete operation. Any storage error
    raises :class:`AuditFailure`, which aborts the calling pipeline.
    """

    def __init__(self, path: str | Path | None = None, clock=None, fsync: bool = True):
        self.path = Path(path) if path is not None else None
        self.clock = clock or SystemClock()
        self.fsync = fsync
        self._lock = threading.Lock()
        self._records: list[AuditRecord] = []
        if self.path is not None and self.path.exists():
            self._load()

    def _load(self) -> None:
        n = 0
        try:
            with self.path.open(encoding="utf-8") as fh:
                for n, line in enumerate(fh, start=1):
                    if line.strip():
                        self._records.append(AuditRecord.from_json(line))
        except (OSError, ValueError, TypeError) as err:
            raise AuditFailure(f"cannot read audit journal {self.path} (line {n}): {err}") from err
        ids = [r.record_id for r in self._records]
        if ids != list(range(1, len(ids) + 1)):
            raise AuditFailure(f"audit journal {self.path} has gaps or reordered ids")

    def check_writable(self) -> None:
        """Fail closed before any query runs if the journal cannot be written."""
        if self.path is None:
            return
        try:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with self.path.open("a", encoding="utf-8"):
                pass
        except OSError as err:
            raise AuditFailure(f"audit journal {self.path} is not writable: {err}") from err

    def append(self, **fields) -> AuditRecord:
        with self._lock:
            record = AuditRecord(
                record_id=len(self._records) + 1,
                timestamp=format_instant(self.clock.now()),
                **fields,
            )
            if record.kind not in RECORD_KINDS:
                raise AuditFailure(f"unknown audit record kind {record.kind!r}")
            if self.path is not None:
                try:
                    self.path.parent.mkdir(parents=True, exist_ok=True)
                    with self.path.open("a", encoding="utf-8") as fh:
                        fh.write(record.to_json() + "\n")
                        fh.flush()
                        if self.fsync:
                            os.fsync(fh.fileno())
                except OSError as err:
                    raise AuditFailure(f"audit append failed: {err}") from err
            self._records.append(record)
            return record

    def query(self, flt: AuditFilter | None = None) -> list[AuditRecord]:
        with self._lock:
            snapshot = list(self._records)
        flt = flt or AuditFilter()
        return [r for r in snapshot if flt.matches(r)]

    def __len__(self) -> int:
        return len(self._records)


def query_audit(store: AuditStore, session_id=None, since=None, until=None, final_status=None, kind=None):
    return store.query(AuditFilter(session_id, since, until, final_status, kind))


@dataclass
class CallCounts:
    generation: int = 0
    provider: int = 0
    execution: int = 0
    roles: dict = field(default_factory=dict)


def reconstruct_counts(records) -> CallCounts:
    """Rebuild provider and executor call counts from journal records."""
    counts = CallCounts()
    for rec in records:
        for role in rec.provider_calls:
            counts.provider += 1
            counts.roles[role] = counts.roles.get(role, 0) + 1
            if role in ("generate_sql", "correct_sql"):
                counts.generation += 1
        counts.execution += rec.executor_calls
    return counts
