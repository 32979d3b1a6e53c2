"""Read-only execution against the reference SQLite backend.

Sessions are opened with ``mode=ro`` and ``PRAGMA query_only`` so a write
that slips past the guardrail still fails inside the engine. Only SQL
regenerated from the parsed tree is executed.
"""
from __future__ import annotations

import sqlite3
import time
from contextlib import contextmanager
from dataclasses import dataclass
from datetime import datetime
from pathlib import Path
from urllib.parse import quote

from sqlglot.errors import SqlglotError

from thor.clock import SystemClock, elapsed_ms
from thor.dialect import install_functions, parse_statements, to_sqlite
from thor.domain import ExecutionOutcome, OutcomeStatus
from thor.errors import ConfigError, DatasourceUnavailable, ReadOnlyViolation


@dataclass(frozen=True)
class DatasourceConfig:
    descriptor: str
    read_only: bool = True
    statement_timeout_ms: int = 10000
    row_limit: int = 1000

    def __post_init__(self):
        if not self.read_only:
            raise ConfigError("datasources must be configured read-only")
        if self.statement_timeout_ms <= 0:
            raise ConfigError("statement_timeout_ms must be positive")
        if self.row_limit < 1:
            raise ConfigError("row_limit must be positive")

    @property
    def path(self) -> Path:
        d = self.descriptor
        for prefix in ("sqlite:///", "sqlite://", "file:"):
            if d.startswith(prefix):
                d = d[len(prefix):]
                break
        return Path(d)


class SqliteExecutor:
    """Executes approved statements and classifies the outcome."""

    def __init__(self, config: DatasourceConfig, clock=None):
        self.config = config
        self.clock = clock or SystemClock()
        self.calls = 0

    def _open(self) -> sqlite3.Connection:
        path = self.config.path
        if not path.is_file():
            raise DatasourceUnavailable(f"database file not found: {path}")
        uri = f"file:{quote(str(path.resolve()))}?mode=ro"
        try:
            conn = sqlite3.connect(uri, uri=True, check_same_thread=False)
            conn.execute("PRAGMA query_only = ON")
        except sqlite3.Error as err:
            raise DatasourceUnavailable(f"cannot open {path}: {err}") from err
        install_functions(conn)
        return conn

    @contextmanager
    def connect(self):
        conn = self._open()
        try:
            yield conn
        finally:
            conn.close()

    def _error(self, message: str, started: float) -> ExecutionOutcome:
        return ExecutionOutcome(
            OutcomeStatus.ERROR, None, (), error_message=message, elapsed_ms=elapsed_ms(self.clock, started)
        )

    def execute(self, sql_text: str, now: datetime | None = None) -> ExecutionOutcome:
        self.calls += 1
        started = self.clock.monotonic()
        now = now or self.clock.now()
        try:
            statements = parse_statements(sql_text)
        except (SqlglotError, ValueError) as err:
            return self._error(str(err).splitlines()[0], started)
        if len(statements) != 1:
            return self._error(f"executor accepts exactly one statement, got {len(statements)}", started)
        try:
            rendered = to_sqlite(statements[0], now)
        except (SqlglotError, ValueError) as err:
            return self._error(str(err).splitlines()[0], started)

        limit = self.config.row_limit
        deadline = time.monotonic() + self.config.statement_timeout_ms / 1000.0
        timed_out = False

        def watchdog():
            nonlocal timed_out
            if time.monotonic() > deadline:
                timed_out = True
                return 1
            return 0

        with self.connect() as conn:
            conn.set_progress_handler(watchdog, 1000)
            try:
                cursor = conn.execute(rendered)
                rows = cursor.fetchmany(limit + 1)
                names = tuple(d[0] for d in cursor.description or ())
            except sqlite3.Error as err:
                if timed_out:
                    return self._error(
                        f"timeout: statement exceeded {self.config.statement_timeout_ms} ms", started
                    )
                return self._error(str(err), started)
        took = elapsed_ms(self.clock, started)
        if not rows:
            return ExecutionOutcome(OutcomeStatus.EMPTY, (), names, elapsed_ms=took)
        if len(rows) > limit:
            return ExecutionOutcome(
                OutcomeStatus.TRUNCATED, rows[:limit], names, elapsed_ms=took, row_limit_applied=limit
            )
        return ExecutionOutcome(OutcomeStatus.ROWS, rows, names, elapsed_ms=took)

    def probe_readonly(self) -> str:
        """Try a throwaway write and confirm the session rejects it.

        Raises :class:`ReadOnlyViolation` when the write goes through.
        """
        with self.connect() as conn:
            try:
                conn.execute("SAVEPOINT thor_probe")
                conn.execute("CREATE TABLE thor_probe_table (x INTEGER)")
            except sqlite3.Error:
                return "writes rejected"
            try:
                conn.execute("ROLLBACK TO thor_probe")
            except sqlite3.Error:
                pass
            raise ReadOnlyViolation(f"session on {self.config.path} accepted a write")
