"""Language-model gateway: prompt roles, templates, providers and SQL extraction."""
from __future__ import annotations

import os
import re
import threading
import time
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

from thor.clock import SystemClock, elapsed_ms
from thor.errors import (
    ExtractionFailed,
    PreconditionError,
    ProviderUnavailable,
    ScenarioParseError,
    ScenarioViolation,
)

API_KEY_ENV = "THOR_LLM_API_KEY"
READ_ONLY_INSTRUCTION = "produce exactly one read-only SELECT statement"
PATTERN_INSTRUCTION = "prefer pattern matching over exact equality"
SAMPLE_ROWS = 10


class PromptRole(str, Enum):
    GENERATE_SQL = "generate_sql"
    CORRECT_SQL = "correct_sql"
    RATE_RESULT = "rate_result"
    INTERPRET_RESULT = "interpret_result"
    ROUTE_TASK = "route_task"


GENERATION_ROLES = (PromptRole.GENERATE_SQL, PromptRole.CORRECT_SQL)


@dataclass(frozen=True)
class ProviderRequest:
    role: PromptRole
    rendered_prompt: str
    temperature: float = 0.0
    max_output: int = 2048

    def __post_init__(self):
        object.__setattr__(self, "role", PromptRole(self.role))
        if not self.rendered_prompt:
            raise PreconditionError("rendered_prompt must be non-empty")
        if self.max_output < 1:
            raise PreconditionError("max_output must be positive")


@dataclass(frozen=True)
class ProviderResponse:
    text: str
    latency_ms: float
    provider_id: str
    truncated: bool = False


# --- prompt templates -------------------------------------------------------


def _rows_block(outcome, limit: int = SAMPLE_ROWS) -> str:
    if outcome is None or not outcome.rows:
        return "(no rows)"
    lines = [" | ".join(outcome.column_names)]
    lines.extend(" | ".join("NULL" if v is None else str(v) for v in row) for row in outcome.rows[:limit])
    return "\n".join(lines)


def _outcome_note(outcome) -> str:
    if outcome is None:
        return "not executed"
    status = outcome.status.value
    if status == "error":
        return f"execution error: {outcome.error_message}"
    if status == "empty":
        return "the query returned zero rows"
    note = f"{len(outcome.rows)} rows"
    if status == "truncated":
        note += f" (truncated at the {outcome.row_limit_applied}-row limit)"
    return note


def render_prompt(
    role: PromptRole,
    question,
    schema_text: str,
    history=(),
    *,
    outcome=None,
    extract=None,
    verbosity: str = "concise",
) -> str:
    """Render the deterministic prompt for ``role``.

    ``history`` is the list of prior attempt traces; ``outcome`` and
    ``extract`` feed the rating and interpretation roles.
    """
    role = PromptRole(role)
    q = question.text
    if role is PromptRole.GENERATE_SQL:
        return (
            "You translate questions into SQL for the schema below.\n"
            f"Rules: {READ_ONLY_INSTRUCTION}. Use only tables and columns listed. "
            "Reply with the SQL only.\n\n"
            f"Schema:\n{schema_text}\n\nQuestion: {q}\n"
        )
    if role is PromptRole.CORRECT_SQL:
        if not history:
            raise PreconditionError("correct_sql needs at least one prior attempt")
        last = history[-1]
        flags = sorted(f.value for f in last.rating.flags) if last.rating else []
        if last.guardrail_verdict.allowed:
            result = _outcome_note(last.outcome)
        else:
            result = f"refused by the guardrail: {last.guardrail_verdict.describe()}"
        parts = [
            "The previous SQL for this question needs correcting.",
            f"Rules: {READ_ONLY_INSTRUCTION}. Reply with the SQL only.",
            "",
            f"Schema:\n{schema_text}",
            "",
            f"Question: {q}",
            f"Previous SQL (attempt {last.candidate.attempt_number}):\n{last.candidate.sql_text}",
            f"Result: {result}",
            f"Flags: {', '.join(flags) if flags else 'none'}",
        ]
        if "exact_match_zero_rows" in flags or "empty_result" in flags:
            parts.append(f"Guidance: {PATTERN_INSTRUCTION} when filtering text columns.")
        if last.correction_hint:
            parts.append(f"Hint: {last.correction_hint}")
        return "\n".join(parts) + "\n"
    if role is PromptRole.RATE_RESULT:
        last = history[-1] if history else None
        sql = last.candidate.sql_text if last else ""
        count = len(outcome.rows or ()) if outcome is not None else 0
        return (
            "Rate how well the result answers the question.\n"
            "Reply exactly as:\nSCORE: <number between 0 and 1>\nREASON: <one sentence>\n\n"
            f"Question: {q}\nSQL:\n{sql}\nRow count: {count}\n"
            f"Sample rows:\n{_rows_block(outcome)}\n"
        )
    if role is PromptRole.INTERPRET_RESULT:
        length = "at most two sentences" if verbosity == "concise" else "a short paragraph"
        facts = extract.describe() if extract is not None else ""
        return (
            f"Summarise the result for the question in {length}. "
            "Only use numbers that appear in the data below.\n\n"
            f"Question: {q}\nColumns: {', '.join(outcome.column_names) if outcome else ''}\n"
            f"Key values:\n{facts}\nRows:\n{_rows_block(outcome)}\n"
        )
    return (
        "Decide whether the question asks for data from the database.\n"
        "Reply with t2s_lane or out_of_scope.\n\n"
        f"Question: {q}\n"
    )


# --- rating -----------------------------------------------------------------

_SCORE = re.compile(r"score\s*[:=]\s*([0-9]*\.?[0-9]+)", re.IGNORECASE)
_REASON = re.compile(r"reason\s*[:=]\s*(.+)", re.IGNORECASE)


def parse_rating(text: str) -> tuple[float, str]:
    """Parse ``SCORE: x`` / ``REASON: y``. Unreadable or out-of-range scores count as 0.0."""
    m = _SCORE.search(text or "")
    reason = _REASON.search(text or "")
    rationale = reason.group(1).strip() if reason else ""
    if m is None:
        return 0.0, rationale or "unparseable rating"
    score = float(m.group(1))
    if not 0.0 <= score <= 1.0:
        return 0.0, f"score {m.group(1)} outside [0, 1]"
    return score, rationale


# --- SQL extraction ---------------------------------------------------------

_FENCE = re.compile(r"```[ \t]*([A-Za-z0-9_-]*)[ \t]*\n?(.*?)```", re.DOTALL)
_STARTERS = (
    "SELECT|WITH|INSERT|UPDATE|DELETE|MERGE|REPLACE|UPSERT|CREATE|DROP|ALTER|TRUNCATE|GRANT|REVOKE|"
    "ATTACH|DETACH|PRAGMA|VACUUM|COPY|CALL|EXEC|EXECUTE|EXPLAIN|VALUES"
)
# upper-case statement keywords start SQL anywhere; lower-case ones only in
# recognisable statement shapes at a line start or after a colon
_START_UPPER = re.compile(rf"\b({_STARTERS})\b")
_START_LOWER = re.compile(
    r"(?:^|(?<=:))[ \t]*\(?("
    r"select\b[^\n]*?\bfrom\b|select\s+[\w'\"(*]|with\s+(?:recursive\s+)?\w+\s+as\s*\("
    r"|insert\s+into\b|update\s+\w+\s+set\b|delete\s+from\b|(?:drop|create|alter)\s+(?:table|view|index)\b)",
    re.IGNORECASE | re.MULTILINE,
)
_SQLISH = re.compile(rf"^\s*(\(|--|/\*|\)|{_STARTERS}|FROM|WHERE|JOIN|GROUP|ORDER|HAVING|LIMIT|UNION|AND|OR|ON|AS|,)", re.IGNORECASE)


def extract_sql(response_text: str) -> str:
    """Pull the SQL statement out of a model response.

    Code fences win; otherwise leading prose up to the first statement
    keyword is dropped, and trailing commentary after a blank line is cut.
    Raises :class:`ExtractionFailed` when nothing looks like SQL.
    """
    text = response_text or ""
    fence = _FENCE.search(text)
    if fence:
        text = fence.group(2)
    starts = [m.start(1) for m in _START_LOWER.finditer(text)] + [m.start(1) for m in _START_UPPER.finditer(text)]
    if not starts:
        raise ExtractionFailed("response contains no SQL statement")
    body = text[min(starts):]
    kept: list[str] = []
    blank = False
    for line in body.splitlines():
        if not line.strip():
            blank = True
            kept.append(line)
            continue
        if blank and not _SQLISH.match(line):
            break
        blank = False
        kept.append(line)
    sql = "\n".join(kept).strip()
    if not sql:
        raise ExtractionFailed("response contains no SQL statement")
    return sql


# --- providers --------------------------------------------------------------


@dataclass(frozen=True)
class ScriptedScenario:
    name: str
    steps: tuple[tuple[PromptRole, str], ...]
    metadata: dict = field(default_factory=dict, compare=False)
    path: str | None = None


_HEADER = re.compile(r"^#\s*([a-z_]+)\s*$")
_META = re.compile(r"^@([a-z_]+)\s*:\s*(.*)$")


def parse_scenario_text(text: str, name: str = "scenario", path: str | None = None) -> ScriptedScenario:
    """Parse the line-oriented scenario format.

    Before the first ``# role`` header only blank lines, ``;`` comments and
    ``@key: value`` metadata may appear. Each header is followed by the
    literal response block, up to the next header.
    """
    where = path or name
    meta: dict[str, str] = {}
    steps: list[tuple[PromptRole, list[str]]] = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        header = _HEADER.match(line)
        if header:
            try:
                role = PromptRole(header.group(1))
            except ValueError:
                raise ScenarioParseError(where, lineno, f"unknown role {header.group(1)!r}") from None
            steps.append((role, []))
            continue
        if steps:
            steps[-1][1].append(line)
            continue
        if not line.strip() or line.lstrip().startswith(";"):
            continue
        m = _META.match(line)
        if m is None:
            raise ScenarioParseError(where, lineno, "expected '@key: value' or a '# role' header")
        if m.group(1) in meta:
            raise ScenarioParseError(where, lineno, f"duplicate key {m.group(1)!r}")
        meta[m.group(1)] = m.group(2).strip()
    return ScriptedScenario(
        name=name,
        steps=tuple((role, "\n".join(lines).strip("\n")) for role, lines in steps),
        metadata=meta,
        path=path,
    )


def load_scenario(path) -> ScriptedScenario:
    path = Path(path)
    return parse_scenario_text(path.read_text(encoding="utf-8"), name=path.stem, path=str(path))


class ScriptedProvider:
    """Replays a scenario's responses strictly in order."""

    def __init__(self, scenario: ScriptedScenario, clock=None):
        self.scenario = scenario
        self.clock = clock or SystemClock()
        self.cursor = 0
        self.calls: list[PromptRole] = []
        self._lock = threading.Lock()

    @property
    def provider_id(self) -> str:
        return f"scripted:{self.scenario.name}"

    def complete(self, request: ProviderRequest) -> ProviderResponse:
        with self._lock:
            started = self.clock.monotonic()
            if self.cursor >= len(self.scenario.steps):
                raise ScenarioViolation(
                    f"{self.scenario.name}: {request.role.value} requested after the last step"
                )
            expected, text = self.scenario.steps[self.cursor]
            if expected is not request.role:
                raise ScenarioViolation(
                    f"{self.scenario.name}: step {self.cursor + 1} expects {expected.value}, "
                    f"got {request.role.value}"
                )
            self.cursor += 1
            self.calls.append(request.role)
            truncated = len(text) > request.max_output
            return ProviderResponse(
                text[: request.max_output], elapsed_ms(self.clock, started), self.provider_id, truncated
            )

    @property
    def remaining(self) -> int:
        return len(self.scenario.steps) - self.cursor


class LiveProvider:
    """OpenAI-style chat-completion client over HTTP.

    Transport failures (connection errors, timeouts, 429 and 5xx) are retried
    with exponential backoff; every try is appended to ``transport_log``.
    """

    def __init__(
        self,
        endpoint: str,
        model_name: str,
        *,
        api_key: str | None = None,
        timeout_s: float = 30.0,
        max_tries: int = 3,
        backoff_s: float = 0.25,
        sleep=time.sleep,
        transport=None,
        clock=None,
    ):
        if not endpoint or not model_name:
            raise PreconditionError("live provider needs an endpoint and a model name")
        self.endpoint = endpoint.rstrip("/")
        self.model_name = model_name
        self.api_key = api_key if api_key is not None else os.environ.get(API_KEY_ENV)
        self.timeout_s = timeout_s
        self.max_tries = max_tries
        self.backoff_s = backoff_s
        self.sleep = sleep
        self.transport = transport
        self.clock = clock or SystemClock()
        self.transport_log: list[dict] = []
        self._log_lock = threading.Lock()

    @property
    def provider_id(self) -> str:
        return f"live:{self.model_name}"

    def _log(self, entry: dict) -> None:
        with self._log_lock:
            self.transport_log.append(entry)

    def complete(self, request: ProviderRequest) -> ProviderResponse:
        import httpx

        url = f"{self.endpoint}/chat/completions"
        headers = {"Authorization": f"Bearer {self.api_key}"} if self.api_key else {}
        body = {
            "model": self.model_name,
            "temperature": request.temperature,
            "max_tokens": request.max_output,
            "messages": [{"role": "user", "content": request.rendered_prompt}],
        }
        started = self.clock.monotonic()
        last_error = "no attempt made"
        with httpx.Client(timeout=self.timeout_s, transport=self.transport) as client:
            for n in range(1, self.max_tries + 1):
                try:
                    resp = client.post(url, json=body, headers=headers)
                except httpx.TransportError as err:
                    last_error = f"{type(err).__name__}: {err}"
                    self._log({"try": n, "role": request.role.value, "error": last_error})
                else:
                    self._log({"try": n, "role": request.role.value, "status": resp.status_code})
                    if resp.status_code == 429 or resp.status_code >= 500:
                        last_error = f"HTTP {resp.status_code}"
                    elif resp.status_code >= 400:
                        raise ProviderUnavailable(f"provider rejected request: HTTP {resp.status_code}")
                    else:
                        try:
                            payload = resp.json()
                        except ValueError as err:
                            raise ProviderUnavailable(f"provider returned non-JSON body: {err}") from err
                        return self._parse(payload, request, started)
                if n < self.max_tries:
                    self.sleep(self.backoff_s * 2 ** (n - 1))
        raise ProviderUnavailable(f"provider unreachable after {self.max_tries} tries: {last_error}")

    def _parse(self, payload: dict, request: ProviderRequest, started: float) -> ProviderResponse:
        try:
            choice = payload["choices"][0]
            text = choice["message"]["content"] or ""
        except (KeyError, IndexError, TypeError) as err:
            raise ProviderUnavailable(f"malformed provider response: {err}") from err
        truncated = choice.get("finish_reason") == "length" or len(text) > request.max_output
        return ProviderResponse(
            text[: request.max_output], elapsed_ms(self.clock, started), self.provider_id, truncated
        )
