"""Supervisor and self-correction loop.

One pipeline run walks routing → generating → validating → executing →
rating → interpreting → done, looping back to generating (and spending an
attempt) whenever a candidate is refused for a fixable reason, fails, comes
back empty, or rates poorly. Compliance refusals end the run at once.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from datetime import datetime

from thor.clock import SystemClock, elapsed_ms, format_instant
from thor.domain import (
    AttemptTrace,
    Classification,
    EngineConstants,
    ExecutionOutcome,
    FinalStatus,
    Flag,
    GuardrailVerdict,
    OutcomeStatus,
    QueryAnswer,
    Question,
    RatingReport,
    RefusalReason,
    SchemaCatalog,
    SqlCandidate,
    Verdict,
)
from thor.errors import AuditFailure, DatasourceUnavailable, ExtractionFailed, PreconditionError, ProviderUnavailable
from thor.guardrail import GuardrailPolicy, check
from thor.interpreter import extract_key_values, narrate, parse_timestamp
from thor.llm import PromptRole, ProviderRequest, extract_sql, parse_rating, render_prompt
from thor.schema import SAMPLEABLE, rank_relevance, sample_values, tokens
from thor.sqlfacts import bound_columns, converted_columns, matched_nothing, text_predicates

# --- routing ----------------------------------------------------------------

_INTERROGATIVES = {"what", "which", "how", "who", "when", "where", "list", "show", "give", "find", "compare", "tell"}
_DATA_VOCAB = {
    "total", "sum", "average", "avg", "mean", "count", "number", "many", "much", "most", "least",
    "highest", "lowest", "top", "bottom", "max", "maximum", "min", "minimum", "per", "rate",
    "percentage", "percent", "share", "ratio", "median", "trend", "growth", "revenue", "sales",
    "day", "daily", "week", "weekly", "month", "monthly", "quarter", "year", "yearly", "annual",
    "last", "past", "since", "between", "before", "after", "today", "yesterday", "ytd",
}
_WORD = re.compile(r"[A-Za-z]+|\d+")


@dataclass(frozen=True)
class RouteDecision:
    lane: str  # "t2s_lane" | "out_of_scope"
    explanation: str

    @property
    def in_scope(self) -> bool:
        return self.lane == "t2s_lane"


def route(question: Question, catalog: SchemaCatalog | None = None) -> RouteDecision:
    """Heuristic intent detection; never guesses a non-data question into SQL."""
    words = [w.lower() for w in _WORD.findall(question.text)]
    if any(w.isdigit() for w in words):
        return RouteDecision("t2s_lane", "question contains a number")
    vocab = sorted(set(words) & _DATA_VOCAB)
    if vocab:
        return RouteDecision("t2s_lane", f"aggregate or date vocabulary: {', '.join(vocab)}")
    asks = set(words) & _INTERROGATIVES
    if asks and catalog is not None:
        schema_terms = set()
        for t in catalog.tables:
            schema_terms |= tokens(t.name) | tokens(t.description)
            for c in t.columns:
                schema_terms |= tokens(c.name)
        overlap = sorted(tokens(question.text) & schema_terms)
        if overlap:
            return RouteDecision("t2s_lane", f"question asks about schema terms: {', '.join(overlap)}")
    return RouteDecision("out_of_scope", "no data-query intent detected (no schema terms, aggregates, numbers or dates)")


# --- sanity checks ----------------------------------------------------------

_NUMBER_WORDS = (
    "one|two|three|four|five|six|seven|eight|nine|ten|eleven|twelve|a few|few|several|couple of|a couple of"
)
_PAST_WINDOW = re.compile(
    rf"\b(?:last|past|previous|prior|recent)\s+(?:(?:\d+|{_NUMBER_WORDS})\s+)?(?:day|week|month|quarter|year)s?\b",
    re.IGNORECASE,
)
_AGGREGATE = re.compile(r"\b(total|count|how many|sum|overall|number of|altogether)\b", re.IGNORECASE)

# unit name -> (dimension, canonical unit)
_UNITS = {
    "meter": ("length", "meter"), "meters": ("length", "meter"), "metre": ("length", "meter"),
    "metres": ("length", "meter"), "m": ("length", "meter"),
    "kilometer": ("length", "kilometer"), "kilometers": ("length", "kilometer"), "kilometre": ("length", "kilometer"),
    "kilometres": ("length", "kilometer"), "km": ("length", "kilometer"), "kms": ("length", "kilometer"),
    "mile": ("length", "mile"), "miles": ("length", "mile"),
    "foot": ("length", "foot"), "feet": ("length", "foot"), "ft": ("length", "foot"),
    "second": ("time", "second"), "seconds": ("time", "second"), "secs": ("time", "second"), "s": ("time", "second"),
    "minute": ("time", "minute"), "minutes": ("time", "minute"), "mins": ("time", "minute"),
    "hour": ("time", "hour"), "hours": ("time", "hour"), "hrs": ("time", "hour"),
}
# (stored unit, requested unit) -> (factor, phrase)
_FACTORS = {
    ("meter", "kilometer"): (1000.0, "meters per kilometer"),
    ("meter", "foot"): (0.3048, "meters per foot"),
    ("kilometer", "mile"): (1.60934, "kilometers per mile"),
    ("foot", "mile"): (5280.0, "feet per mile"),
    ("second", "minute"): (60.0, "seconds per minute"),
    ("second", "hour"): (3600.0, "seconds per hour"),
    ("minute", "hour"): (60.0, "minutes per hour"),
}


def conversion_factor(stored: str, requested: str, constants: EngineConstants) -> tuple[float, str] | None:
    if (stored, requested) == ("meter", "mile"):
        return constants.meters_per_mile, "meters per mile"
    if (stored, requested) in _FACTORS:
        return _FACTORS[(stored, requested)]
    if (requested, stored) in _FACTORS:
        return _FACTORS[(requested, stored)]
    return None


def _question_units(text: str) -> dict[str, list[str]]:
    # only whole words; single letters are too noisy to read from prose
    found: dict[str, list[str]] = {}
    for w in _WORD.findall(text.lower()):
        if len(w) > 1 and w in _UNITS:
            dim, unit = _UNITS[w]
            if unit not in found.setdefault(dim, []):
                found[dim].append(unit)
    return found


@dataclass(frozen=True)
class SanityCheckResult:
    flags: frozenset[Flag] = frozenset()
    evidence: dict = field(default_factory=dict, compare=False)
    conversions: tuple[tuple[str, float, str], ...] = ()

    def __post_init__(self):
        missing = [f for f in self.flags if not self.evidence.get(f)]
        if missing:
            raise PreconditionError(f"flags without evidence: {missing}")


def sanity_check(
    question: Question,
    candidate: SqlCandidate,
    outcome: ExecutionOutcome,
    catalog: SchemaCatalog,
    now: datetime | None = None,
    constants: EngineConstants | None = None,
) -> SanityCheckResult:
    if outcome.status is OutcomeStatus.ERROR:
        raise PreconditionError("sanity checks need an executed outcome")
    constants = constants or EngineConstants()
    now = (now or question.asked_at).replace(tzinfo=None)
    flags: set[Flag] = set()
    evidence: dict[Flag, str] = {}
    conversions = []

    if _PAST_WINDOW.search(question.text) and outcome.rows:
        future = []
        for row in outcome.rows:
            for name, value in zip(outcome.column_names, row):
                when = parse_timestamp(value)
                if when is not None and when > now:
                    future.append(f"{name}={value}")
        if future:
            flags.add(Flag.FUTURE_DATES_PRESENT)
            evidence[Flag.FUTURE_DATES_PRESENT] = (
                f"{len(future)} value(s) after {now:%Y-%m-%d %H:%M:%S}, first {future[0]}"
            )

    wanted = _question_units(question.text)
    if wanted:
        converted = converted_columns(candidate.sql_text, catalog)
        problems = []
        for qualified in sorted(bound_columns(candidate.sql_text, catalog)):
            table, _, column = qualified.partition(".")
            hint = catalog.column(table, column).unit_hint
            if not hint or hint.lower() not in _UNITS:
                continue
            dim, stored = _UNITS[hint.lower()]
            # a question may name the stored unit too ("distance is in meters")
            requested = next((u for u in wanted.get(dim, ()) if u != stored), None)
            if requested is None or qualified in converted:
                continue
            factor = conversion_factor(stored, requested, constants)
            if factor is None:
                continue
            conversions.append((qualified, factor[0], factor[1]))
            problems.append(f"{qualified} is stored in {hint} but the question asks for {requested}s")
        if problems:
            flags.add(Flag.UNIT_MISMATCH)
            evidence[Flag.UNIT_MISMATCH] = "; ".join(problems)

    if matched_nothing(candidate.sql_text, outcome):
        exact = [
            p for p in text_predicates(candidate.sql_text, catalog)
            if p.op in ("eq", "in") or not p.has_wildcard
        ]
        if exact:
            flags.add(Flag.EXACT_MATCH_ZERO_ROWS)
            evidence[Flag.EXACT_MATCH_ZERO_ROWS] = "; ".join(
                f"{p.table}.{p.column} {p.op} '{p.literal}'" for p in exact
            )

    if outcome.status is OutcomeStatus.TRUNCATED and _AGGREGATE.search(question.text):
        flags.add(Flag.SUSPICIOUS_AGGREGATE_TRUNCATION)
        evidence[Flag.SUSPICIOUS_AGGREGATE_TRUNCATION] = (
            f"question asks for an aggregate but the result hit the {outcome.row_limit_applied}-row limit"
        )
    return SanityCheckResult(frozenset(flags), evidence, tuple(conversions))


# --- correction hints -------------------------------------------------------


def predicate_columns(candidate: SqlCandidate, catalog: SchemaCatalog) -> list[tuple[str, str]]:
    seen: dict[tuple[str, str], None] = {}
    for p in text_predicates(candidate.sql_text, catalog):
        seen[(p.table, p.column)] = None
    return list(seen)


def build_correction_hint(
    trace: AttemptTrace,
    catalog: SchemaCatalog,
    sanity: SanityCheckResult | None = None,
    constants: EngineConstants | None = None,
) -> str:
    """Deterministic guidance for the next attempt, derived from ``trace`` alone."""
    constants = constants or EngineConstants()
    verdict = trace.guardrail_verdict
    if not verdict.allowed:
        if "no SQL in model response" in verdict.detail:
            return "The previous response contained no SQL. Reply with exactly one read-only SELECT statement."
        return (
            f"The previous statement was refused as {verdict.refusal_reason.value}. Only a single read-only SELECT "
            "statement is permitted: no writes, DDL, locking clauses or multiple statements."
        )
    outcome = trace.outcome
    if outcome is None:
        raise PreconditionError("hint needs an outcome or a refusal")
    if outcome.status is OutcomeStatus.ERROR:
        return f"Execution failed: {outcome.error_message}. Fix the SQL."

    flags = trace.rating.flags if trace.rating else frozenset()
    parts: list[str] = []
    if matched_nothing(trace.candidate.sql_text, outcome):
        cols = predicate_columns(trace.candidate, catalog)
        for table, column in cols:
            values = catalog.column(table, column).sampled_values
            if values is None:
                parts.append(f"Actual values of {table}.{column} are unavailable.")
            elif values:
                parts.append(f"Actual values of {table}.{column}: {', '.join(str(v) for v in values)}.")
            else:
                parts.append(f"{table}.{column} holds no non-null values.")
        if Flag.EXACT_MATCH_ZERO_ROWS in flags:
            parts.append("Prefer pattern matching (case-insensitive, with wildcards) over exact equality.")
        elif cols:
            parts.append("The filters matched no rows; use the actual values above.")
        else:
            parts.append("The query returned no rows; check joins and filters.")
    if Flag.FUTURE_DATES_PRESENT in flags:
        parts.append("Add a strict upper date bound of now; the result contained future timestamps.")
    if Flag.UNIT_MISMATCH in flags:
        convs = sanity.conversions if sanity is not None else ()
        if not convs:
            # recompute from the catalog so the hint depends only on the trace
            for qualified in sorted(bound_columns(trace.candidate.sql_text, catalog)):
                table, _, column = qualified.partition(".")
                hint = catalog.column(table, column).unit_hint
                if hint and hint.lower() == "meters":
                    convs = ((qualified, constants.meters_per_mile, "meters per mile"),)
        for qualified, factor, phrase in convs:
            parts.append(f"Apply conversion factor {factor:g} {phrase} to {qualified}.")
    if Flag.SUSPICIOUS_AGGREGATE_TRUNCATION in flags:
        parts.append("The result hit the row limit; aggregate in SQL rather than returning raw rows.")
    if Flag.LOW_LLM_SCORE in flags and trace.rating.rationale:
        parts.append(f"The rating judged the result weak: {trace.rating.rationale}")
    return " ".join(parts) if parts else "Regenerate the SQL."


# --- rating -----------------------------------------------------------------


@dataclass(frozen=True)
class RatingCall:
    report: RatingReport
    provider_called: bool


def rate(
    question: Question,
    candidate: SqlCandidate,
    outcome: ExecutionOutcome,
    sanity: SanityCheckResult,
    provider,
    history=(),
    constants: EngineConstants | None = None,
    schema_text: str = "",
) -> RatingCall:
    """Combine hard flags with the model's score.

    Only results that carry rows are shown to the model; errors and empty
    results regenerate without a rating call.
    """
    constants = constants or EngineConstants()
    flags = set(sanity.flags)
    if outcome.status is OutcomeStatus.ERROR:
        flags.add(Flag.EXECUTION_ERROR)
    elif outcome.status is OutcomeStatus.EMPTY:
        flags.add(Flag.EMPTY_RESULT)
    if not outcome.has_rows:
        rationale = "execution error" if outcome.status is OutcomeStatus.ERROR else "empty result"
        return RatingCall(RatingReport.decide(0.0, flags, constants.accept_threshold, rationale), False)
    prompt = render_prompt(PromptRole.RATE_RESULT, question, schema_text, history, outcome=outcome)
    response = provider.complete(ProviderRequest(PromptRole.RATE_RESULT, prompt))
    score, rationale = parse_rating(response.text)
    return RatingCall(RatingReport.decide(score, flags, constants.accept_threshold, rationale), True)


# --- pipeline ---------------------------------------------------------------

PHASES = ("routing", "generating", "validating", "executing", "rating", "interpreting", "done")
_EDGES = {
    "routing": {"generating", "done"},
    "generating": {"validating"},
    "validating": {"executing", "generating", "done"},
    "executing": {"rating"},
    "rating": {"interpreting", "generating", "done"},
    "interpreting": {"done"},
    "done": set(),
}


class PipelineState:
    """Phase tracker that refuses transitions outside the fixed graph."""

    def __init__(self, clock):
        self.clock = clock
        self.phase = "routing"
        self.attempt_number = 0
        self.traces: list[AttemptTrace] = []
        self.terminal: FinalStatus | None = None
        self.events: list[dict] = []

    def emit(self, event: str, **detail) -> None:
        self.events.append(
            {"seq": len(self.events) + 1, "phase": self.phase, "attempt": self.attempt_number, "event": event, **detail}
        )

    def move(self, phase: str, **detail) -> None:
        if phase not in _EDGES[self.phase]:
            raise PreconditionError(f"illegal transition {self.phase} -> {phase}")
        if phase == "generating":
            self.attempt_number += 1
        self.phase = phase
        self.emit("enter", **detail)

    def finish(self, status: FinalStatus) -> None:
        if self.terminal is not None:
            raise PreconditionError("terminal status is write-once")
        self.move("done", final_status=status.value)
        self.terminal = status


class _CountingExecutor:
    def __init__(self, inner):
        self.inner = inner
        self.calls = 0

    def execute(self, sql, now=None):
        self.calls += 1
        return self.inner.execute(sql, now=now)


class _Recorder:
    """Wraps the provider so every call is attributed to the current audit record."""

    def __init__(self, provider, state: PipelineState):
        self.provider = provider
        self.state = state
        self.pending: list[str] = []
        self.total: list[str] = []

    def complete(self, request: ProviderRequest):
        self.pending.append(request.role.value)
        self.total.append(request.role.value)
        self.state.emit("provider_call", role=request.role.value)
        return self.provider.complete(request)

    def take(self) -> tuple[str, ...]:
        out, self.pending = tuple(self.pending), []
        return out


@dataclass
class PipelineContext:
    question: Question
    catalog: SchemaCatalog
    provider: object
    executor: object
    policy: GuardrailPolicy
    constants: EngineConstants
    audit: object | None
    clock: object
    verbosity: str = "concise"


def _no_sql_candidate(text: str, attempt: int) -> tuple[SqlCandidate, GuardrailVerdict]:
    candidate = SqlCandidate(text, attempt, Classification.UNPARSEABLE)
    return candidate, GuardrailVerdict("refused", RefusalReason.UNPARSEABLE, ("no SQL in model response",))


def _best_attempt(traces) -> int:
    best, best_score = 1, -1.0
    for t in traces:
        score = t.rating.score if t.rating else -1.0
        if score > best_score:
            best, best_score = t.candidate.attempt_number, score
    return best


def run_pipeline(
    question: Question,
    catalog: SchemaCatalog,
    provider,
    executor,
    policy: GuardrailPolicy | None = None,
    *,
    constants: EngineConstants | None = None,
    audit=None,
    clock=None,
    verbosity: str = "concise",
    guardrail=check,
) -> QueryAnswer:
    """Run the bounded generate → validate → execute → rate loop for one question.

    Raises :class:`DatasourceUnavailable` or :class:`ProviderUnavailable` for
    infrastructure failures and :class:`AuditFailure` when the journal cannot
    be written; each is recorded as an aborted terminal record when possible.
    """
    policy = policy or GuardrailPolicy()
    constants = constants or EngineConstants()
    clock = clock or SystemClock()
    started = clock.monotonic()
    state = PipelineState(clock)
    llm = _Recorder(provider, state)
    ex = _CountingExecutor(executor)
    introspected: set[tuple[str, str]] = set()
    exec_marker = 0

    def take_exec() -> int:
        nonlocal exec_marker
        n, exec_marker = ex.calls - exec_marker, ex.calls
        return n

    def log(kind: str, calls=None, **fields):
        provider_calls, executor_calls = calls if calls is not None else (llm.take(), take_exec())
        if audit is None:
            return
        audit.append(
            kind=kind,
            session_id=question.session_id,
            question_text=question.text,
            datasource_id=question.datasource_id,
            provider_calls=provider_calls,
            executor_calls=executor_calls,
            **fields,
        )

    def answer(status: FinalStatus, narrative: str, outcome=None, key_values=(), best=None) -> QueryAnswer:
        state.finish(status)
        log(
            "terminal",
            attempt_number=state.attempt_number,
            final_status=status.value,
            duration_ms=elapsed_ms(clock, started),
            detail=f"attempts={len(state.traces)} best={best}" if best else f"attempts={len(state.traces)}",
        )
        rows = outcome.rows if outcome is not None and outcome.rows else ()
        names = outcome.column_names if outcome is not None else ()
        return QueryAnswer(
            final_status=status,
            rows=rows,
            column_names=names,
            narrative=narrative,
            key_values=tuple(key_values),
            attempts=tuple(state.traces),
            best_attempt=best,
            transcript=tuple(state.events),
        )

    if audit is not None:
        audit.check_writable()
    state.emit("start", question=question.text, asked_at=format_instant(question.asked_at))
    try:
        while True:
            attempt_started = clock.monotonic()
            state.move("generating")
            attempt = state.attempt_number
            ranking = rank_relevance(question, catalog, constants.prompt_schema_budget)
            if attempt == 1:
                role = PromptRole.GENERATE_SQL
                prompt = render_prompt(role, question, ranking.rendered_schema_text)
            else:
                role = PromptRole.CORRECT_SQL
                prompt = render_prompt(role, question, ranking.rendered_schema_text, state.traces)
            response = llm.complete(ProviderRequest(role, prompt))

            state.move("validating")
            try:
                sql = extract_sql(response.text)
            except ExtractionFailed:
                candidate, verdict = _no_sql_candidate(response.text, attempt)
            else:
                candidate, verdict = guardrail(sql, policy, catalog, attempt)
            state.emit("verdict", decision=verdict.describe())

            if not verdict.allowed:
                compliance = verdict.refusal_reason is RefusalReason.UNAUTHORIZED_COLUMN
                last = compliance or attempt >= constants.max_attempts
                trace = AttemptTrace(candidate, verdict)
                hint = None if last else build_correction_hint(trace, catalog, constants=constants)
                trace = AttemptTrace(candidate, verdict, correction_hint=hint)
                state.traces.append(trace)
                log(
                    "attempt",
                    attempt_number=attempt,
                    sql_text=candidate.sql_text,
                    guardrail_decision="refused",
                    guardrail_reason=verdict.describe(),
                    duration_ms=elapsed_ms(clock, attempt_started),
                )
                if compliance:
                    return answer(
                        FinalStatus.REFUSED,
                        f"Refused: the question needs columns that are not authorized ({', '.join(verdict.detail)}).",
                    )
                if last:
                    return _exhausted(state, answer)
                continue

            state.move("executing")
            now = clock.now()
            outcome = ex.execute(candidate.sql_text, now=now)
            state.emit("executed", status=outcome.status.value)

            state.move("rating")
            legit_empty = False
            if outcome.status is OutcomeStatus.ERROR:
                sanity = SanityCheckResult()
            else:
                sanity = sanity_check(question, candidate, outcome, catalog, now, constants)
            nothing = outcome.status is not OutcomeStatus.ERROR and matched_nothing(candidate.sql_text, outcome)
            if nothing:
                # a repeat miss on columns whose real values were already shown is a real answer
                cols = predicate_columns(candidate, catalog)
                legit_empty = bool(cols) and all(c in introspected for c in cols)
            if legit_empty:
                report = RatingReport(1.0, Verdict.ACCEPT, frozenset(), "no matching rows after value introspection")
            else:
                report = rate(
                    question, candidate, outcome, sanity, llm, state.traces, constants,
                    ranking.rendered_schema_text,
                ).report
            state.emit("rated", verdict=report.verdict.value, flags=sorted(f.value for f in report.flags))

            if report.verdict is Verdict.ACCEPT:
                state.traces.append(AttemptTrace(candidate, verdict, outcome, report))
                log(
                    "attempt",
                    attempt_number=attempt,
                    sql_text=candidate.sql_text,
                    guardrail_decision="allowed",
                    outcome_status=outcome.status.value,
                    rating_score=report.score,
                    duration_ms=elapsed_ms(clock, attempt_started),
                )
                state.move("interpreting")
                if outcome.status is OutcomeStatus.EMPTY:
                    return answer(FinalStatus.ANSWERED, "Query returned no matching rows.", outcome, (("total_rows", 0),))
                extract = extract_key_values(outcome)
                narration = narrate(question, extract, outcome, llm, verbosity)
                state.emit("narrated", fallback=narration.used_fallback, reason=narration.reason)
                return answer(FinalStatus.ANSWERED, narration.text, outcome, extract.pairs())

            last = attempt >= constants.max_attempts
            hint = None
            # book this attempt's own calls before introspection issues more
            calls = (llm.take(), take_exec())
            if not last:
                if nothing:
                    catalog = _introspect_predicates(
                        candidate, catalog, ex, policy, constants, introspected, state, log, question
                    )
                hint = build_correction_hint(
                    AttemptTrace(candidate, verdict, outcome, report), catalog, sanity, constants
                )
            state.traces.append(AttemptTrace(candidate, verdict, outcome, report, hint))
            log(
                "attempt",
                calls,
                attempt_number=attempt,
                sql_text=candidate.sql_text,
                guardrail_decision="allowed",
                outcome_status=outcome.status.value,
                rating_score=report.score,
                flags=tuple(sorted(f.value for f in report.flags)),
                duration_ms=elapsed_ms(clock, attempt_started),
                detail=outcome.error_message or "",
            )
            if last:
                return _exhausted(state, answer)
    except (DatasourceUnavailable, ProviderUnavailable) as err:
        if state.terminal is None and audit is not None:
            try:
                log(
                    "terminal",
                    attempt_number=state.attempt_number,
                    final_status="aborted",
                    duration_ms=elapsed_ms(clock, started),
                    detail=f"{type(err).__name__}: {err}",
                )
            except AuditFailure:
                pass
        raise


def _introspect_predicates(candidate, catalog, ex, policy, constants, introspected, state, log, question):
    """Sample each text predicate column once per pipeline.

    Each sample is logged as its own introspection record, ahead of the
    attempt record that triggered it.
    """
    for table, column in predicate_columns(candidate, catalog):
        key = (table, column)
        if key in introspected:
            continue
        introspected.add(key)
        meta = catalog.column(table, column)
        if meta is None or meta.data_kind not in SAMPLEABLE:
            continue
        sample = sample_values(catalog, table, column, ex, policy, constants.sample_value_limit)
        catalog = sample.catalog
        state.emit("introspected", column=f"{table}.{column}", values=len(sample.values), decision=sample.verdict.describe())
        log(
            "introspection",
            attempt_number=state.attempt_number,
            sql_text=sample.sql_text,
            guardrail_decision=sample.verdict.decision,
            guardrail_reason=None if sample.verdict.allowed else sample.verdict.describe(),
            outcome_status=sample.outcome.status.value if sample.outcome else None,
            detail=f"{table}.{column}: {len(sample.values)} values",
        )
    return catalog


def _exhausted(state: PipelineState, answer) -> QueryAnswer:
    best = _best_attempt(state.traces)
    trace = state.traces[best - 1]
    outcome = trace.outcome if trace.outcome is not None and trace.outcome.has_rows else None
    return answer(
        FinalStatus.EXHAUSTED,
        "No attempt met the acceptance bar; showing the best-rated attempt.",
        outcome,
        (),
        best,
    )
