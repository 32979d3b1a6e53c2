"""Scenario replay harness.

A scenario file pairs scripted model responses with expectations in its
``@key: value`` header:

    @question: How many hip-hop tracks are there in the database?
    @fixture: chinook
    @now: 2025-04-17T09:30:00Z          (optional, defaults to the fixture reference)
    @deny: chinook_customer.email       (optional, comma separated)
    @expect_status: answered
    @expect_attempts: 2
    @expect_flags: 1:exact_match_zero_rows   (attempt:flag[,flag]; ';' between attempts)
    @expect_refusal: 1:multi_statement
    @expect_hint_contains: 1:1609.34
    @oracle: hip_hop_tracks
"""
from __future__ import annotations

import tempfile
from dataclasses import dataclass, field
from pathlib import Path

from thor import fixtures
from thor.audit import AuditStore, reconstruct_counts
from thor.clock import FakeClock
from thor.domain import GuardrailVerdict, QueryAnswer
from thor.engine import DatasourceBinding, Engine
from thor.errors import ScenarioParseError
from thor.executor import DatasourceConfig, SqliteExecutor
from thor.fixtures.oracles import ORACLES, compare
from thor.guardrail import make_candidate
from thor.interpreter import extract_key_values, unsupported_numbers
from thor.llm import GENERATION_ROLES, ScriptedProvider, ScriptedScenario, load_scenario
from thor.schema import introspect

KNOWN_KEYS = {
    "question", "fixture", "now", "deny", "expect_status", "expect_attempts", "expect_flags",
    "expect_refusal", "expect_hint_contains", "oracle", "verbosity", "description",
}


def unchecked(sql_text, policy, catalog, attempt_number=1):
    """Guardrail stand-in that allows everything. Replay negative control only."""
    candidate, _ = make_candidate(sql_text, attempt_number)
    return candidate, GuardrailVerdict("allowed", None, ("guardrail disabled",), candidate.referenced_columns)


@dataclass
class Check:
    label: str
    expected: str
    actual: str
    ok: bool


@dataclass
class ScenarioResult:
    name: str
    checks: list[Check] = field(default_factory=list)
    answer: QueryAnswer | None = None
    error: str | None = None
    provider_roles: list[str] = field(default_factory=list)
    executor_calls: int = 0
    journal: Path | None = None

    @property
    def passed(self) -> bool:
        return self.error is None and all(c.ok for c in self.checks)

    def add(self, label, expected, actual, ok=None) -> None:
        self.checks.append(Check(label, str(expected), str(actual), expected == actual if ok is None else ok))


def _per_attempt(spec: str, path: str, key: str) -> dict[int, str]:
    out = {}
    for part in spec.split(";"):
        part = part.strip()
        if not part:
            continue
        n, sep, rest = part.partition(":")
        if not sep or not n.strip().isdigit():
            raise ScenarioParseError(path, 0, f"@{key} entries look like '<attempt>:<value>', got {part!r}")
        out[int(n)] = rest.strip()
    return out


def validate_metadata(scenario: ScriptedScenario) -> None:
    where = scenario.path or scenario.name
    unknown = set(scenario.metadata) - KNOWN_KEYS
    if unknown:
        raise ScenarioParseError(where, 0, f"unknown metadata keys: {', '.join(sorted(unknown))}")
    for key in ("question", "fixture", "expect_status"):
        if key not in scenario.metadata:
            raise ScenarioParseError(where, 0, f"missing @{key}")
    if scenario.metadata["fixture"] not in fixtures.FIXTURES:
        raise ScenarioParseError(where, 0, f"unknown fixture {scenario.metadata['fixture']!r}")
    oracle = scenario.metadata.get("oracle")
    if oracle and oracle not in ORACLES:
        raise ScenarioParseError(where, 0, f"unknown oracle {oracle!r}")
    if not scenario.steps:
        raise ScenarioParseError(where, 0, "scenario has no steps")


def run_scenario(
    scenario: ScriptedScenario,
    workdir: str | Path,
    *,
    unsafe_disable_guardrail: bool = False,
    journal: str | Path | None = None,
) -> ScenarioResult:
    """Build the scenario's fixture, run its question once, and check expectations."""
    validate_metadata(scenario)
    meta = scenario.metadata
    workdir = Path(workdir)
    result = ScenarioResult(scenario.name)
    clock = FakeClock(meta.get("now", fixtures.REFERENCE_NOW))
    db = fixtures.build_fixture(meta["fixture"], workdir / f"{scenario.name}-{meta['fixture']}.db")
    executor = SqliteExecutor(DatasourceConfig(str(db)), clock)
    executor.probe_readonly()
    deny = [c.strip() for c in meta.get("deny", "").split(",") if c.strip()]
    catalog = introspect(executor, meta["fixture"], fixtures.annotations(meta["fixture"]), deny)
    journal = Path(journal) if journal else workdir / f"{scenario.name}.audit.jsonl"
    if journal.exists():
        journal.unlink()
    store = AuditStore(journal, clock)
    result.journal = journal
    provider = ScriptedProvider(scenario, clock)
    engine = Engine(
        {catalog.datasource_id: DatasourceBinding(catalog.datasource_id, executor, catalog)},
        lambda _q: provider,
        audit=store,
        clock=clock,
    )
    if unsafe_disable_guardrail:
        import thor.orchestrator as orch

        def ask(text, datasource_id=None, session_id=None, verbosity="concise"):
            q = engine.question(text, datasource_id, session_id)
            return orch.run_pipeline(
                q, catalog, provider, executor, engine.policy, constants=engine.constants,
                audit=store, clock=clock, verbosity=verbosity, guardrail=unchecked,
            )
    else:
        ask = engine.ask

    calls_before = executor.calls
    try:
        answer = ask(meta["question"], session_id=scenario.name, verbosity=meta.get("verbosity", "concise"))
    except Exception as err:  # report, don't crash the whole replay
        result.error = f"{type(err).__name__}: {err}"
        result.provider_roles = [r.value for r in provider.calls]
        result.executor_calls = executor.calls - calls_before
        return result
    result.answer = answer
    result.provider_roles = [r.value for r in provider.calls]
    result.executor_calls = executor.calls - calls_before
    _check(result, scenario, answer, db, clock, store)
    return result


def _check(result: ScenarioResult, scenario: ScriptedScenario, answer: QueryAnswer, db, clock, store) -> None:
    meta = scenario.metadata
    where = scenario.path or scenario.name
    result.add("final_status", meta["expect_status"], answer.final_status.value)
    if "expect_attempts" in meta:
        result.add("attempts", int(meta["expect_attempts"]), len(answer.attempts))
    generations = sum(1 for r in result.provider_roles if r in {g.value for g in GENERATION_ROLES})
    result.add("generation calls = attempts", len(answer.attempts), generations)
    result.add("script fully consumed", 0, len(scenario.steps) - len(result.provider_roles))

    for n, flags in _per_attempt(meta.get("expect_flags", ""), where, "expect_flags").items():
        trace = answer.attempts[n - 1] if n <= len(answer.attempts) else None
        got = sorted(f.value for f in trace.rating.flags) if trace and trace.rating else []
        want = sorted(f.strip() for f in flags.split(",") if f.strip())
        result.add(f"attempt {n} flags include", ",".join(want), ",".join(got), set(want) <= set(got))
    for n, reason in _per_attempt(meta.get("expect_refusal", ""), where, "expect_refusal").items():
        trace = answer.attempts[n - 1] if n <= len(answer.attempts) else None
        got = trace.guardrail_verdict.refusal_reason.value if trace and trace.guardrail_verdict.refusal_reason else "allowed"
        result.add(f"attempt {n} refusal", reason, got)
    for n, text in _per_attempt(meta.get("expect_hint_contains", ""), where, "expect_hint_contains").items():
        trace = answer.attempts[n - 1] if n <= len(answer.attempts) else None
        hint = (trace.correction_hint or "") if trace else ""
        result.add(f"attempt {n} hint contains", text, hint, text in hint)

    # every execution happened behind an allowed verdict
    unguarded = sum(1 for t in answer.attempts if t.outcome is not None and not t.guardrail_verdict.allowed)
    result.add("executions without allowed verdict", 0, unguarded)

    if meta.get("oracle"):
        oracle = ORACLES[meta["oracle"]](db, clock.now())
        ok, why = compare(oracle, answer.rows)
        result.add(f"oracle {meta['oracle']}", "match", why, ok)

    if answer.final_status.value == "answered" and answer.rows:
        best = answer.attempts[-1].outcome
        bad = unsupported_numbers(answer.narrative, best, extract_key_values(best))
        result.add("narrative numbers supported", "[]", str(bad), not bad)

    records = store.query()
    session = [r for r in records if r.session_id == scenario.name]
    counts = reconstruct_counts(session)
    result.add("audit generation calls", generations, counts.generation)
    result.add("audit provider calls", len(result.provider_roles), counts.provider)
    result.add("audit executor calls", result.executor_calls, counts.execution)
    ids = [r.record_id for r in records]
    result.add("audit ids contiguous", list(range(1, len(ids) + 1)), ids)
    result.add("audit attempt records", len(answer.attempts), sum(1 for r in session if r.kind == "attempt"))


def load_directory(path: str | Path) -> list[ScriptedScenario]:
    path = Path(path)
    if not path.is_dir():
        raise FileNotFoundError(f"scenario directory not found: {path}")
    return [load_scenario(p) for p in sorted(path.glob("*.scn"))]


def replay_directory(path: str | Path, *, unsafe_disable_guardrail: bool = False, workdir=None) -> list[ScenarioResult]:
    scenarios = load_directory(path)
    with tempfile.TemporaryDirectory(prefix="thor-replay-") as tmp:
        base = Path(workdir or tmp)
        return [run_scenario(s, base, unsafe_disable_guardrail=unsafe_disable_guardrail) for s in scenarios]


def builtin_scenarios() -> Path:
    from importlib import resources

    return Path(str(resources.files("thor").joinpath("scenarios")))
