"""Acceptance criteria, one test each.

Every test records a PASS/FAIL line that the terminal summary prints under
"acceptance criteria". Oracles here are computed directly from fixture rows
or from first principles, not through the engine.
"""
from __future__ import annotations

import hashlib
import itertools
import random
import re
import sqlite3
import time
from collections import Counter
from datetime import datetime

from conftest import ACCEPTANCE
from fastapi.testclient import TestClient

from reference_sql import THOR_LISTINGS
from thor import fixtures
from thor.audit import AuditStore, reconstruct_counts
from thor.clock import FakeClock, parse_instant
from thor.config import build_engine, parse_config
from thor.dialect import install_functions, parse_statements, to_sqlite
from thor.domain import Classification, ColumnMeta, DataKind, ForeignKey, SchemaCatalog, TableMeta
from thor.guardrail import GuardrailPolicy, check
from thor.llm import GENERATION_ROLES, load_scenario
from thor.replay import builtin_scenarios, run_scenario
from thor.schema import STOPWORDS, rank_relevance, render_tables
from thor.service import create_app

SCENARIOS = builtin_scenarios()
CORPUS = sorted(SCENARIOS.glob("*.scn"))
NOW = parse_instant(fixtures.REFERENCE_NOW)
NOW_TEXT = "2025-04-17 09:30:00"


def record(n: int, title: str, ok: bool, detail: str) -> None:
    ACCEPTANCE[n] = f"{'PASS' if ok else 'FAIL'}  [{n:2d}] {title}: {detail}"
    assert ok, detail


def scenario(name: str, tmp_path):
    return run_scenario(load_scenario(SCENARIOS / f"{name}.scn"), tmp_path)


def fixture_rows(db, sql, *params):
    conn = sqlite3.connect(f"file:{db}?mode=ro", uri=True)
    try:
        return conn.execute(sql, params).fetchall()
    finally:
        conn.close()


# --- 1. guardrail soundness ---------------------------------------------------


def _combined_fixture(tmp_path):
    """One database holding both fixtures, so every payload has a real target."""
    db = fixtures.build_fixture("chinook", tmp_path / "combined.db")
    other = fixtures.build_fixture("logistics", tmp_path / "logistics.db")
    conn = sqlite3.connect(db)
    conn.execute(f"ATTACH '{other}' AS l")
    tables = conn.execute("SELECT name, sql FROM l.sqlite_master WHERE type = 'table'").fetchall()
    for name, ddl in tables:
        conn.execute(ddl)
        conn.execute(f"INSERT INTO main.{name} SELECT * FROM l.{name}")
    conn.commit()
    conn.execute("DETACH l")
    conn.close()
    return db


def _run_unguarded(work, text: str, now) -> None:
    conn = sqlite3.connect(work, isolation_level=None)
    install_functions(conn)
    try:
        try:
            conn.executescript(text)
        except sqlite3.Error:
            pass
        try:
            conn.execute(to_sqlite(parse_statements(text)[0], now)).fetchall()
        except Exception:
            pass
    finally:
        conn.close()


def test_01_guardrail_soundness(tmp_path):
    from mutants import generate

    pristine_path = _combined_fixture(tmp_path)
    pristine = pristine_path.read_bytes()
    digest = hashlib.sha256(pristine).hexdigest()
    work = tmp_path / "work.db"
    work.write_bytes(pristine)
    evil = tmp_path / "evil.db"
    policy = GuardrailPolicy()

    def changed() -> bool:
        return hashlib.sha256(work.read_bytes()).hexdigest() != digest or evil.exists()

    def restore() -> None:
        work.write_bytes(pristine)
        evil.unlink(missing_ok=True)

    mutants = list(generate(12_000, str(evil)))
    started = time.perf_counter()
    allowed = 0
    violations: list[str] = []
    refused: list[str] = []
    for text in mutants:
        _, verdict = check(text, policy, None)
        if not verdict.allowed:
            refused.append(text)
            continue
        allowed += 1
        _run_unguarded(work, text, NOW)
        if changed():
            violations.append(text)
            restore()
    elapsed = time.perf_counter() - started

    # the detector must be able to see damage: unguarded, refused mutants do write
    rng = random.Random(5)
    potent = 0
    for text in rng.sample(refused, 300):
        _run_unguarded(work, text, NOW)
        if changed():
            potent += 1
            restore()

    ok = len(mutants) >= 10_000 and not violations and elapsed < 60 and potent > 0
    record(
        1,
        "guardrail soundness",
        ok,
        f"{len(mutants)} mutants, {allowed} allowed, {len(violations)} allowed-and-modifying, "
        f"{elapsed:.1f}s (< 60s); {potent}/300 refused mutants modify the db when run unguarded",
    )


# --- 2. guardrail completeness ------------------------------------------------


def test_02_guardrail_completeness():
    policy = GuardrailPolicy(denied_columns=frozenset())
    allowed = []
    for name, sql in THOR_LISTINGS.items():
        assert len(parse_statements(sql)) == 1, name
        candidate, verdict = check(sql, policy, None)
        if verdict.allowed and candidate.classification is Classification.SINGLE_SELECT:
            allowed.append(name)
    record(
        2,
        "guardrail completeness",
        len(allowed) == len(THOR_LISTINGS) == 6,
        f"{len(allowed)}/{len(THOR_LISTINGS)} listings (Prompt 1 to Prompt 6) parse and are allowed",
    )


# --- 3. retry bound -----------------------------------------------------------


def test_03_retry_bound(tmp_path):
    started = time.perf_counter()
    res = scenario("always_failing", tmp_path)
    elapsed = time.perf_counter() - started
    generations = sum(1 for r in res.provider_roles if r in {g.value for g in GENERATION_ROLES})
    (tmp_path / "again").mkdir()
    again = scenario("always_failing", tmp_path / "again")
    status = res.answer.final_status.value
    ok = (
        status == "exhausted"
        and len(res.answer.attempts) == 5
        and generations == 5
        and elapsed < 1.0
        and again.answer.to_dict() == res.answer.to_dict()
    )
    record(
        3,
        "retry bound",
        ok,
        f"status={status}, {len(res.answer.attempts)} traces, {generations} generation calls, "
        f"{elapsed * 1000:.0f} ms, repeat run identical",
    )


# --- 4. pending-status recovery -----------------------------------------------


def test_04_pending_status_recovery(tmp_path):
    res = scenario("pending_status_recovery", tmp_path)
    answer = res.answer
    db = tmp_path / "pending_status_recovery-logistics.db"
    lo = fixture_rows(db, "SELECT datetime(?, '-18 months')", NOW_TEXT)[0][0]
    expected = fixture_rows(
        db,
        "SELECT substr(created_at, 1, 7) AS m, status, COUNT(*) FROM delivery_requests "
        "WHERE created_at >= ? AND created_at <= ? AND status IS NOT NULL "
        "GROUP BY m, status ORDER BY m DESC, status",
        lo,
        NOW_TEXT,
    )
    journal = AuditStore(res.journal).query()
    introspected = [r for r in journal if r.kind == "introspection" and r.attempt_number == 1]
    first = answer.attempts[0]
    ok = (
        answer.final_status.value == "answered"
        and len(answer.attempts) == 2
        and first.outcome.status.value == "empty"
        and bool(introspected)
        and [tuple(r) for r in answer.rows] == expected
        and sum(r[2] for r in expected) > 0
    )
    record(
        4,
        "pending-status recovery",
        ok,
        f"{len(answer.attempts)} attempts, attempt 1 {first.outcome.status.value}, "
        f"{len(introspected)} value introspection(s), {len(answer.rows)} rows equal oracle ({len(expected)})",
    )


# --- 5. unit conversion -------------------------------------------------------


def test_05_unit_conversion(tmp_path):
    res = scenario("unit_conversion", tmp_path)
    answer = res.answer
    db = tmp_path / "unit_conversion-logistics.db"
    lo = fixture_rows(db, "SELECT datetime(?, '-3 months')", "2025-04-17 00:00:00")[0][0]
    fees: Counter = Counter()
    meters: Counter = Counter()
    for region, fee, distance in fixture_rows(
        db,
        "SELECT r.name, d.fee_total_calculated, d.distance FROM delivery_requests d "
        "JOIN accounts a ON a.id = d.account_id JOIN regions r ON r.id = a.region_id "
        "WHERE d.status = 'delivered' AND d.created_at >= ? AND d.created_at <= ?",
        lo,
        NOW_TEXT,
    ):
        fees[region] += fee
        meters[region] += distance / 1609.34
    oracle = {k: fees[k] / meters[k] for k in fees if meters[k] > 0}
    got = {r[0]: r[-1] for r in answer.rows}
    worst = max(abs(got[k] - v) / abs(v) for k, v in oracle.items()) if set(got) == set(oracle) else float("inf")
    first = answer.attempts[0]
    flags = {f.value for f in first.rating.flags}
    ok = (
        answer.final_status.value == "answered"
        and "unit_mismatch" in flags
        and "1609.34" in (first.correction_hint or "")
        and worst <= 1e-9
    )
    record(
        5,
        "unit conversion",
        ok,
        f"attempt 1 flags {sorted(flags)}, hint has 1609.34, {len(oracle)} regions, worst rel error {worst:.2g} (<= 1e-9)",
    )


# --- 6. fuzzy match -----------------------------------------------------------

HIP_HOP_FAMILY = re.compile(r"hip.*hop|rap", re.I)
FROZEN_HIP_HOP_COUNT = 10  # counted by hand over the seeded genre list


def test_06_fuzzy_match(tmp_path):
    res = scenario("fuzzy_genre_match", tmp_path)
    answer = res.answer
    db = tmp_path / "fuzzy_genre_match-chinook.db"
    genres = [g for (g,) in fixture_rows(db, "SELECT genre FROM chinook_track")]
    oracle = sum(1 for g in genres if g and HIP_HOP_FAMILY.search(g))
    exact = sum(1 for g in genres if g and g.lower() == "hip hop")
    flags = {f.value for f in answer.attempts[0].rating.flags}
    ok = (
        answer.final_status.value == "answered"
        and len(answer.attempts) == 2
        and exact == 0
        and "exact_match_zero_rows" in flags
        and answer.rows[0][0] == oracle == FROZEN_HIP_HOP_COUNT
    )
    record(
        6,
        "fuzzy match",
        ok,
        f"{len(answer.attempts)} attempts, attempt 1 flags {sorted(flags)}, count {answer.rows[0][0]} = oracle {oracle}",
    )


# --- 7. future dates ----------------------------------------------------------


def test_07_future_dates(tmp_path):
    res = scenario("future_dated_sales", tmp_path)
    answer = res.answer
    db = tmp_path / "future_dated_sales-chinook.db"
    future = fixture_rows(db, "SELECT COUNT(*) FROM chinook_invoice WHERE invoice_date > ?", NOW_TEXT)[0][0]
    lo = fixture_rows(db, "SELECT datetime(?, '-3 months')", NOW_TEXT)[0][0]
    oracle = fixture_rows(
        db,
        "SELECT i.invoice_id, i.customer_id, i.invoice_date, i.total, c.first_name || ' ' || c.last_name, "
        "l.track_id, t.name, l.unit_price, l.quantity, l.unit_price * l.quantity "
        "FROM chinook_invoice_line l JOIN chinook_invoice i ON i.invoice_id = l.invoice_id "
        "JOIN chinook_customer c ON c.customer_id = i.customer_id "
        "LEFT JOIN chinook_track t ON t.track_id = l.track_id "
        "WHERE i.invoice_date >= ? AND i.invoice_date <= ?",
        lo,
        NOW_TEXT,
    )
    first = answer.attempts[0]
    first_future = sum(1 for r in first.outcome.rows if r[2] > NOW_TEXT)
    late = [r for r in answer.rows if datetime.fromisoformat(r[2]) > NOW.replace(tzinfo=None)]
    flags = {f.value for f in first.rating.flags}
    ok = (
        future > 0
        and first_future > 0
        and "future_dates_present" in flags
        and first.rating.verdict.value == "regenerate"
        and not late
        and Counter(map(tuple, answer.rows)) == Counter(oracle)
    )
    record(
        7,
        "future dates",
        ok,
        f"fixture has {future} future invoices, attempt 1 returned {first_future} and was flagged; "
        f"accepted rows: {len(late)} after now, {len(answer.rows)} rows equal oracle set ({len(oracle)})",
    )


# --- 8. compliance refusal ----------------------------------------------------


def test_08_compliance_refusal(tmp_path, chinook_db):
    res = scenario("compliance_refusal", tmp_path)
    answer = res.answer
    post_refusal = len(res.provider_roles) - 1
    doc = {
        "datasources": [
            {"id": "chinook", "path": str(chinook_db), "annotations": "chinook", "denied_columns": ["chinook_customer.email"]}
        ],
        "provider": {"kind": "scripted", "scenario_path": str(SCENARIOS / "compliance_refusal.scn")},
    }
    engine = build_engine(parse_config(doc), clock=FakeClock(fixtures.REFERENCE_NOW))
    http = TestClient(create_app(engine)).post(
        "/v1/query", json={"question": "List the email addresses of our customers in Brazil."}
    )
    ok = (
        answer.final_status.value == "refused"
        and len(answer.attempts) == 1
        and res.executor_calls == 0
        and post_refusal == 0
        and http.status_code == 403
        and http.json()["reason"] == "unauthorized_column"
        and engine.binding("chinook").executor.calls == 0
    )
    record(
        8,
        "compliance refusal",
        ok,
        f"{len(answer.attempts)} trace, {res.executor_calls} executor calls, {post_refusal} post-refusal provider calls, "
        f"HTTP {http.status_code}",
    )


# --- 9. determinism -----------------------------------------------------------


def test_09_determinism(tmp_path):
    differing = []
    for path in CORPUS:
        journals = []
        for run in ("a", "b"):
            work = tmp_path / run / path.stem
            work.mkdir(parents=True)
            journals.append(run_scenario(load_scenario(path), work).journal.read_bytes())
        if journals[0] != journals[1] or not journals[0]:
            differing.append(path.stem)
    record(
        9,
        "determinism",
        not differing,
        f"{len(CORPUS) - len(differing)}/{len(CORPUS)} scenarios replay to byte-identical journals",
    )


# --- 10. schema retrieval oracle ----------------------------------------------

# (singular, plural): the generator knows which surface forms fold together
NOUNS = [
    ("track", "tracks"), ("invoice", "invoices"), ("customer", "customers"), ("category", "categories"),
    ("address", "addresses"), ("box", "boxes"), ("status", "statuses"), ("city", "cities"),
    ("country", "countries"), ("match", "matches"), ("order", "orders"), ("region", "regions"),
    ("driver", "drivers"), ("album", "albums"), ("genre", "genres"), ("warehouse", "warehouses"),
    ("payment", "payments"), ("vehicle", "vehicles"), ("route", "routes"), ("shipment", "shipments"),
]
QUESTION_FILLER = ["show", "me", "the", "how", "many", "per", "with", "for", "of"]
DESCRIPTION_FILLER = ["holds", "one", "row", "every", "recorded", "entry"]


def _ident(words: list[str], rng: random.Random) -> str:
    if rng.random() < 0.5:
        return "_".join(words)
    return words[0] + "".join(w.capitalize() for w in words[1:])


def _random_case(rng: random.Random):
    """A catalog plus, per table, the ground-truth folded word sets."""
    n = rng.randint(1, 10)
    truth = {}
    tables = []
    for i in range(n):
        name_words = [rng.choice(NOUNS)[rng.randrange(2)] for _ in range(rng.randint(1, 2))]
        name = f"{_ident(name_words, rng)}_t{i}"
        cols, col_words = [], set()
        for j in range(rng.randint(1, 5)):
            words = [rng.choice(NOUNS)[rng.randrange(2)] for _ in range(rng.randint(1, 2))]
            cols.append(ColumnMeta(f"{_ident(words, rng)}_c{j}", rng.choice([DataKind.TEXT, DataKind.INTEGER])))
            col_words |= set(words)
        desc_words = [rng.choice(NOUNS)[rng.randrange(2)] for _ in range(rng.randint(0, 3))]
        description = " ".join(desc_words + rng.sample(DESCRIPTION_FILLER, 2)) if desc_words else None
        tables.append(TableMeta(name, tuple(cols), description=description))
        truth[name] = (set(name_words), col_words, set(desc_words))
    fks = []
    for _ in range(rng.randint(0, n)):
        a, b = rng.sample(tables, 2) if n > 1 else (tables[0], tables[0])
        if a is not b:
            fks.append(ForeignKey(a.name, a.columns[0].name, b.name, b.columns[0].name))
    q_words = [rng.choice(NOUNS)[rng.randrange(2)] for _ in range(rng.randint(0, 4))]
    return SchemaCatalog("rand", tuple(tables), tuple(fks)), truth, set(q_words)


def _oracle_scores(catalog, truth, q_words) -> dict[str, float]:
    singular = {p: s for s, p in NOUNS} | {s: s for s, _ in NOUNS}
    q = {singular[w] for w in q_words}
    lexical = {}
    for name, (name_words, col_words, desc_words) in truth.items():
        lexical[name] = (
            3.0 * len(q & {singular[w] for w in name_words})
            + 2.0 * len(q & {singular[w] for w in col_words})
            + 1.0 * len(q & {singular[w] for w in desc_words})
        )
    scores = dict(lexical)
    for fk in catalog.foreign_keys:
        for a, b in ((fk.table, fk.ref_table), (fk.ref_table, fk.table)):
            if lexical[a] == 0 and lexical[b] > 0:
                scores[a] = 0.5
    return scores


def _brute_force_selection(catalog, scores, budget) -> tuple[str, ...]:
    """Largest subset that fits the budget and never skips a better-ranked table."""
    names = [t.name for t in catalog.tables]
    better = lambda a, b: (scores[a], b) > (scores[b], a)  # noqa: E731  a outranks b
    best: tuple[str, ...] = ()
    for size in range(len(names), 0, -1):
        for subset in itertools.combinations(names, size):
            chosen = set(subset)
            if any(better(o, s) for s in chosen for o in names if o not in chosen):
                continue
            ordered = sorted(subset, key=lambda x: sum(better(o, x) for o in names))
            if len(render_tables([catalog.table(x) for x in ordered], catalog)) <= budget:
                best = tuple(ordered)
                break
        if best:
            break
    return best


def test_10_schema_retrieval_oracle():
    rng = random.Random(20250417)
    assert not {w for pair in NOUNS for w in pair} & STOPWORDS
    mismatches = []
    selected_sizes = Counter()
    for case in range(100):
        catalog, truth, q_words = _random_case(rng)
        question = " ".join(rng.sample(QUESTION_FILLER, 3) + sorted(q_words))
        full = len(render_tables(catalog.tables, catalog))
        budget = rng.randint(full // 4, full + 20)
        ranking = rank_relevance(question, catalog, budget)
        scores = _oracle_scores(catalog, truth, q_words)
        expected_order = sorted(scores, key=lambda k: (-scores[k], k))
        expected_sel = _brute_force_selection(catalog, scores, budget)
        got_scores = dict(ranking.scored_tables)
        if (
            got_scores != scores
            or [n for n, _ in ranking.scored_tables] != expected_order
            or ranking.selected != expected_sel
            or len(ranking.rendered_schema_text) > budget
        ):
            mismatches.append(case)
        selected_sizes[len(ranking.selected) == len(catalog.tables)] += 1
    record(
        10,
        "schema retrieval oracle",
        not mismatches,
        f"{100 - len(mismatches)}/100 random catalogs (<= 10 tables) match brute force; "
        f"{selected_sizes[False]} cases cut by the budget",
    )


# --- 11. narrative anti-hallucination -----------------------------------------

NUMERIC = re.compile(r"\d+(?:\.\d+)?")


def _supported(token: str, data: list[float]) -> bool:
    decimals = len(token.split(".")[1]) if "." in token else 0
    value = float(token)
    return any(abs(round(d, decimals) - value) < 10 ** -(decimals + 6) or d == value for d in data)


def test_11_narrative_numbers(tmp_path):
    violations = []
    checked = 0
    for path in CORPUS:
        work = tmp_path / path.stem
        work.mkdir()
        res = run_scenario(load_scenario(path), work)
        answer = res.answer
        if not answer.narrative:
            continue
        index = answer.best_attempt if answer.final_status.value == "exhausted" else len(answer.attempts)
        best = answer.attempts[index - 1].outcome
        rows = best.rows if best is not None and best.rows else ()
        data: list[float] = []
        cells = list(itertools.chain.from_iterable(rows)) + [v for _, v in answer.key_values]
        for v in cells:
            if isinstance(v, (int, float)) and not isinstance(v, bool):
                data.append(abs(float(v)))
            elif isinstance(v, str):
                data.extend(float(t) for t in NUMERIC.findall(v))
        for token in NUMERIC.findall(answer.narrative.replace(",", "")):
            checked += 1
            if not _supported(token, data):
                violations.append(f"{path.stem}: {token}")
    record(
        11,
        "narrative anti-hallucination",
        not violations and checked > 0,
        f"{checked} numeric tokens across {len(CORPUS)} scenarios, {len(violations)} violations {violations[:3]}",
    )


# --- 12. audit completeness ---------------------------------------------------


def test_12_audit_completeness(tmp_path, monkeypatch):
    snapshots: dict[str, list[bytes]] = {}
    real_append = AuditStore.append

    def spying_append(self, **fields):
        rec = real_append(self, **fields)
        snapshots.setdefault(str(self.path), []).append(self.path.read_bytes())
        return rec

    monkeypatch.setattr(AuditStore, "append", spying_append)
    problems = []
    for path in CORPUS:
        work = tmp_path / path.stem
        work.mkdir()
        res = run_scenario(load_scenario(path), work)
        records = AuditStore(res.journal).query()
        counts = reconstruct_counts(records)
        transcript_gen = sum(1 for r in res.provider_roles if r in {g.value for g in GENERATION_ROLES})
        if counts.generation + counts.execution != transcript_gen + res.executor_calls:
            problems.append(f"{path.stem}: counts")
        if [r.record_id for r in records] != list(range(1, len(records) + 1)):
            problems.append(f"{path.stem}: id gap")
        history = snapshots[str(res.journal)]
        if any(not later.startswith(earlier) for earlier, later in zip(history, history[1:])):
            problems.append(f"{path.stem}: rewrite")
        if len(history) != len(records):
            problems.append(f"{path.stem}: record count")
    record(
        12,
        "audit completeness",
        not problems,
        f"{len(CORPUS)} scenarios: journal counts equal transcripts, ids contiguous, appends only {problems[:3]}",
    )

