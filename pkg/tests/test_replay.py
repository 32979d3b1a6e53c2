import pytest

from thor.errors import ScenarioParseError
from thor.llm import load_scenario, parse_scenario_text
from thor.replay import builtin_scenarios, load_directory, replay_directory, run_scenario, validate_metadata

CORPUS = sorted(builtin_scenarios().glob("*.scn"))


@pytest.mark.parametrize("path", CORPUS, ids=[p.stem for p in CORPUS])
def test_corpus_scenario_passes(path, tmp_path):
    res = run_scenario(load_scenario(path), tmp_path)
    failures = [c for c in res.checks if not c.ok]
    assert res.error is None and not failures, (res.error, failures)


def test_corpus_size():
    assert len(CORPUS) >= 10


BASE = """@question: Which track has the highest unit price?
@fixture: chinook
@expect_status: answered
"""
STEPS = """
# generate_sql
SELECT name, unit_price FROM chinook_track ORDER BY unit_price DESC LIMIT 1;
# rate_result
SCORE: 0.9
REASON: ok
# interpret_result
The top track costs 1.99.
"""


@pytest.mark.parametrize(
    "header, message",
    [
        ("@question: q?\n@expect_status: answered\n", "missing @fixture"),
        (BASE + "@colour: blue\n", "unknown metadata keys: colour"),
        (BASE.replace("chinook\n", "northwind\n"), "unknown fixture"),
        (BASE + "@oracle: nothing_like_this\n", "unknown oracle"),
    ],
)
def test_metadata_validation(header, message):
    with pytest.raises(ScenarioParseError, match=message):
        validate_metadata(parse_scenario_text(header + STEPS, "bad"))


def test_no_steps_rejected():
    with pytest.raises(ScenarioParseError, match="no steps"):
        validate_metadata(parse_scenario_text(BASE, "bad"))


def test_duplicate_key_reports_line():
    with pytest.raises(ScenarioParseError, match="bad:2"):
        parse_scenario_text("@fixture: chinook\n@fixture: chinook\n", "bad")


def test_expectation_mismatch_fails(tmp_path):
    scn = parse_scenario_text(BASE.replace("answered", "exhausted") + "@expect_attempts: 3\n" + STEPS, "wrong")
    res = run_scenario(scn, tmp_path)
    assert not res.passed
    bad = {c.label for c in res.checks if not c.ok}
    assert bad == {"final_status", "attempts"}


def test_unused_script_steps_fail(tmp_path):
    scn = parse_scenario_text(BASE + STEPS + "# correct_sql\nSELECT 1;\n", "extra")
    res = run_scenario(scn, tmp_path)
    assert [c.label for c in res.checks if not c.ok] == ["script fully consumed"]


def test_script_overrun_is_reported_not_raised(tmp_path):
    scn = parse_scenario_text(BASE + "\n# generate_sql\nSELECT 1 FROM chinook_track WHERE 0;\n", "short")
    res = run_scenario(scn, tmp_path)
    assert res.error is not None and not res.passed


def test_negative_control_without_guardrail(tmp_path):
    results = {r.name: r for r in replay_directory(builtin_scenarios(), unsafe_disable_guardrail=True, workdir=tmp_path)}
    assert not results["write_injection"].passed
    assert not results["compliance_refusal"].passed
    assert results["highest_unit_price"].passed


def test_replay_is_byte_identical(tmp_path):
    for run in ("a", "b"):
        (tmp_path / run).mkdir()
        replay_directory(builtin_scenarios(), workdir=tmp_path / run)
    journals = sorted(p.name for p in (tmp_path / "a").glob("*.audit.jsonl"))
    assert len(journals) == len(CORPUS)
    for name in journals:
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes(), name


def test_load_directory_missing(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_directory(tmp_path / "absent")
