import json

import pytest
from click.testing import CliRunner
from fastapi.testclient import TestClient

from thor import fixtures
from thor.audit import AuditStore
from thor.cli import main
from thor.clock import FakeClock
from thor.config import build_engine, parse_config
from thor.errors import DatasourceUnavailable
from thor.replay import builtin_scenarios

SCENARIOS = builtin_scenarios()
PROMPT4 = "Which track has the highest unit price?"


def engine_for(db, scenario, tmp_path, deny=()):
    doc = {
        "datasources": [{"id": "chinook", "path": str(db), "annotations": "chinook", "denied_columns": list(deny)}],
        "provider": {"kind": "scripted", "scenario_path": str(SCENARIOS / scenario)},
        "audit": {"path": str(tmp_path / "audit.jsonl")},
    }
    return build_engine(parse_config(doc), clock=FakeClock(fixtures.REFERENCE_NOW)), doc


def client(engine):
    from thor.service import create_app

    return TestClient(create_app(engine))


def test_prompt4_answered(chinook_db, tmp_path):
    engine, _ = engine_for(chinook_db, "highest_unit_price.scn", tmp_path)
    res = client(engine).post("/v1/query", json={"question": PROMPT4, "datasource_id": "chinook"})
    assert res.status_code == 200
    doc = res.json()
    assert len(doc["rows"]) == 1 and doc["narrative"]
    assert doc["attempts"][0]["guardrail_verdict"]["decision"] == "allowed"


def test_denied_column_is_403(chinook_db, tmp_path):
    engine, _ = engine_for(chinook_db, "compliance_refusal.scn", tmp_path, deny=["chinook_customer.email"])
    calls_before = engine.binding("chinook").executor.calls
    res = client(engine).post(
        "/v1/query", json={"question": "List the email addresses of our customers in Brazil.", "datasource_id": "chinook"}
    )
    assert res.status_code == 403
    assert res.json()["reason"] == "unauthorized_column"
    assert engine.binding("chinook").executor.calls == calls_before


def test_out_of_scope_is_422(chinook_db, tmp_path):
    engine, _ = engine_for(chinook_db, "highest_unit_price.scn", tmp_path)
    res = client(engine).post("/v1/query", json={"question": "Hello!", "datasource_id": "chinook"})
    assert res.status_code == 422 and res.json()["error"] == "out_of_scope"


@pytest.mark.parametrize(
    "body",
    [{}, {"question": ""}, {"question": 5}, {"question": "q", "verbosity": "loud"}],
)
def test_malformed_body_is_400(chinook_db, tmp_path, body):
    engine, _ = engine_for(chinook_db, "highest_unit_price.scn", tmp_path)
    res = client(engine).post("/v1/query", json=body)
    assert res.status_code == 400
    assert res.json()["fields"]


def test_unavailable_datasource_is_503(chinook_db, tmp_path, monkeypatch):
    engine, _ = engine_for(chinook_db, "highest_unit_price.scn", tmp_path)

    def down(*a, **kw):
        raise DatasourceUnavailable("database file not found")

    monkeypatch.setattr(engine.binding("chinook").executor, "execute", down)
    res = client(engine).post("/v1/query", json={"question": PROMPT4, "datasource_id": "chinook"})
    assert res.status_code == 503


def test_unknown_datasource(chinook_db, tmp_path):
    engine, _ = engine_for(chinook_db, "highest_unit_price.scn", tmp_path)
    c = client(engine)
    assert c.post("/v1/query", json={"question": PROMPT4, "datasource_id": "nope"}).status_code == 404
    assert c.get("/v1/schema/nope").status_code == 404


def test_schema_health_and_audit(chinook_db, tmp_path):
    engine, _ = engine_for(chinook_db, "highest_unit_price.scn", tmp_path)
    c = client(engine)
    assert c.get("/v1/health").json() == {"status": "ok", "datasources": ["chinook"]}
    tables = {t["name"] for t in c.get("/v1/schema/chinook").json()["tables"]}
    assert "chinook_track" in tables
    c.post("/v1/query", json={"question": PROMPT4})
    records = c.get("/v1/audit", params={"final_status": "answered"}).json()["records"]
    assert [r["kind"] for r in records] == ["terminal"]
    assert c.get("/v1/audit", params={"since": "2030-01-01T00:00:00Z"}).json()["records"] == []


def test_no_endpoint_executes_raw_sql(chinook_db, tmp_path):
    engine, _ = engine_for(chinook_db, "highest_unit_price.scn", tmp_path)
    app = client(engine).app
    paths = {(r.path, tuple(sorted(r.methods))) for r in app.routes if hasattr(r, "methods")}
    posts = {p for p, methods in paths if "POST" in methods}
    assert posts == {"/v1/query"}
    res = client(engine).post("/v1/query", json={"sql": "DELETE FROM chinook_track"})
    assert res.status_code == 400


def test_http_and_cli_documents_match(chinook_db, tmp_path, monkeypatch):
    engine, doc = engine_for(chinook_db, "highest_unit_price.scn", tmp_path / "http")
    http_doc = client(engine).post("/v1/query", json={"question": PROMPT4}).json()

    # the CLI builds its own engine; pin its clock the same way
    import thor.config as config_module

    real = config_module.build_engine
    monkeypatch.setattr(
        config_module, "build_engine", lambda cfg: real(cfg, clock=FakeClock(fixtures.REFERENCE_NOW))
    )
    cfg_path = tmp_path / "thor.yaml"
    doc["audit"]["path"] = str(tmp_path / "cli-audit.jsonl")
    cfg_path.write_text(json.dumps(doc))
    res = CliRunner().invoke(main, ["ask", PROMPT4, "--config", str(cfg_path), "--format", "json"])
    assert res.exit_code == 0, res.output
    assert json.loads(res.output) == http_doc


def test_concurrent_requests_share_one_journal(chinook_db, tmp_path):
    from concurrent.futures import ThreadPoolExecutor

    engine, _ = engine_for(chinook_db, "highest_unit_price.scn", tmp_path)
    c = client(engine)
    with ThreadPoolExecutor(max_workers=4) as pool:
        codes = list(pool.map(lambda _: c.post("/v1/query", json={"question": PROMPT4}).status_code, range(8)))
    assert codes == [200] * 8
    store = AuditStore(tmp_path / "audit.jsonl")
    assert [r.record_id for r in store.query()] == list(range(1, 17))
    assert len({r.session_id for r in store.query()}) == 8
