"""``thor`` command line.

Exit codes for ``ask``: 0 answered, 3 refused, 4 exhausted, 5 infrastructure
or configuration failure, 6 question routed out of scope.
"""
from __future__ import annotations

import json
import os
import sys
from pathlib import Path

import click

from thor import fixtures
from thor.clock import parse_instant
from thor.domain import FinalStatus
from thor.errors import ConfigError, ScenarioParseError, ThorError

EXIT_OK = 0
EXIT_REFUSED = 3
EXIT_EXHAUSTED = 4
EXIT_INFRA = 5
EXIT_OUT_OF_SCOPE = 6
LINT_REFUSED = 2

_STATUS_EXIT = {
    FinalStatus.ANSWERED: EXIT_OK,
    FinalStatus.REFUSED: EXIT_REFUSED,
    FinalStatus.EXHAUSTED: EXIT_EXHAUSTED,
}

config_option = click.option(
    "--config",
    "config_path",
    type=click.Path(dir_okay=False),
    default=lambda: os.environ.get("THOR_CONFIG", "thor.yaml"),
    show_default="$THOR_CONFIG or thor.yaml",
    help="Engine configuration file.",
)


def _fail(message: str, code: int = EXIT_INFRA):
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def _engine(config_path: str):
    from thor.config import build_engine, load_config

    try:
        return build_engine(load_config(config_path))
    except ThorError as err:
        _fail(str(err))
    except OSError as err:
        _fail(f"{config_path}: {err}")


def render_table(columns, rows, max_width: int = 40) -> str:
    def cell(v) -> str:
        text = "NULL" if v is None else str(v)
        return text if len(text) <= max_width else text[: max_width - 3] + "..."

    body = [[cell(v) for v in row] for row in rows]
    widths = [len(c) for c in columns]
    for row in body:
        widths = [max(w, len(v)) for w, v in zip(widths, row)]
    line = lambda values: " | ".join(v.ljust(w) for v, w in zip(values, widths))  # noqa: E731
    out = [line(list(columns)), "-+-".join("-" * w for w in widths)]
    out.extend(line(r) for r in body)
    return "\n".join(out)


def render_answer(answer) -> str:
    parts = []
    if answer.final_status is FinalStatus.EXHAUSTED:
        parts.append(f"WARNING: no attempt was accepted after {len(answer.attempts)} tries; "
                     f"showing attempt {answer.best_attempt}.")
    if answer.final_status is FinalStatus.REFUSED:
        parts.append(f"REFUSED: {answer.refusal.describe()}")
    if answer.column_names:
        parts.append(render_table(answer.column_names, answer.rows))
        parts.append(f"({len(answer.rows)} row{'' if len(answer.rows) == 1 else 's'})")
    if answer.narrative:
        parts.append(answer.narrative)
    if answer.key_values:
        parts.append("; ".join(f"{k}: {v}" for k, v in answer.key_values))
    return "\n\n".join(parts)


@click.group()
@click.version_option(package_name="artifact")
def main():
    """Read-only natural-language querying over SQL datasources."""


@main.command()
@click.argument("question")
@config_option
@click.option("--db", "datasource_id", default=None, help="Datasource id from the config (default: first).")
@click.option("--format", "fmt", type=click.Choice(["table", "json"]), default="table", show_default=True)
@click.option("--verbosity", type=click.Choice(["concise", "detailed"]), default="concise", show_default=True)
def ask(question, config_path, datasource_id, fmt, verbosity):
    """Answer QUESTION against a configured datasource."""
    from thor.engine import OutOfScope, UnknownDatasource

    engine = _engine(config_path)
    try:
        answer = engine.ask(question, datasource_id, verbosity=verbosity)
    except OutOfScope as err:
        _fail(f"out of scope: {err.decision.explanation}", EXIT_OUT_OF_SCOPE)
    except UnknownDatasource as err:
        _fail(str(err.args[0]))
    except ThorError as err:
        _fail(str(err))
    if fmt == "json":
        click.echo(json.dumps(answer.to_dict(), indent=2, sort_keys=True))
    else:
        click.echo(render_answer(answer))
    sys.exit(_STATUS_EXIT[answer.final_status])


@main.command()
@click.option("--config", "config_path", type=click.Path(dir_okay=False), default=None,
              help="Use this config's policy and first datasource's catalog for column checks.")
def lint(config_path):
    """Check SQL read from stdin against the guardrail. Never executes it.

    Exit 0 when allowed, 2 when refused.
    """
    from thor.guardrail import GuardrailPolicy, check

    policy, catalog = GuardrailPolicy(), None
    if config_path:
        engine = _engine(config_path)
        policy, catalog = engine.policy, engine.binding(None).catalog
    sql = sys.stdin.read()
    try:
        candidate, verdict = check(sql, policy, catalog)
    except ThorError as err:
        _fail(str(err), LINT_REFUSED)
    doc = verdict.to_dict() | {"classification": candidate.classification.value}
    click.echo(json.dumps(doc, sort_keys=True))
    sys.exit(EXIT_OK if verdict.allowed else LINT_REFUSED)


@main.command()
@config_option
@click.option("--db", "datasource_id", default=None)
@click.option("--rank", "question", default=None, help="Show relevance ranking for this question.")
@click.option("--budget", type=int, default=4000, show_default=True)
@click.option("--format", "fmt", type=click.Choice(["text", "json"]), default="text", show_default=True)
def schema(config_path, datasource_id, question, budget, fmt):
    """Show the introspected catalog, or rank it against a question."""
    from thor.engine import UnknownDatasource
    from thor.schema import rank_relevance, render_tables

    engine = _engine(config_path)
    try:
        catalog = engine.binding(datasource_id).catalog
    except UnknownDatasource as err:
        _fail(str(err.args[0]))
    if question is None:
        if fmt == "json":
            click.echo(json.dumps(catalog.to_dict(), indent=2, sort_keys=True))
        else:
            click.echo(render_tables(catalog.tables, catalog))
        return
    ranking = rank_relevance(question, catalog, budget)
    if fmt == "json":
        doc = {"scored_tables": [list(p) for p in ranking.scored_tables], "selected": list(ranking.selected)}
        click.echo(json.dumps(doc, indent=2))
        return
    for name, score in ranking.scored_tables:
        mark = "*" if name in ranking.selected else " "
        click.echo(f"{mark} {score:6.2f}  {name}")
    click.echo("")
    click.echo(ranking.rendered_schema_text)


@main.command()
@config_option
@click.option("--session", "session_id", default=None)
@click.option("--since", default=None, help="ISO-8601 instant.")
@click.option("--until", default=None, help="ISO-8601 instant.")
@click.option("--status", "final_status", default=None)
@click.option("--kind", default=None, type=click.Choice(["attempt", "introspection", "terminal", "routing"]))
def audit(config_path, session_id, since, until, final_status, kind):
    """Print matching audit records as JSON lines."""
    from thor.audit import AuditStore, query_audit
    from thor.config import load_config

    try:
        cfg = load_config(config_path)
        if not cfg.audit_path:
            raise ConfigError("config has no audit.path")
        store = AuditStore(cfg.audit_path)
        records = query_audit(
            store,
            session_id,
            parse_instant(since) if since else None,
            parse_instant(until) if until else None,
            final_status,
            kind,
        )
    except ThorError as err:
        _fail(str(err))
    except ValueError as err:
        _fail(f"bad instant: {err}")
    for rec in records:
        click.echo(rec.to_json())


@main.command()
@click.argument("path", required=False, type=click.Path(file_okay=False))
@click.option("--unsafe-disable-guardrail", is_flag=True, help="Test mode: run with the guardrail switched off.")
@click.option("--workdir", type=click.Path(file_okay=False), default=None, help="Keep fixture databases and journals here.")
@click.option("-v", "--verbose", is_flag=True, help="Print every check, not only failures.")
def replay(path, unsafe_disable_guardrail, workdir, verbose):
    """Run every scenario in PATH (default: the built-in corpus)."""
    from thor.replay import builtin_scenarios, replay_directory

    path = Path(path) if path else builtin_scenarios()
    if not path.is_dir():
        _fail(f"scenario directory not found: {path}", 2)
    if unsafe_disable_guardrail:
        click.echo("WARNING: guardrail disabled (test mode)", err=True)
    try:
        results = replay_directory(path, unsafe_disable_guardrail=unsafe_disable_guardrail, workdir=workdir)
    except ScenarioParseError as err:
        _fail(str(err), 2)
    failed = 0
    for res in results:
        answer = res.answer
        status = answer.final_status.value if answer else "error"
        attempts = len(answer.attempts) if answer else 0
        click.echo(f"{'PASS' if res.passed else 'FAIL'}  {res.name}: status={status} attempts={attempts}")
        if res.error:
            click.echo(f"      error: {res.error}")
        for c in res.checks:
            if verbose or not c.ok:
                click.echo(f"      [{'ok' if c.ok else 'MISMATCH'}] {c.label}: expected {c.expected}, got {c.actual}")
        failed += not res.passed
    click.echo(f"{len(results)} scenarios, {len(results) - failed} passed, {failed} failed")
    sys.exit(1 if failed else 0)


@main.command()
@config_option
@click.option("--host", default=None)
@click.option("--port", type=int, default=None)
def serve(config_path, host, port):
    """Run the HTTP service."""
    import uvicorn

    from thor.config import load_config
    from thor.service import create_app

    try:
        cfg = load_config(config_path)
    except ThorError as err:
        _fail(str(err))
    engine = _engine(config_path)
    uvicorn.run(create_app(engine), host=host or cfg.service.host, port=port or cfg.service.port)


@main.command()
@config_option
@click.option("--question", required=True)
@click.option("--cron", "schedule", required=True, help='Cron expression, e.g. "0 7 * * *".')
@click.option("--output", required=True, type=click.Path(dir_okay=False))
@click.option("--db", "datasource_id", default=None)
@click.option("--ticks", type=int, default=None, help="Stop after this many runs.")
def schedule(config_path, question, schedule, output, datasource_id, ticks):
    """Append a QueryAnswer document to OUTPUT at every cron tick."""
    from thor.scheduler import ReportConfig, ScheduledReport

    try:
        report_cfg = ReportConfig(question, schedule, output, datasource_id)
    except ConfigError as err:
        _fail(str(err))
    engine = _engine(config_path)
    ScheduledReport(engine, report_cfg).run(ticks)


@main.command()
@click.argument("name", type=click.Choice(list(fixtures.FIXTURES)))
@click.argument("path", type=click.Path(dir_okay=False))
def fixture(name, path):
    """Create the seeded fixture database NAME at PATH."""
    click.echo(str(fixtures.build_fixture(name, path)))


if __name__ == "__main__":
    main()
