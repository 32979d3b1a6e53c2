from __future__ import annotations

import sys
from pathlib import Path

import pytest

from thor import fixtures
from thor.clock import FakeClock
from thor.domain import Question
from thor.executor import DatasourceConfig, SqliteExecutor
from thor.schema import introspect

sys.path.insert(0, str(Path(__file__).parent))


@pytest.fixture(scope="session")
def fixture_dir(tmp_path_factory):
    return tmp_path_factory.mktemp("fixtures")


@pytest.fixture(scope="session")
def chinook_db(fixture_dir):
    return fixtures.build_fixture("chinook", fixture_dir / "chinook.db")


@pytest.fixture(scope="session")
def logistics_db(fixture_dir):
    return fixtures.build_fixture("logistics", fixture_dir / "logistics.db")


@pytest.fixture
def clock():
    return FakeClock(fixtures.REFERENCE_NOW)


def make_executor(db, clock, **kw):
    return SqliteExecutor(DatasourceConfig(str(db), **kw), clock)


@pytest.fixture
def chinook(chinook_db, clock):
    ex = make_executor(chinook_db, clock)
    return ex, introspect(ex, "chinook", fixtures.annotations("chinook"))


@pytest.fixture
def logistics(logistics_db, clock):
    ex = make_executor(logistics_db, clock)
    return ex, introspect(ex, "logistics", fixtures.annotations("logistics"))


def ask(text, clock, datasource="chinook", session="s1"):
    return Question(text, datasource, clock.now(), session)


# acceptance criteria report: test_acceptance fills this, one line per criterion
ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[n])
