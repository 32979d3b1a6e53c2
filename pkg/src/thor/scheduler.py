"""In-process scheduled reports.

A report is one question on a cron schedule. Every tick runs the full
pipeline and appends the resulting QueryAnswer document as one JSON line,
whatever the outcome; failures are recorded and the next tick tries again.
"""
from __future__ import annotations

import json
import logging
import threading
import time
from dataclasses import dataclass
from datetime import datetime
from pathlib import Path

from croniter import croniter

from thor.clock import format_instant, utc
from thor.engine import OutOfScope
from thor.errors import ConfigError, ThorError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ReportConfig:
    question: str
    schedule: str
    output: str
    datasource_id: str | None = None

    def __post_init__(self):
        if not self.question.strip():
            raise ConfigError("scheduled report needs a question")
        if not croniter.is_valid(self.schedule):
            raise ConfigError(f"invalid schedule expression {self.schedule!r}")


class ScheduledReport:
    """Runs ``config.question`` at each cron tick.

    ``sleep`` receives the seconds to wait until the next tick. Tests pass a
    function that advances a fake clock instead of blocking.
    """

    def __init__(self, engine, config: ReportConfig, clock=None, sleep=None):
        self.engine = engine
        self.config = config
        self.clock = clock or engine.clock
        self.sleep = sleep or time.sleep
        self._stop = threading.Event()

    def next_fire(self, after: datetime) -> datetime:
        return utc(croniter(self.config.schedule, utc(after)).get_next(datetime))

    def run_once(self) -> dict:
        """Run the question now and append its document to the output file."""
        fired = self.clock.now()
        doc = {"fired_at": format_instant(fired), "question": self.config.question}
        try:
            answer = self.engine.ask(self.config.question, self.config.datasource_id)
            doc["answer"] = answer.to_dict()
        except OutOfScope as err:
            doc["error"] = {"kind": "out_of_scope", "message": err.decision.explanation}
        except ThorError as err:
            log.warning("scheduled report failed at %s: %s", doc["fired_at"], err)
            doc["error"] = {"kind": type(err).__name__, "message": str(err)}
        out = Path(self.config.output)
        out.parent.mkdir(parents=True, exist_ok=True)
        with out.open("a", encoding="utf-8") as fh:
            fh.write(json.dumps(doc, sort_keys=True) + "\n")
        return doc

    def run(self, ticks: int | None = None) -> int:
        """Wait for and run ``ticks`` ticks (forever when None). Returns ticks run."""
        done = 0
        while (ticks is None or done < ticks) and not self._stop.is_set():
            now = self.clock.now()
            wait = (self.next_fire(now) - now).total_seconds()
            self.sleep(max(wait, 0.0))
            if self._stop.is_set():
                break
            self.run_once()
            done += 1
        return done

    def stop(self) -> None:
        self._stop.set()
