"""Engine facade shared by the HTTP service, the CLI and the scheduler."""
from __future__ import annotations

import itertools
import threading
from dataclasses import dataclass

from thor.clock import SystemClock
from thor.domain import EngineConstants, QueryAnswer, Question, SchemaCatalog, validate_constants
from thor.errors import ConfigError, PreconditionError, ThorError
from thor.executor import SqliteExecutor
from thor.guardrail import GuardrailPolicy
from thor.llm import PromptRole, ProviderRequest, render_prompt
from thor.orchestrator import RouteDecision, route, run_pipeline


class OutOfScope(ThorError):
    def __init__(self, decision: RouteDecision):
        self.decision = decision
        super().__init__(decision.explanation)


class UnknownDatasource(ThorError, KeyError):
    pass


@dataclass
class DatasourceBinding:
    datasource_id: str
    executor: SqliteExecutor
    catalog: SchemaCatalog


class Engine:
    """Routes questions and runs pipelines against registered datasources.

    ``provider_factory`` is called once per question, so scripted providers
    start each run at the top of their scenario.
    """

    def __init__(
        self,
        datasources: dict[str, DatasourceBinding],
        provider_factory,
        policy: GuardrailPolicy | None = None,
        constants: EngineConstants | None = None,
        audit=None,
        clock=None,
        llm_routing: bool = False,
    ):
        if not datasources:
            raise ConfigError("at least one datasource is required")
        constants = constants or EngineConstants()
        problems = validate_constants(constants)
        if problems:
            raise ConfigError("; ".join(problems))
        self.datasources = dict(datasources)
        self.provider_factory = provider_factory
        self.policy = policy or GuardrailPolicy()
        self.constants = constants
        self.audit = audit
        self.clock = clock or SystemClock()
        self.llm_routing = llm_routing
        # every session writes at least one record, so starting past the
        # journal length keeps ids unique across processes sharing a journal
        self._sessions = itertools.count(len(audit) + 1 if audit is not None else 1)
        self._lock = threading.Lock()

    @property
    def default_datasource(self) -> str:
        return next(iter(self.datasources))

    def binding(self, datasource_id: str | None) -> DatasourceBinding:
        key = datasource_id or self.default_datasource
        if key not in self.datasources:
            raise UnknownDatasource(f"unknown datasource {key!r}")
        return self.datasources[key]

    def new_session_id(self) -> str:
        with self._lock:
            return f"session-{next(self._sessions)}"

    def question(self, text: str, datasource_id: str | None = None, session_id: str | None = None) -> Question:
        binding = self.binding(datasource_id)
        return Question(text, binding.datasource_id, self.clock.now(), session_id or self.new_session_id())

    def _route(self, question: Question, catalog: SchemaCatalog, provider) -> tuple[RouteDecision, tuple[str, ...]]:
        if not self.llm_routing:
            return route(question, catalog), ()
        prompt = render_prompt(PromptRole.ROUTE_TASK, question, "")
        text = provider.complete(ProviderRequest(PromptRole.ROUTE_TASK, prompt)).text.lower()
        lane = "out_of_scope" if "out_of_scope" in text else "t2s_lane"
        return RouteDecision(lane, f"model routing: {text.strip()[:200]}"), (PromptRole.ROUTE_TASK.value,)

    def ask(
        self,
        text: str,
        datasource_id: str | None = None,
        session_id: str | None = None,
        verbosity: str = "concise",
    ) -> QueryAnswer:
        if verbosity not in ("concise", "detailed"):
            raise PreconditionError(f"verbosity must be concise or detailed, got {verbosity!r}")
        binding = self.binding(datasource_id)
        question = self.question(text, binding.datasource_id, session_id)
        provider = self.provider_factory(question)
        decision, calls = self._route(question, binding.catalog, provider)
        if calls or not decision.in_scope:
            if self.audit is not None:
                self.audit.append(
                    kind="routing",
                    session_id=question.session_id,
                    question_text=question.text,
                    datasource_id=question.datasource_id,
                    final_status=None if decision.in_scope else "out_of_scope",
                    provider_calls=calls,
                    detail=f"{decision.lane}: {decision.explanation}",
                )
        if not decision.in_scope:
            raise OutOfScope(decision)
        return run_pipeline(
            question,
            binding.catalog,
            provider,
            binding.executor,
            self.policy,
            constants=self.constants,
            audit=self.audit,
            clock=self.clock,
            verbosity=verbosity,
        )
