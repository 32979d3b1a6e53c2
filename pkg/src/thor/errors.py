"""Exception hierarchy shared across the engine."""


class ThorError(Exception):
    """Base class for all engine errors."""


class PreconditionError(ThorError, ValueError):
    """An operation was called with inputs outside its contract."""


class CatalogError(ThorError, ValueError):
    """A schema catalog violates one of its structural invariants."""


class ConfigError(ThorError):
    pass


class DatasourceUnavailable(ThorError):
    """The database could not be reached. Never retried by the correction loop."""


class ReadOnlyViolation(ThorError):
    """The datasource session accepted a write; the engine must not start."""


class ColumnNotFound(ThorError, KeyError):
    pass


class RankingUnavailable(ThorError):
    pass


class ProviderUnavailable(ThorError):
    """The language-model transport failed after all retries."""


class ScenarioViolation(ThorError):
    """A scripted provider was asked for a role its scenario did not expect."""


class ScenarioParseError(ThorError):
    def __init__(self, path, line: int, message: str):
        self.path = str(path)
        self.line = line
        super().__init__(f"{self.path}:{line}: {message}")


class ExtractionFailed(ThorError):
    """A model response contained nothing that looks like SQL."""


class AuditFailure(ThorError):
    """The audit store could not persist a record. Pipelines fail closed."""
