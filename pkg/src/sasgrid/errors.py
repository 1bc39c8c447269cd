"""Exception hierarchy.  Every error carries a stable ``kind`` for the CLI."""


class SasGridError(Exception):
    @property
    def kind(self) -> str:
        return type(self).__name__


class GridSpecError(SasGridError, ValueError):
    pass


class CooldownViolation(SasGridError):
    pass


class UnknownElement(SasGridError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class SingularSystem(SasGridError):
    pass


class NotConverged(SasGridError):
    pass


class InfeasibleDispatch(SasGridError):
    pass


class EpisodeFinished(SasGridError):
    pass


class SimulationBudgetExhausted(SasGridError):
    def __init__(self, message="", partial=None):
        super().__init__(message)
        self.partial = partial if partial is not None else []


class ScenarioError(SasGridError, ValueError):
    pass


class OutOfRange(SasGridError, IndexError):
    pass


class NotInCatalogue(SasGridError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class DimensionMismatch(SasGridError, ValueError):
    pass


class CorruptCheckpoint(SasGridError):
    pass


class VersionMismatch(SasGridError):
    pass


class WorkerPoolFailure(SasGridError):
    def __init__(self, message="", results=None):
        super().__init__(message)
        self.results = results if results is not None else []


class PartialBroadcast(WorkerPoolFailure):
    def __init__(self, message="", acks=0):
        super().__init__(message)
        self.acks = acks


class Timeout(WorkerPoolFailure):
    def __init__(self, message="", results=None, missing=None):
        super().__init__(message, results)
        self.missing = missing if missing is not None else []


class ConfigError(SasGridError, ValueError):
    pass
