"""Exception types shared across the package."""


class EdgeTranError(Exception):
    """Base class for all package errors."""


class InvalidConfig(EdgeTranError, ValueError):
    """An architecture violates a structural or grid constraint."""

    def __init__(self, reason: str):
        super().__init__(reason)
        self.reason = reason


class MalformedEmbedding(EdgeTranError, ValueError):
    pass


class FitError(EdgeTranError, ValueError):
    pass


class StateError(EdgeTranError, RuntimeError):
    """An operation was called on an object in the wrong state (e.g. unfitted)."""


class NormalizeError(EdgeTranError, ValueError):
    pass


class MeasureError(EdgeTranError, RuntimeError):
    pass


class AggregateError(EdgeTranError, ValueError):
    pass


class BudgetExhausted(EdgeTranError, RuntimeError):
    pass


class DomainError(EdgeTranError, ValueError):
    pass


class TrainError(EdgeTranError, RuntimeError):
    pass


class QueryExhausted(EdgeTranError, RuntimeError):
    pass


class BuildError(EdgeTranError, ValueError):
    pass


class ScanError(EdgeTranError, ValueError):
    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


class DuplicateError(EdgeTranError, ValueError):
    pass


class ReportError(EdgeTranError, ValueError):
    pass
