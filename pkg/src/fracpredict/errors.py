"""Exception types shared across the package.

Two families matter to callers: configuration/domain problems (bad input,
CLI exit code 2) and numerical failures (CLI exit code 3).
"""


class FracPredictError(Exception):
    """Base class for all package errors."""

    stage = None


class ConfigError(FracPredictError, ValueError):
    """Invalid configuration or arguments."""


class DomainError(FracPredictError, ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class UnsupportedRegime(DomainError):
    """The requested parameter regime is not covered (e.g. fCIR with H <= 1/2)."""


class GridIndexError(FracPredictError, IndexError):
    """A requested time is not a member of the simulation grid."""


class NumericalError(FracPredictError, ArithmeticError):
    """Base class for numerical failures."""


class NotPositiveDefinite(NumericalError):
    def __init__(self, pivot, message=None):
        self.pivot = int(pivot)
        super().__init__(message or f"matrix is not positive definite (pivot {self.pivot})")


class ConditioningError(NumericalError):
    def __init__(self, index, message=None):
        self.index = int(index)
        super().__init__(
            message or f"observation {self.index} is redundant given the preceding observations"
        )


class SimulationError(NumericalError):
    pass


class TrainingDivergence(NumericalError):
    def __init__(self, batch_index, loss):
        self.batch_index = int(batch_index)
        self.loss = loss
        super().__init__(f"non-finite training loss {loss!r} at batch {self.batch_index}")


class OrthantCaseRequired(FracPredictError):
    """fCIR observations contain zeros; use the orthant Monte-Carlo estimator."""


class InfeasibleOrthant(NumericalError):
    pass


def tag_stage(err, stage):
    """Attach the pipeline stage name to an exception and return it."""
    err.stage = stage
    if err.args and isinstance(err.args[0], str) and not err.args[0].startswith(f"[{stage}]"):
        err.args = (f"[{stage}] {err.args[0]}",) + tuple(err.args[1:])
    return err
