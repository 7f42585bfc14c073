"""Exception hierarchy shared by every mobiprod module.

Validation problems map to CLI exit code 2 and solver problems to exit code 3.
"""
from typing import Any, Optional


class MobiprodError(Exception):
    exit_code = 1


class ValidationError(MobiprodError):
    exit_code = 2


class InvalidModel(ValidationError):
    pass


class GenerationFailure(ValidationError):
    pass


class UnsupportedChain(ValidationError):
    pass


class NoStationaryDistribution(ValidationError):
    pass


class ZeroLikelihood(ValidationError):
    pass


class NonConvexTable(ValidationError):
    pass


class SizeExceeded(ValidationError):
    pass


class InvalidAction(ValidationError):
    pass


class SolverError(MobiprodError):
    exit_code = 3


class InfeasibleProblem(SolverError):
    pass


class UnboundedProblem(SolverError):
    pass


class BudgetExceeded(SolverError):
    def __init__(self, message: str, incumbent: Optional[Any] = None):
        super().__init__(message)
        self.incumbent = incumbent


class ConvergenceFailure(SolverError):
    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (residual={residual:.3e})")
        self.residual = residual


class Prop2Violation(SolverError):
    """LP relaxation of a lookahead program returned a fractional decision."""


class TrajectoryAborted(MobiprodError):
    def __init__(self, message: str, period: int, cause: MobiprodError):
        super().__init__(f"period {period}: {message}: {cause}")
        self.period = period
        self.cause = cause
        self.exit_code = cause.exit_code
