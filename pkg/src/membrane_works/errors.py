"""Exception hierarchy.

Two families: ``ValidationError`` for bad inputs (CLI exit status 2) and
``ComputationError`` for numerical failures on valid inputs (exit status 3).
"""


class MembraneWorksError(Exception):
    """Base class for all toolkit errors."""


class ValidationError(MembraneWorksError, ValueError):
    """Input violates a documented invariant or precondition."""

    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field


class ParseError(ValidationError):
    """Malformed data file; ``line`` is 1-based when known."""

    def __init__(self, message, path=None, line=None):
        where = ""
        if path is not None:
            where += f"{path}"
        if line is not None:
            where += f":{line}" if where else f"line {line}"
        super().__init__(f"{where}: {message}" if where else message)
        self.path = path
        self.line = line


class ComputationError(MembraneWorksError, RuntimeError):
    """Numerical procedure failed on otherwise valid input."""


class FitError(ComputationError):
    """Nonlinear fit did not converge within its iteration budget."""

    def __init__(self, message, best_residual=None):
        super().__init__(message)
        self.best_residual = best_residual


class NoPeakError(ComputationError):
    """Spectrum has no resolvable peak."""


class DriveContaminationError(ComputationError):
    """Ring-down trace does not decay (fitted rate <= 0)."""


class RankDeficiencyError(ComputationError):
    """Design matrix does not constrain all parameters."""


class NegativeStressError(ComputationError):
    """Stress fit produced a non-positive stress; density or side length is likely wrong."""


class AssignmentError(ComputationError):
    """Mode-index assignment is impossible with the given candidates."""


class StepControlError(ValidationError):
    """Integrator step too coarse for the fastest dynamics of a phase."""

    def __init__(self, message, required_step=None):
        super().__init__(message, field="max_step")
        self.required_step = required_step


class IntegrationError(ComputationError):
    """Integration produced NaN or overflow."""

    def __init__(self, message, last_valid_time=None):
        super().__init__(message)
        self.last_valid_time = last_valid_time


class UndefinedEfficiencyError(ComputationError):
    """Transfer efficiency undefined (empty source mode or no completed swap)."""
