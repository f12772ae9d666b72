"""Exception hierarchy for the solver."""


class MemmError(Exception):
    """Base class for all solver errors."""


class EvaluationError(MemmError, ValueError):
    """A coefficient or integrand produced a non-finite value."""


class ModelValidationError(MemmError, ValueError):
    """The market model violates a standing assumption."""

    def __init__(self, report):
        self.report = report
        lines = [str(v) for v in report.violations[:5]]
        more = len(report.violations) - len(lines)
        if more > 0:
            lines.append(f"... and {more} more")
        super().__init__("model validation failed:\n  " + "\n  ".join(lines))


class NonConvergenceError(MemmError, RuntimeError):
    """An iterative solver did not reach its tolerance.

    ``detail`` carries the last bracket (root finders) or the
    fixed-point report (Picard iteration).
    """

    def __init__(self, message, detail=None):
        super().__init__(message)
        self.detail = detail


class TruncationError(MemmError, RuntimeError):
    """The truncation of the value function is active at the fixed point."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class ClampError(MemmError, RuntimeError):
    """Too many evaluations were clamped to the volatility domain."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class AdmissibilityError(MemmError, ValueError):
    """BN-S parameters do not give a strictly positive market price of risk."""


class CorruptionError(MemmError, RuntimeError):
    """Solved fields produce a non-positive jump density ratio."""


class ModelFileError(MemmError, ValueError):
    """A model definition file does not match the schema."""
