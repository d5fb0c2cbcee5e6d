"""Exception types raised across the package."""


class TwoScaleError(Exception):
    """Base class for all package errors."""


class MeshError(TwoScaleError, ValueError):
    """A mesh violates one of its structural invariants."""


class MeshGenerationError(MeshError):
    """The mesher could not produce a valid mesh (e.g. unmatched periodic node)."""


class AssemblyError(TwoScaleError, ValueError):
    """Invalid element coefficients handed to an assembly routine."""


class SolverError(TwoScaleError, RuntimeError):
    """A linear solve broke down or missed its tolerance.

    ``residual`` holds the relative residual reached before giving up
    (``inf`` when no iterate exists).
    """

    def __init__(self, message, residual=float("inf"), iterations=0):
        super().__init__(f"{message} (relative residual {residual:.3e})")
        self.residual = residual
        self.iterations = iterations


class TableBuildError(TwoScaleError, RuntimeError):
    """A tensor table entry failed validation."""

    def __init__(self, message, point=None):
        super().__init__(message)
        self.point = point


class ConfigError(TwoScaleError, ValueError):
    """Malformed or invalid configuration text."""

    def __init__(self, message, line=None):
        where = f"line {line}: " if line is not None else ""
        super().__init__(where + message)
        self.line = line
