"""Exception types shared across the package."""


class SmasimError(Exception):
    """Base class for all package-specific errors."""


class SingularMatrix(SmasimError):
    """A matrix required to be invertible has (numerically) zero determinant."""


class NonPositiveDeterminant(SmasimError):
    """An orientation-preserving map was expected but det(F) <= 0 somewhere."""


class InfeasibleStart(SmasimError):
    """An initial deformation handed to the solver already has det(grad y) <= 0."""


class ConfigError(SmasimError):
    """A scenario file failed validation.  Carries every violation, not just the first."""

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("invalid scenario configuration:\n" + "\n".join(
            f"  - {v}" for v in self.violations))


class TraceError(SmasimError):
    """A trace file is malformed or internally inconsistent."""
