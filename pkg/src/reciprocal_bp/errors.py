"""Exception hierarchy. Each class carries the CLI exit code it maps to."""


class ReciprocalError(Exception):
    exit_code = 1


class ModelValidationError(ReciprocalError, ValueError):
    """Input violates a structural invariant (bad dimensions, negative entries, ...)."""

    exit_code = 1

    def __init__(self, message, violations=()):
        super().__init__(message)
        self.violations = list(violations)


class DegeneracyError(ReciprocalError, ArithmeticError):
    """A numerical quantity that must be nonzero / positive came out degenerate."""

    exit_code = 2


class EnumerationCapError(DegeneracyError):
    exit_code = 2


class NotPrimitiveError(DegeneracyError):
    exit_code = 2


class NonPositiveTableError(DegeneracyError):
    exit_code = 2


class BoundaryError(ReciprocalError, ValueError):
    """Hilbert distance requested for a point on the cone boundary."""

    exit_code = 2


class SchemaError(ReciprocalError):
    """Malformed input document. ``path`` locates the offending element."""

    exit_code = 3

    def __init__(self, message, path="$"):
        super().__init__(f"{path}: {message}")
        self.path = path
        self.detail = message
