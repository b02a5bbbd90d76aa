"""Exception taxonomy shared across the package.

Every error carries a machine-readable ``category`` string; the CLI maps
categories to exit codes and emits them in structured error reports.
"""


class GradmatchError(Exception):
    """Base class for all package errors."""

    category = "error"


class InvalidArgumentError(GradmatchError):
    """An argument violates a documented precondition."""

    category = "invalid-argument"


class DomainError(GradmatchError):
    """Evaluation requested outside the supported domain (e.g. t not in [0, 1])."""

    category = "domain-error"


class IllPosedDesignError(GradmatchError):
    """The spline design is rank deficient (not enough data across knots)."""

    category = "ill-posed-design"

    def __init__(self, message, deficient_columns=None):
        super().__init__(message)
        self.deficient_columns = (tuple(int(c) for c in deficient_columns)
                                  if deficient_columns is not None else ())


class NumericError(GradmatchError):
    """A numerical operation failed (non-finite values, singular Jacobian, ...)."""

    category = "numeric-error"


class OptimizationFailure(GradmatchError):
    """No optimizer start converged; carries the best incumbent found."""

    category = "optimization-failure"

    def __init__(self, message, incumbent=None):
        super().__init__(message)
        self.incumbent = incumbent


class DegenerateModelError(GradmatchError):
    """A model-level hypothesis fails (e.g. singular curvature matrix)."""

    category = "model-degeneracy"


class ParseError(GradmatchError):
    """A config or data file could not be parsed."""

    category = "parse-error"

    def __init__(self, message, line=None):
        super().__init__(message)
        self.line = line
