"""Error taxonomy shared by all cciv modules.

Every failure that callers are expected to handle derives from
:class:`CcivError`, so batch drivers (the Monte Carlo engine, the CLI) can
distinguish "this replication / dataset is bad" from programming errors.
"""


class CcivError(Exception):
    """Base class for all cciv errors."""


class InvalidInput(CcivError):
    """An argument is outside its documented domain."""


class NumericalFailure(CcivError):
    """An iterative numerical routine failed to converge."""


class IllConditioned(CcivError):
    """A matrix is too close to singular for the requested operation."""

    def __init__(self, message: str, min_eigenvalue: float | None = None):
        super().__init__(message)
        self.min_eigenvalue = min_eigenvalue


class RankDeficient(CcivError):
    """A design matrix does not have full column rank (or nearly so)."""

    def __init__(self, message: str, condition_estimate: float | None = None):
        super().__init__(message)
        self.condition_estimate = condition_estimate


class SchemaError(CcivError):
    """A CSV header does not match the expected column layout."""


class ParseError(CcivError):
    """A CSV cell could not be parsed as a number.

    Carries the 1-based data row and the offending column name.
    """

    def __init__(self, message: str, row: int, col: str):
        super().__init__(message)
        self.row = row
        self.col = col


class ValidationFailed(CcivError):
    """A dataset failed the pre-estimation diagnostic checks.

    Carries the full report so callers can print which checks failed.
    """

    def __init__(self, report):
        self.report = report
        failed = ", ".join(c.name for c in report.checks if not c.passed)
        super().__init__(f"data validation failed: {failed}")


class WeakDesignError(CcivError):
    """An estimator's denominator is numerically indistinguishable from zero."""


class VarianceError(CcivError):
    """A variance estimate required to be positive is zero or negative."""
