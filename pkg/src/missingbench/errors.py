"""Exception hierarchy shared by every module of the toolkit."""


class MissingbenchError(Exception):
    """Base class for all toolkit errors."""


class LoadError(MissingbenchError):
    """A CSV file could not be parsed."""

    def __init__(self, message, row=None, column=None):
        loc = []
        if row is not None:
            loc.append(f"row {row}")
        if column is not None:
            loc.append(f"column {column!r}")
        if loc:
            message = f"{message} ({', '.join(loc)})"
        super().__init__(message)
        self.row = row
        self.column = column


class SchemaError(MissingbenchError):
    """Column names, kinds or arities do not agree."""


class ConfigError(MissingbenchError):
    """An experiment, imputer or missingness configuration is invalid."""


class EmptyColumnError(MissingbenchError):
    """A statistic was requested for a column with no observed cells."""


class DegenerateColumnError(MissingbenchError):
    """A column has zero variance over its observed cells."""


class DegenerateTableError(MissingbenchError):
    """A contingency table has an empty margin."""


class PreconditionError(MissingbenchError):
    """Input violates an operation's precondition."""


class MissingCovariateError(PreconditionError):
    """An MNAR simulation was requested without its external covariate."""


class ImputationError(MissingbenchError):
    """An imputer could not fill a cell."""


class IsolatedRowError(ImputationError):
    """A hole has no qualifying nearest-neighbour donors."""

    def __init__(self, row, column):
        super().__init__(f"no donor rows for hole at row {row}, column {column!r}")
        self.row = row
        self.column = column


class HoldoutError(ImputationError):
    """Too few observed cells to hold out for rank selection."""


class RankDeficiencyError(MissingbenchError):
    """The OLS design matrix does not have full column rank."""

    def __init__(self, column):
        super().__init__(f"design matrix is rank deficient; column {column!r} is linearly dependent")
        self.column = column


class SplitError(MissingbenchError):
    """A train/test split cannot be formed."""


class ScoringError(MissingbenchError):
    """Vectors passed to a score function are empty or mismatched."""
