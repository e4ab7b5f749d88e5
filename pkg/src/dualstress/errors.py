"""Exception hierarchy shared by every module.

The CLI maps these onto exit codes: data problems (schema, domain,
ingestion) exit with 2, numerical failures with 3.
"""


class DataError(ValueError):
    """Input data violates a schema or domain constraint."""


class SchemaError(DataError):
    """Wrong shape, missing column, unparsable cell or bad code."""

    def __init__(self, message, *, file=None, line=None, column=None):
        self.file = file
        self.line = line
        self.column = column
        where = ", ".join(
            f"{k}={v}" for k, v in (("file", file), ("line", line), ("column", column)) if v is not None
        )
        super().__init__(f"{message} ({where})" if where else message)


class DomainError(DataError):
    """A value lies outside its admissible range."""


class IngestionError(DataError):
    """Inputs cannot be joined (duplicate keys, missing CPI years, ...)."""


class NumericalError(RuntimeError):
    """An estimator could not produce a usable answer."""


class RankDeficiencyError(NumericalError):
    def __init__(self, columns):
        self.columns = list(columns)
        super().__init__(f"design matrix is rank deficient; collinear columns: {', '.join(self.columns)}")


class ConvergenceError(NumericalError):
    pass
