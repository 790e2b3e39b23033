"""Exception taxonomy shared across the package.

The CLI maps these onto exit codes: configuration errors exit 2, data
errors exit 3, numeric/contract failures exit 4.
"""


class EhrEmbedError(Exception):
    pass


class ConfigurationError(EhrEmbedError):
    """Invalid option, flag combination, or config value."""


class DataError(EhrEmbedError):
    """Problem with input data files or their contents."""


class ParseError(DataError):
    def __init__(self, message, path=None, line_no=None):
        self.path = path
        self.line_no = line_no
        loc = ""
        if path is not None:
            loc = f" [{path}" + (f":{line_no}" if line_no is not None else "") + "]"
        super().__init__(message + loc)


class IntegrityError(DataError):
    """Cross-file consistency violation (duplicate ids, overlapping stays)."""


class NotFoundError(DataError):
    """Required file, column, or task missing."""


class UndefinedMetricError(DataError):
    """Metric has no defined value on this input (e.g. AUPRC with no positives)."""


class DimensionError(EhrEmbedError):
    """Tensor shape mismatch; message names both shapes."""


class NumericError(EhrEmbedError):
    """NaN/Inf encountered where finite values are required."""


class ContractError(EhrEmbedError):
    """An internal API precondition was violated by the caller."""
