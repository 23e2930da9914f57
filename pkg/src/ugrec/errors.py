"""Exception hierarchy shared by every module.

The CLI maps these onto exit codes: ``DataError`` subclasses exit with 2,
``NumericalError`` subclasses with 3, everything else with 1.
"""


class UGRecError(Exception):
    """Base class for all package errors."""


class ContractError(UGRecError, ValueError):
    """A caller violated an operation's preconditions (shapes, relation kinds)."""


class DataError(UGRecError):
    """Problem with input data: files, vocabularies, splits."""


class ParseError(DataError):
    def __init__(self, message, line=None, source=None):
        self.line = line
        self.source = source
        where = ""
        if source is not None:
            where += f"{source}:"
        if line is not None:
            where += f"{line}:"
        super().__init__(f"{where} {message}" if where else message)


class CatalogError(DataError):
    pass


class FilterError(DataError):
    pass


class SplitError(DataError):
    pass


class CheckpointError(DataError):
    pass


class NumericalError(UGRecError):
    pass


class DegenerateNormalError(NumericalError):
    """Hyperplane normal with (near) zero norm."""


class SamplingExhaustedError(DataError):
    pass
