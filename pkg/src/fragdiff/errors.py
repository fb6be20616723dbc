"""Exception hierarchy shared by all modules.

The CLI maps these onto exit codes: ``DataError`` subclasses exit 2,
``ContractError`` exits 3, ``ConfigError`` exits 1.
"""


class FragdiffError(Exception):
    pass


class ConfigError(FragdiffError, ValueError):
    """Bad configuration or arguments supplied by the caller."""


class DataError(FragdiffError):
    """Input data could not be read or is inconsistent."""


class ParseError(DataError, ValueError):
    def __init__(self, message, line_number=None):
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)
        self.line_number = line_number


class EmptyStructureError(DataError, ValueError):
    pass


class SpanError(FragdiffError, IndexError):
    """A residue span falls outside its chain."""


class ShapeError(FragdiffError, ValueError):
    pass


class DomainError(FragdiffError, ValueError):
    """An argument lies outside the domain of a function."""


class NoDataError(DataError):
    """No usable fragment matches were available."""


class VersionError(DataError):
    pass


class CorruptionError(DataError):
    pass


class ContractError(FragdiffError):
    """A distribution-valued input or output violated its contract."""
