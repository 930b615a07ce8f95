"""Exception types shared across the package."""


class MetatriageError(Exception):
    """Base class for all data and contract errors raised by this package."""


class ParseError(MetatriageError):
    """Input stream could not be parsed within the configured error budget."""


class DuplicateAppIdError(ParseError):
    """Two records in one corpus share an app_id."""


class CompositionError(MetatriageError):
    """A subset recipe cannot be satisfied by the given corpus."""


class GenerationError(MetatriageError):
    """A synthetic-corpus configuration is infeasible."""


class DivergenceError(MetatriageError):
    """Training produced a non-finite loss."""


class ContractError(MetatriageError):
    """Caller violated an interface contract (e.g. mismatched columns)."""


class DegenerateLabelsError(MetatriageError):
    """An operation that needs both classes received only one."""
