"""Exception hierarchy shared by the library and the CLI."""


class SeqPermError(Exception):
    """Base class for all library errors."""


class InvalidArgumentError(SeqPermError, ValueError):
    """An argument is outside the documented domain."""


class InvalidStateError(SeqPermError, RuntimeError):
    """An operation was requested in a state where it is undefined."""


class ConfigurationError(SeqPermError):
    """The run configuration cannot be executed (e.g. an exhausted replay)."""


class StreamExhaustedError(ConfigurationError):
    """A finite replayed loss stream ran out of recorded indicators."""


class DataError(SeqPermError):
    """Input data is malformed; messages name the offending row/column."""


class LimitExceededError(InvalidArgumentError):
    """A hard size guard (e.g. exponential enumeration) was exceeded."""
