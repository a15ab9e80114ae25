"""Exception hierarchy. Everything user-facing derives from PanosegError so the
CLI can map it to exit code 2."""


class PanosegError(Exception):
    """Base class for all expected, user-reportable failures."""


class FormatError(PanosegError):
    """A file does not conform to its grammar (missing columns, bad header)."""


class ParseError(FormatError):
    """A malformed line inside an otherwise recognizable file."""

    def __init__(self, path, line_no, message):
        super().__init__(f"{path}:{line_no}: {message}")
        self.path = str(path)
        self.line_no = line_no


class DataError(PanosegError):
    """Well-formed file whose values violate a data contract."""


class ConfigError(PanosegError):
    """Bad key or value in a configuration file."""


class ContractError(PanosegError):
    """A caller violated an operation's precondition."""


class CapacityError(PanosegError):
    """A randomized construction ran out of attempts."""
