"""Exception types shared by the file readers and the CLI."""


class ConfigError(ValueError):
    """A configuration value violates its documented constraints."""


class FormatError(ValueError):
    """A binary file is truncated or malformed.

    ``offset`` is the byte position at which parsing failed.
    """

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class VersionError(FormatError):
    """File version or embedded configuration does not match what was expected."""
