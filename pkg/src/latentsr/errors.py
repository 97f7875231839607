"""Exception types shared across the package."""


class LatentsrError(Exception):
    """Base class for all errors raised by latentsr."""


class InvalidInputError(LatentsrError, ValueError):
    """An argument violates an operation's preconditions (shape, range, ...)."""


class ConfigurationError(LatentsrError, ValueError):
    """A run is wired up wrong: missing checkpoint, empty dataset, bad config key."""


class ProtocolError(LatentsrError, RuntimeError):
    """An object was driven outside its allowed call sequence (e.g. stepping a
    finished episode)."""


class CheckpointError(LatentsrError, ValueError):
    """A parameter checkpoint is malformed or truncated."""


class PgmError(LatentsrError, ValueError):
    """Base class for PGM file problems."""


class PgmParseError(PgmError):
    """Malformed PGM data; carries the byte offset where parsing failed."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class PgmUnsupportedError(PgmError):
    """Structurally valid PGM that this package deliberately does not accept
    (only binary P5 with maxval 255 is supported)."""
