"""Exception types shared across the package."""


class LoopTopoError(Exception):
    """Base class for all package errors."""


class ValidationError(LoopTopoError):
    """Invalid parameter values or configuration."""


class ParseError(LoopTopoError):
    """Malformed text input; carries file position where possible."""

    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        loc = ""
        if path is not None:
            loc = f"{path}"
            if line is not None:
                loc += f":{line}"
            loc = f" ({loc})"
        super().__init__(f"{message}{loc}")


class FormatVersionError(LoopTopoError):
    """On-disk format version is not supported by this build."""


class ChecksumError(LoopTopoError):
    """Stored checksum does not match the file contents."""


class TrainingDivergedError(LoopTopoError):
    """Non-finite loss encountered during optimization."""
