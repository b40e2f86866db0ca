"""Exception types shared across the package.

The CLI maps these onto exit codes: ConfigError -> 2, DataError (and
subclasses) -> 3, CheckpointMismatchError -> 4.
"""


class UarError(Exception):
    pass


class ShapeError(UarError, ValueError):
    """Tensor operands have incompatible shapes."""


class NonFiniteError(UarError, FloatingPointError):
    """A NaN or Inf was produced where finite values are required."""


class SequenceTooShortError(UarError, ValueError):
    """A unit sequence is too short for the requested transformation."""


class ParameterError(UarError, ValueError):
    """A transformation parameter is outside its valid range."""


class ConfigError(UarError, ValueError):
    """Invalid or inconsistent run configuration."""


class DataError(UarError, ValueError):
    """Corpus-level problem: missing files, bad values, empty splits."""


class FormatError(DataError):
    """Malformed feature file or manifest; carries path and byte offset."""

    def __init__(self, message, path=None, offset=None):
        detail = message
        if path is not None:
            detail += f" [file: {path}"
            if offset is not None:
                detail += f", byte offset: {offset}"
            detail += "]"
        super().__init__(detail)
        self.path = path
        self.offset = offset


class CheckpointMismatchError(UarError, ValueError):
    """Checkpoint was produced under an incompatible configuration."""
