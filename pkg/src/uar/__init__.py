"""Desk-scale laboratory for unintentional-action recognition.

The pieces, bottom to top: autodiff (float64 reverse-mode tensors),
transforms (temporal pretext transformations), encoder (sliding-window
transformer for frames and clips), crf (linear-chain head over per-clip
emissions), data (feature files, clip windows, synthetic corpora),
pipeline (three-stage training), tasks (classification, localization,
anticipation), cli (the `uar` command).
"""

__version__ = "0.1.0"

from .errors import (CheckpointMismatchError, ConfigError, DataError,
                     FormatError, NonFiniteError, ParameterError,
                     SequenceTooShortError, ShapeError, UarError)

__all__ = [
    "__version__",
    "UarError", "ShapeError", "NonFiniteError", "SequenceTooShortError",
    "ParameterError", "ConfigError", "DataError", "FormatError",
    "CheckpointMismatchError",
]
