"""Exception types shared across the package.

The CLI maps these onto process exit codes; everything else raises them
directly at the failing operation.
"""


class ShapeError(ValueError):
    """An array argument has the wrong dimensions."""


class LabelError(ValueError):
    """A class label lies outside the model's valid range."""


class StreamError(ValueError):
    """A task violates the incremental-stream contract (e.g. class gaps)."""


class SequencingError(RuntimeError):
    """An operation was called before its prerequisite step (e.g. memory
    not yet updated with new-task exemplars)."""


class MissingClassError(ValueError):
    """A seen class has no exemplars in memory."""


class DataFormatError(ValueError):
    """An input file is malformed; message carries the offending row."""


class ConfigError(ValueError):
    """An experiment configuration is invalid; message names the field."""


class NumericError(ArithmeticError):
    """A non-finite value (NaN/Inf) surfaced during computation."""
