"""Exception types shared across the package.

Every failure mode has a distinct class so callers (and tests) can match on
type instead of parsing messages.
"""


class MalariaNetError(Exception):
    """Base class for all package errors."""


class ShapeError(MalariaNetError):
    """Tensor shapes incompatible with an operation; names both shapes."""


class ArgumentError(MalariaNetError):
    """Invalid argument value (non-positive stride, rate >= 1, ...)."""


class DegenerateBatchError(MalariaNetError):
    """Batch statistics requested over fewer than two samples per channel."""


class NumericError(MalariaNetError):
    """NaN/Inf encountered where finite values are required."""


class GradTapeError(MalariaNetError):
    """Misuse of a gradient tape (non-scalar loss, double backward)."""


class DataError(MalariaNetError):
    """Dataset layout problems: missing class directory, empty dataset."""


class DecodeError(MalariaNetError):
    """Image bytes could not be decoded."""


class CheckpointError(MalariaNetError):
    """Base class for checkpoint file problems."""


class BadMagicError(CheckpointError):
    """File does not start with the checkpoint magic."""


class VersionError(CheckpointError):
    """Checkpoint format version is not supported."""


class TruncatedError(CheckpointError):
    """File ended before the declared payload."""


class CorruptPayloadError(CheckpointError):
    """Checksum mismatch: payload bytes differ from what was written."""


class TensorMismatchError(CheckpointError):
    """Checkpoint tensor names/shapes do not match the architecture."""


class NotFittedError(MalariaNetError):
    """Estimator method requiring a fitted model called before fit."""


class PayloadTooLargeError(MalariaNetError):
    """Uploaded image exceeds the service size limit."""


class ModelUnavailableError(MalariaNetError):
    """Prediction requested while no model is loaded."""
