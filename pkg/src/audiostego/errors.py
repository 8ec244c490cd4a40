"""Exception hierarchy shared by every module.

The CLI maps these onto exit codes, so each family stays distinct.
"""


class StegoError(Exception):
    """Base class for all package errors."""


class InputError(StegoError, ValueError):
    """Malformed or out-of-contract input data."""


class ConfigError(StegoError):
    """Bad configuration: missing/unknown keys, unknown plugin names."""


class DecompressionError(StegoError):
    """A decompressor plugin failed to turn features back into audio."""


class CapacityError(InputError):
    """Secret does not fit into the carrier the checkpoint was trained for."""


class PermissionDenied(StegoError):
    """Requested an access level without the weights for it."""


class TrainingError(StegoError):
    """Optimization produced a non-finite loss."""


class CheckpointError(StegoError):
    """Base class for checkpoint file problems."""


class CorruptHeaderError(CheckpointError):
    pass


class TruncatedPayloadError(CheckpointError):
    pass


class UnsupportedVersionError(CheckpointError):
    pass
