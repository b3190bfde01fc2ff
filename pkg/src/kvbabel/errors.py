"""Exception types shared across the library."""


class KvBabelError(Exception):
    """Base class for all library errors."""


class ShapeError(KvBabelError, ValueError):
    """Tensor dimensions are incompatible with the requested operation."""


class ConfigError(KvBabelError, ValueError):
    """A configuration object violates one of its invariants."""


class InputError(KvBabelError, ValueError):
    """Runtime input (tokens, splits, masks) is out of contract."""


class ContractError(KvBabelError, RuntimeError):
    """A caller broke an API precondition that is not a pure shape issue."""


class NumericError(KvBabelError, ArithmeticError):
    """A non-finite value appeared where finiteness is required."""


class TrainingAborted(KvBabelError, RuntimeError):
    """Training hit a non-finite loss; message carries step diagnostics."""


class CheckpointError(KvBabelError, IOError):
    """Base class for checkpoint read/write failures."""


class CorruptCheckpointError(CheckpointError):
    """Checkpoint bytes fail hash verification or are truncated."""


class UnsupportedVersionError(CheckpointError):
    """Checkpoint was written by an incompatible format version."""


class UnsupportedPairError(KvBabelError, ValueError):
    """A translation baseline cannot serve this (source, target) model pair."""
