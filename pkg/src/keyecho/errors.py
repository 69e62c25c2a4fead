"""Exception types shared across the toolkit.

The CLI maps these onto exit codes: ConfigError -> 2, DataError (and
subclasses) -> 3, everything else -> 4.
"""


class KeyechoError(Exception):
    """Base class for all toolkit errors."""


class ConfigError(KeyechoError):
    """Invalid configuration file, flag combination, or hyperparameter."""


class DataError(KeyechoError):
    """Missing or malformed input data or upstream pipeline artifact."""


class SchemaError(DataError):
    """Session metadata document fails schema validation."""


class AlignmentError(KeyechoError):
    """Cross-correlation alignment failed; recordings look unrelated."""


class CheckpointError(KeyechoError):
    """Checkpoint cannot be read, or is incompatible with the config."""


class DecodeError(KeyechoError):
    """Beam decoding failed (empty candidate step or scorer failure)."""


class TrainingDivergedError(KeyechoError):
    """Training loss went non-finite; carries the last finite state."""

    def __init__(self, message: str, last_finite_epoch: int | None = None,
                 checkpoint_path: str | None = None):
        super().__init__(message)
        self.last_finite_epoch = last_finite_epoch
        self.checkpoint_path = checkpoint_path
