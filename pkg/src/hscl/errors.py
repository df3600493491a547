"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Operand shapes incompatible with the requested operation."""


class DomainError(ValueError):
    """Input outside an operation's mathematical domain."""


class GraphStateError(RuntimeError):
    """Autodiff graph used in an invalid state (e.g. backward called twice)."""


class ConfigError(ValueError):
    """Invalid run, training, or generator configuration."""


class DatasetError(ValueError):
    """Malformed dataset file or inconsistent records."""


class CheckpointError(RuntimeError):
    """Base class for checkpoint persistence failures."""


class CheckpointIntegrityError(CheckpointError):
    """Checkpoint file is truncated or fails its checksum."""


class CheckpointVersionError(CheckpointError):
    """Checkpoint format version is not supported by this build."""


class TrainingAbort(RuntimeError):
    """Training stopped because the loss became non-finite."""
