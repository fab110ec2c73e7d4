"""Exception types shared across the package."""


class SpecError(ValueError):
    """Invalid model specification (unknown kind, zero width, bad shape)."""


class ShapeMismatchError(ValueError):
    """Parameter vector or tensor does not match the expected manifest."""


class DataFormatError(ValueError):
    """Malformed dataset file (bad magic, truncated payload, count mismatch)."""


class ConfigError(ValueError):
    """Invalid or unknown experiment configuration content."""


class TrainingDivergedError(RuntimeError):
    """Loss became non-finite during training."""


class DegenerateDirectionError(ValueError):
    """Start and end states coincide; the line direction is undefined."""


class CheckpointError(Exception):
    """Base class for checkpoint file problems."""


class CheckpointMagicError(CheckpointError):
    """File does not start with the checkpoint magic bytes."""


class CheckpointVersionError(CheckpointError):
    """Checkpoint format version is not supported."""


class CheckpointCRCError(CheckpointError):
    """Stored CRC does not match the file contents."""


class CheckpointIntegrityError(CheckpointError):
    """Internally inconsistent checkpoint (manifest/spec/payload disagree)."""


class ExperimentStateError(RuntimeError):
    """Experiment directory is missing stages or belongs to another config."""
