"""Exception types shared across the package."""


class MkdsegError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(MkdsegError):
    """Invalid specification, hyperparameter, or incompatible inputs."""


class FormatError(MkdsegError):
    """Corrupt or inconsistent dataset / checkpoint file contents."""


class InputError(MkdsegError):
    """Runtime input violates an operation's contract (shape, range, class id)."""


class UsageError(MkdsegError):
    """Bad command line or config-file usage."""


class CheckpointError(MkdsegError):
    """Checkpoint file is truncated, version-mismatched, or fails verification."""


class TrainingDiverged(MkdsegError):
    """A training loss became non-finite; carries the offending term and iteration."""
