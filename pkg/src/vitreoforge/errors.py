"""Exception types shared across the package."""


class VitreoForgeError(Exception):
    """Base class for all package errors."""


class InvalidInputError(VitreoForgeError, ValueError):
    """An argument violates an operation's precondition."""


class MalformedFileError(VitreoForgeError):
    """A file on disk does not conform to its declared format."""


class ConfigError(VitreoForgeError):
    """A run configuration is missing, malformed, or has unknown keys."""


class TrainingDivergedError(VitreoForgeError):
    """Training aborted because the loss became non-finite."""

    def __init__(self, step: int, loss: float, message: str = ""):
        self.step = step
        self.loss = loss
        super().__init__(
            f"non-finite loss {loss!r} at step {step}" + (f": {message}" if message else "")
        )
