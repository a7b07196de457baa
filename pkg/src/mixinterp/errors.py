"""Exception types shared across the toolkit, mapped to CLI exit codes."""


class InvalidArgumentError(ValueError):
    """An argument violates a documented precondition."""


class ConfigError(Exception):
    """Malformed or unknown configuration keys/values. Exit code 2."""


class MissingArtifactError(Exception):
    """A required checkpoint/record/corpus file does not exist. Exit code 3."""


class TrainingFailure(Exception):
    """Non-finite loss during training; carries the epoch index."""

    def __init__(self, message: str, epoch: int):
        super().__init__(message)
        self.epoch = epoch


class AttributionFailure(Exception):
    """Non-finite loss during attribution optimization. Exit code 4."""
