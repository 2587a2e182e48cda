"""Exception hierarchy shared by every tcaq subpackage.

Each family carries the process exit code the CLI reports when an error of
that family escapes a command.
"""


class TcaqError(Exception):
    """Base exception for all pipeline errors."""
    exit_code = 1


class ConfigError(TcaqError):
    """Raised when a configuration value or flag is invalid."""
    exit_code = 2


class NumericalError(TcaqError):
    """Raised when a computation produces NaN or Inf."""
    exit_code = 3


class MissingArtifactError(TcaqError):
    """Raised when a command needs an artifact an earlier command produces."""
    exit_code = 4

    def __init__(self, artifact: str, producer: str):
        self.artifact = artifact
        self.producer = producer
        super().__init__(
            f"Missing artifact '{artifact}'; run the '{producer}' command first"
        )
