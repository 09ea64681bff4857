"""Exception types raised across the package.

CLI exit codes are attached to the top-level classes so the harness can map
any raised error to the documented process status.
"""


class DecTrainError(Exception):
    exit_code = 1


class ConfigurationError(DecTrainError, ValueError):
    """Invalid configuration or environment spec; ``field`` names the culprit."""

    exit_code = 2

    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field


class TraceParseError(DecTrainError, ValueError):
    exit_code = 3

    def __init__(self, message, line=None):
        super().__init__(message)
        self.line = line


class SchemaError(DecTrainError, ValueError):
    exit_code = 3

    def __init__(self, message, field=None, line=None):
        super().__init__(message)
        self.field = field
        self.line = line


class StateError(DecTrainError, RuntimeError):
    """Checkpoint or snapshot does not match the target architecture."""

    exit_code = 2


class UndefinedRecoveryError(DecTrainError, ValueError):
    pass


class MissingBaselineError(DecTrainError, ValueError):
    exit_code = 4

    def __init__(self, message, baseline=None):
        super().__init__(message)
        self.baseline = baseline
