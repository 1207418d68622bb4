"""Exception hierarchy shared by the library and the command line."""


class SdfError(Exception):
    """Base class for all errors raised by sdfkit."""

    exit_code = 1


class ConfigError(SdfError, ValueError):
    """Invalid argument or configuration value."""

    exit_code = 2


class LoadError(SdfError):
    """Malformed or inconsistent input data."""

    exit_code = 3

    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        super().__init__(where + message)


class FitError(SdfError, ValueError):
    exit_code = 3


class PredictError(SdfError, ValueError):
    exit_code = 3


class MetricsError(SdfError, ValueError):
    exit_code = 3


class InvariantError(SdfError, RuntimeError):
    """An internal invariant was violated; this indicates a bug."""

    exit_code = 4
