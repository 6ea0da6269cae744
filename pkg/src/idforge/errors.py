"""Exception hierarchy. Each class carries the process exit code the CLI uses."""


class IdforgeError(Exception):
    exit_code = 1


class ConfigError(IdforgeError, ValueError):
    """Invalid configuration value or precondition violation."""

    exit_code = 2


class ParseError(ConfigError):
    """Malformed input file. ``location`` names the line or byte offset."""

    def __init__(self, message, path=None, location=None):
        parts = [str(p) for p in (path, location) if p is not None]
        prefix = ":".join(parts) + ": " if parts else ""
        super().__init__(prefix + message)
        self.path = path
        self.location = location


class DimensionError(ConfigError):
    exit_code = 2


class NumericalError(IdforgeError, ArithmeticError):
    exit_code = 3


class LayoutError(IdforgeError):
    exit_code = 4
