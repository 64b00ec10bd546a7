"""Exception hierarchy; the CLI maps each family to an exit code."""


class MtecError(Exception):
    """Base class for all toolkit errors."""


class ConfigError(MtecError, ValueError):
    """Invalid configuration or parameters (exit code 1)."""


class DataError(MtecError, ValueError):
    """Malformed or missing input data (exit code 2)."""


class ParseError(DataError):
    def __init__(self, message, line=None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class NumericalError(MtecError, ArithmeticError):
    """Non-finite values or divergence during computation (exit code 3)."""


class InfeasiblePlacementError(ConfigError):
    """Placement constraints cannot be satisfied for the given sizes."""
