"""
Exception families. The CLI maps each family to an exit code.
"""

from __future__ import annotations


class NetalignError(Exception):
    """Base class for every error raised on purpose by this package."""


class ConfigError(NetalignError, ValueError):
    def __init__(self, message: str, key: str | None = None) -> None:
        super().__init__(message)
        self.key = key


class DataError(NetalignError, ValueError):
    pass


class ParseError(DataError):
    def __init__(self, message: str, path: str | None = None, line: int | None = None) -> None:
        where = f"{path}:{line}: " if path and line else (f"line {line}: " if line else "")
        super().__init__(where + message)
        self.path = path
        self.line = line


class RangeError(DataError):
    pass


class ShapeError(DataError):
    pass


class CheckpointError(DataError):
    pass


class NumericalError(NetalignError, ArithmeticError):
    pass


class ConvergenceError(NumericalError):
    def __init__(self, message: str, residual: float, iterations: int) -> None:
        super().__init__(f"{message} (residual={residual:.3e}, iterations={iterations})")
        self.residual = residual
        self.iterations = iterations


class DivergenceError(NumericalError):
    def __init__(self, message: str, previous: float, current: float) -> None:
        super().__init__(f"{message} ({previous:.12g} -> {current:.12g})")
        self.previous = previous
        self.current = current


class NonFiniteError(NumericalError):
    pass


class LambdaUndefinedError(NumericalError):
    """Closed-form threshold has a zero denominator; callers keep the previous value."""


EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERICAL = 4


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, ConfigError):
        return EXIT_CONFIG
    if isinstance(exc, DataError):
        return EXIT_DATA
    if isinstance(exc, NumericalError):
        return EXIT_NUMERICAL
    return 1
