"""Exception hierarchy shared by every drltrade module.

Each class carries a short ``category`` string; the CLI prints it as the
first token of its one-line error report and maps it to an exit code.
"""

from __future__ import annotations


class DrlTradeError(Exception):
    category = "error"
    exit_code = 1


class ShapeError(DrlTradeError, ValueError):
    """Operand shapes are incompatible."""

    category = "shape"
    exit_code = 4

    def __init__(self, message: str, *shapes: tuple) -> None:
        self.shapes = tuple(tuple(s) for s in shapes)
        if shapes:
            message = f"{message} (shapes: {', '.join(str(tuple(s)) for s in shapes)})"
        super().__init__(message)


class NonFiniteError(DrlTradeError, FloatingPointError):
    """A NaN or Inf showed up where only finite values are allowed."""

    category = "nonfinite"
    exit_code = 5

    def __init__(self, message: str, name: str | None = None) -> None:
        self.name = name
        if name is not None:
            message = f"{message}: {name}"
        super().__init__(message)


class ModeError(DrlTradeError, RuntimeError):
    category = "mode"
    exit_code = 1


class ConfigError(DrlTradeError, ValueError):
    category = "config"
    exit_code = 2


class DataError(DrlTradeError, ValueError):
    """Malformed market data. ``row`` is 1-based and counts the header line."""

    category = "data"
    exit_code = 3

    def __init__(self, message: str, row: int | None = None, path: str | None = None) -> None:
        self.row = row
        self.path = path
        where = []
        if path is not None:
            where.append(str(path))
        if row is not None:
            where.append(f"row {row}")
        if where:
            message = f"{':'.join(where)}: {message}"
        super().__init__(message)


class ArchitectureError(DrlTradeError, ValueError):
    """The network stack cannot be built for the requested input."""

    category = "architecture"
    exit_code = 4

    def __init__(self, message: str, layer: str | None = None) -> None:
        self.layer = layer
        if layer is not None:
            message = f"layer {layer}: {message}"
        super().__init__(message)


class EnvError(DrlTradeError, RuntimeError):
    category = "env"
    exit_code = 1
