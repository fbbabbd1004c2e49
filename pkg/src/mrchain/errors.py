"""Exception hierarchy.

Every error carries the name of the module that raised it and, when the
problem can be traced to an input file, the offending line number. The
CLI maps :class:`ConvergenceError` to exit code 3 and every other
:class:`MRChainError` to exit code 2.
"""

from __future__ import annotations


class MRChainError(Exception):
    module = "mrchain"

    def __init__(self, message: str, line: int | None = None):
        self.message = message
        self.line = line
        super().__init__(str(self))

    def __str__(self) -> str:
        where = f" (line {self.line})" if self.line is not None else ""
        return f"[{self.module}]{where} {self.message}"


class GraphSpecError(MRChainError):
    """Malformed graph specification or an invalid chain graph."""

    module = "graph"


class DataError(MRChainError):
    """Bad contingency data: unknown variables, negative counts, zero margins."""

    module = "tables"


class ModelError(MRChainError):
    module = "model"


class ConvergenceError(MRChainError):
    """An iterative solver hit its iteration cap."""

    def __init__(self, message: str, module: str = "mlogit", iterations: int | None = None):
        self.module = module
        self.iterations = iterations
        super().__init__(message)
