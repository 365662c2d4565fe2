from __future__ import annotations

from typing import Optional


class ScenarioError(ValueError):
    """
    Configuration problem in a scenario or instance file.
    Parse failures carry the 1-based line/column of the offending token.
    """
    def __init__(self, message: str, line: Optional[int] = None, column: Optional[int] = None):
        if line is not None:
            message = f"{message} (line {line}, column {column})"
        super().__init__(message)
        self.line = line
        self.column = column


class NumericalFailure(RuntimeError):
    """
    A solver could not produce a trustworthy number: stalled alternation,
    stiff ODE step, pivot cap reached.
    """
    def __init__(self, message: str, suggestion: Optional[str] = None):
        super().__init__(message)
        self.suggestion = suggestion
