"""Exception taxonomy shared by all pipeline stages.

The distinction between "malformed input" and "recognized LLVM that falls
outside the supported subset" is load-bearing: the CLI maps the two to
different exit codes and tests assert on it.
"""

from __future__ import annotations


class Ll2FunError(Exception):
    """Base class for all errors raised by this package."""


class LexError(Ll2FunError):
    def __init__(self, message: str, line: int, col: int):
        super().__init__(f"{line}:{col}: {message}")
        self.line = line
        self.col = col


class ParseError(Ll2FunError):
    """Malformed .ll input (bad syntax, arity violations, duplicate names)."""

    def __init__(self, message: str, line: int | None = None, col: int | None = None):
        loc = f"{line}:{col}: " if line is not None else ""
        super().__init__(loc + message)
        self.line = line
        self.col = col


class UnsupportedConstructError(ParseError):
    """Syntactically recognizable LLVM that the supported subset excludes."""


class AnalysisError(Ll2FunError):
    """CFG / liveness / loop-structure rejection with a diagnostic."""


class LoadError(Ll2FunError):
    """Malformed or out-of-shape .fun program text."""


class EvalFault(Ll2FunError):
    """Runtime fault during concrete execution (bad address, broken frame
    bracket, ...). `context` carries the def name and step count when the
    evaluator can attach them."""

    def __init__(self, message: str, context: str | None = None):
        super().__init__(message if context is None else f"{message} [{context}]")
        self.context = context


class SignatureViolation(EvalFault):
    """A def received or produced a value outside its declared kind."""


class BudgetExhausted(Ll2FunError):
    """Configured step budget ran out; carries per-loop iteration counts."""

    def __init__(self, message: str, counts: dict[str, int] | None = None):
        super().__init__(message)
        self.counts = dict(counts or {})
