"""
Exception hierarchy shared by every subpackage.

Each failure mode named by the retrieval pipeline gets its own class so
callers (and the CLI) can tell a bad input file from a broken invariant
without parsing messages. Most classes also inherit the closest builtin
(``ValueError``, ``IndexError``, ...) so generic handlers keep working.
"""

from __future__ import annotations


class CSITError(Exception):
    """Base class for all errors raised by this package."""
    pass


class DimensionError(CSITError, ValueError):
    """Raised when tensor or vector shapes do not line up."""
    pass


class ContractError(CSITError, ValueError):
    """Raised when a documented precondition of an operation is violated."""
    pass


class DegenerateRowError(ContractError):
    """Raised when a softmax row has every entry masked out."""
    pass


class TargetIndexError(CSITError, IndexError):
    """Raised when a cross-entropy target falls outside the vocabulary."""
    pass


class ConfigurationError(CSITError, ValueError):
    """
    Raised when a configuration is invalid.

    All problems found during validation are collected in ``problems`` so a
    user sees every schema violation at once instead of fixing them one by
    one.
    """

    def __init__(self, problems: list[str] | str):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


class SchemaError(CSITError, ValueError):
    """
    Raised when an input record is malformed.

    Attributes:
        line: 1-based line number of the offending record, if known.
        field: Name of the missing or invalid field, if known.
    """

    def __init__(self, message: str, line: int | None = None, field: str | None = None):
        self.line = line
        self.field = field
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(prefix + message)


class InvariantError(SchemaError):
    """Raised when a well-formed record breaks a data invariant."""
    pass


class SampleRejectedError(CSITError):
    """Raised when a training sample cannot fit within max_seq_len."""
    pass


class NonFiniteLossError(CSITError, FloatingPointError):
    """Raised when training produces a NaN or infinite loss."""
    pass


class FormatError(CSITError, ValueError):
    """Raised when a binary checkpoint or index file is corrupt."""
    pass


class VersionMismatchError(FormatError):
    """Raised when a binary file was written by an incompatible format version."""
    pass


class EvaluationError(SchemaError):
    """Raised when a qrels or run file line cannot be parsed."""
    pass


class MissingRewriteError(CSITError, KeyError):
    """Raised when a query must be substituted but no human rewrite exists."""

    def __str__(self) -> str:
        return str(self.args[0]) if self.args else "missing human rewrite"


class ProviderError(CSITError):
    """Raised when the optional LLM provider cannot produce an answer."""
    pass
