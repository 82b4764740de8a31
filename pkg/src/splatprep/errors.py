"""Exception hierarchy shared by every stage.

The CLI maps these onto exit codes: configuration problems exit 2, bad
input data exits 3, numeric or geometric degeneracy exits 4.
"""

from __future__ import annotations


class SplatPrepError(Exception):
    """Base class for all errors raised by this package."""

    exit_code = 1


class ConfigError(SplatPrepError):
    """Invalid configuration; carries one diagnostic string per problem."""

    exit_code = 2

    def __init__(self, diagnostics: list[str] | str):
        if isinstance(diagnostics, str):
            diagnostics = [diagnostics]
        self.diagnostics = list(diagnostics)
        super().__init__("; ".join(self.diagnostics))


class DataError(SplatPrepError):
    exit_code = 3


class FormatError(DataError):
    """A file or byte stream does not follow its declared layout.

    ``offset`` is a byte offset for binary inputs and ``line`` a 1-based
    line number for text inputs; at most one of them is set.
    """

    def __init__(self, message: str, *, source: str | None = None,
                 offset: int | None = None, line: int | None = None):
        self.source = source
        self.offset = offset
        self.line = line
        where = []
        if source:
            where.append(source)
        if offset is not None:
            where.append(f"byte offset {offset}")
        if line is not None:
            where.append(f"line {line}")
        prefix = f"{', '.join(where)}: " if where else ""
        super().__init__(prefix + message)


class DimensionMismatchError(DataError):
    pass


class NumericError(SplatPrepError):
    exit_code = 4


class DegenerateHullError(NumericError):
    """Input points span fewer than three dimensions."""

    def __init__(self, rank: int, message: str | None = None):
        self.rank = rank
        super().__init__(message or f"degenerate point set: affine rank {rank} < 3")
