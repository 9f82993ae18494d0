"""Exception hierarchy shared across the package."""

from __future__ import annotations


class PatchlabError(Exception):
    """Base class for all package errors."""


class InvalidDimensionError(PatchlabError, ValueError):
    """Zero or negative width/height where a positive extent is required."""


class InvalidInputError(PatchlabError, ValueError):
    """Arguments that violate an operation's contract."""


class DegenerateEmbeddingError(PatchlabError, ValueError):
    """A zero-norm vector where cosine similarity is undefined."""


class UndefinedBaselineError(PatchlabError, ZeroDivisionError):
    """A ratio metric whose self-attack denominator is zero."""


class UnknownArchitectureError(PatchlabError, KeyError):
    """Architecture id not present in a matrix or table."""


class TransportError(PatchlabError, ConnectionError):
    """Oracle endpoint unreachable or timing out after retries."""


class ProtocolError(PatchlabError, ValueError):
    """Oracle endpoint replied with a malformed or out-of-contract body."""


class OracleError(PatchlabError, RuntimeError):
    """An oracle evaluation failed; carries context about where."""


class MissingInputError(PatchlabError, FileNotFoundError):
    """Report/phase inputs absent on disk; message lists the missing paths."""


class ConfigError(PatchlabError, ValueError):
    """Malformed or unknown-keyed configuration document."""
