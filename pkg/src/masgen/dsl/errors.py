"""Error types for parsing and validating MASL programs."""

from __future__ import annotations

import enum


class ErrorKind(enum.Enum):
    SYNTAX = "syntax"
    UNKNOWN_STEP_KIND = "unknown_step_kind"
    UNDEFINED_VARIABLE = "undefined_variable"
    UNRESOLVED_PLACEHOLDER = "unresolved_placeholder"
    UNKNOWN_PLACEHOLDER = "unknown_placeholder"
    DUPLICATE_VARIABLE = "duplicate_variable"
    DUPLICATE_PROMPT = "duplicate_prompt"
    UNKNOWN_TEMPLATE = "unknown_template"
    RESERVED_NAME = "reserved_name"
    KIND_MISMATCH = "kind_mismatch"
    LIMIT_EXCEEDED = "limit_exceeded"
    MISSING_RETURN = "missing_return"
    MISPLACED_RETURN = "misplaced_return"
    EMPTY_BODY = "empty_body"
    INVALID_VALUE = "invalid_value"


class MaslError(Exception):
    """A MASL program failed to parse or validate.

    Carries the violation kind plus a 1-based line and column so callers can
    point at the offending source.
    """

    def __init__(self, kind: ErrorKind, message: str, line: int = 0, col: int = 0):
        self.kind = kind
        self.line = line
        self.col = col
        super().__init__(f"{kind.value} at line {line}: {message}" if line else f"{kind.value}: {message}")


class BlockNotFound(Exception):
    """No marker-delimited block was found in the given text."""
