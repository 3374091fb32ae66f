"""MASL: a small, statically checkable workflow language for multi-agent systems."""

from .ast import (
    BRANCH_VAR,
    MAX_FANOUT,
    MAX_ROUNDS,
    QUERY_VAR,
    ExecCode,
    ExtractBlock,
    FanOut,
    LlmCall,
    Loop,
    Marker,
    MasProgram,
    Render,
    Return,
    Step,
)
from .blocks import DEFAULT_MARKER_ORDER, extract_block, extract_tagged, locate_block, wrap_block
from .errors import BlockNotFound, ErrorKind, MaslError
from .parser import parse_file, parse_mas
from .serializer import fingerprint, serialize
from .templates import PromptTemplate, UnresolvedPlaceholder

__all__ = [
    "BRANCH_VAR",
    "BlockNotFound",
    "DEFAULT_MARKER_ORDER",
    "ErrorKind",
    "ExecCode",
    "ExtractBlock",
    "FanOut",
    "LlmCall",
    "Loop",
    "MAX_FANOUT",
    "MAX_ROUNDS",
    "Marker",
    "MasProgram",
    "MaslError",
    "PromptTemplate",
    "QUERY_VAR",
    "Render",
    "Return",
    "Step",
    "UnresolvedPlaceholder",
    "extract_block",
    "extract_tagged",
    "fingerprint",
    "locate_block",
    "parse_file",
    "parse_mas",
    "serialize",
    "wrap_block",
]
