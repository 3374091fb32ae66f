"""Locating marker-delimited blocks inside free-form model output."""

from __future__ import annotations

from collections.abc import Sequence

from .ast import Marker
from .errors import BlockNotFound

_TAGS = {
    Marker.CODE_TAGS: ("<CODE>", "</CODE>"),
    Marker.SOLUTION_TAGS: ("<Code Solution>", "</Code Solution>"),
}

# Explicit tags are less ambiguous than fences, so they are tried first.
DEFAULT_MARKER_ORDER = (Marker.CODE_TAGS, Marker.SOLUTION_TAGS, Marker.FENCED)


def extract_block(text: str, markers: Sequence[Marker] = DEFAULT_MARKER_ORDER) -> str:
    """Return the innermost content of the first matching marker pair.

    Markers are tried in the given order; the first kind that matches wins.
    Leading and trailing blank lines of the content are trimmed. Raises
    BlockNotFound when no marker pair matches.
    """
    located = locate_block(text, markers)
    if located is None:
        raise BlockNotFound(f"no block delimited by any of {[m.value for m in markers]}")
    return located[2]


def locate_block(text: str, markers: Sequence[Marker] = DEFAULT_MARKER_ORDER):
    """Like extract_block but also reports which marker hit and where.

    Returns (marker, open_index, trimmed_content) or None. The open index is
    the offset of the opening delimiter, which is what callers use to split
    off the prose preceding a block.
    """
    for marker in markers:
        found = _try_marker(text, marker)
        if found is not None:
            open_index, content = found
            return marker, open_index, _trim_blank_lines(content)
    return None


def wrap_block(text: str, marker: Marker) -> str:
    """Wrap text in the marker's delimiters, one per line."""
    body = text.rstrip("\n")
    if marker is Marker.FENCED:
        return f"```\n{body}\n```"
    open_tag, close_tag = _TAGS[marker]
    return f"{open_tag}\n{body}\n{close_tag}"


def extract_tagged(text: str, open_tag: str, close_tag: str) -> str:
    """extract_block for an arbitrary tag pair (e.g. <PARAGRAPH>...</PARAGRAPH>)."""
    close_idx = text.find(close_tag)
    if close_idx == -1:
        raise BlockNotFound(f"no {open_tag}...{close_tag} block")
    open_idx = text.rfind(open_tag, 0, close_idx)
    if open_idx == -1:
        raise BlockNotFound(f"no {open_tag}...{close_tag} block")
    return _trim_blank_lines(text[open_idx + len(open_tag) : close_idx])


def _try_marker(text: str, marker: Marker) -> tuple[int, str] | None:
    if marker is Marker.FENCED:
        open_idx = text.find("```")
        if open_idx == -1:
            return None
        line_end = text.find("\n", open_idx + 3)
        if line_end == -1:
            return None
        close_idx = text.find("```", line_end + 1)
        if close_idx == -1:
            return None
        return open_idx, text[line_end + 1 : close_idx]

    open_tag, close_tag = _TAGS[marker]
    close_idx = text.find(close_tag)
    if close_idx == -1:
        return None
    open_idx = text.rfind(open_tag, 0, close_idx)
    if open_idx == -1:
        return None
    return open_idx, text[open_idx + len(open_tag) : close_idx]


def _trim_blank_lines(text: str) -> str:
    lines = text.split("\n")
    while lines and not lines[0].strip():
        lines.pop(0)
    while lines and not lines[-1].strip():
        lines.pop()
    return "\n".join(lines)
