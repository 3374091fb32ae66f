"""Prompt templates with `{name}` slots and `{#each list}...{/each}` expansion.

A template is plain text. `{name}` substitutes a bound string. An expansion
block repeats its body once per list element; inside the body, `{item}` is the
current element and `{i}` / `{i+1}` are the 0-based / 1-based position. The
`{#each name}` and `{/each}` tags must each stand alone on their own line, and
those tag lines are dropped from the rendered output, so the body's own line
structure controls the separator between items. `{{` and `}}` escape literal
braces.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

from .errors import ErrorKind, MaslError

IDENT_RE = re.compile(r"[a-z0-9][a-z0-9_]*\Z")
_SLOT_RE = re.compile(r"\{\{|\}\}|\{([^{}\n]*)\}|\{|\}")
_EACH_OPEN_RE = re.compile(r"\{#each ([a-z0-9][a-z0-9_]*)\}\Z")

LOCAL_SLOTS = ("item", "i", "i+1")


class UnresolvedPlaceholder(MaslError):
    def __init__(self, name: str):
        super().__init__(ErrorKind.UNRESOLVED_PLACEHOLDER, f"no binding for placeholder '{name}'")
        self.placeholder = name


@dataclass(frozen=True)
class _EachBlock:
    list_name: str
    body: str  # verbatim text between the tag lines, one trailing newline per line


@dataclass(frozen=True)
class PromptTemplate:
    """Immutable template text plus its derived placeholder sets."""

    text: str
    scalar_placeholders: tuple[str, ...] = field(init=False, compare=False)
    list_placeholders: tuple[str, ...] = field(init=False, compare=False)
    _parts: tuple = field(init=False, compare=False, repr=False)

    def __post_init__(self):
        for lineno, line in enumerate(self.text.split("\n"), start=1):
            if line.rstrip() == '"""':
                raise MaslError(
                    ErrorKind.SYNTAX, "template text cannot contain a bare triple-quote line", line=lineno
                )
        parts = _split_blocks(self.text)
        scalars: set[str] = set()
        lists: set[str] = set()
        for part in parts:
            if isinstance(part, _EachBlock):
                lists.add(part.list_name)
                for name in _scan_slots(part.body, line_offset=0):
                    if name not in LOCAL_SLOTS:
                        scalars.add(name)
            else:
                for name in _scan_slots(part, line_offset=0):
                    if name in LOCAL_SLOTS:
                        raise MaslError(
                            ErrorKind.SYNTAX,
                            f"'{{{name}}}' is only meaningful inside an {{#each}} block",
                        )
                    scalars.add(name)
        object.__setattr__(self, "scalar_placeholders", tuple(sorted(scalars)))
        object.__setattr__(self, "list_placeholders", tuple(sorted(lists)))
        object.__setattr__(self, "_parts", tuple(parts))

    @property
    def placeholders(self) -> tuple[str, ...]:
        """All names a caller must bind, scalar and list alike."""
        return tuple(sorted(set(self.scalar_placeholders) | set(self.list_placeholders)))

    def render(self, bindings: dict) -> str:
        """Substitute every slot; raises UnresolvedPlaceholder on a missing name."""
        out: list[str] = []
        for part in self._parts:
            if isinstance(part, _EachBlock):
                if part.list_name not in bindings:
                    raise UnresolvedPlaceholder(part.list_name)
                items = bindings[part.list_name]
                if not isinstance(items, (list, tuple)):
                    raise MaslError(
                        ErrorKind.KIND_MISMATCH,
                        f"placeholder '{part.list_name}' expands a list but was bound to text",
                    )
                for idx, item in enumerate(items):
                    local = dict(bindings)
                    local["item"] = str(item)
                    local["i"] = str(idx)
                    local["i+1"] = str(idx + 1)
                    out.append(_substitute(part.body, local))
            else:
                out.append(_substitute(part, bindings))
        return "".join(out)


def _scan_slots(text: str, line_offset: int):
    """Yield slot names in text, validating brace syntax."""
    names = []
    for lineno, line in enumerate(text.split("\n"), start=1 + line_offset):
        for m in _SLOT_RE.finditer(line):
            token = m.group(0)
            if token in ("{{", "}}"):
                continue
            if token in ("{", "}"):
                raise MaslError(
                    ErrorKind.SYNTAX,
                    "unbalanced brace in template text (use '{{' or '}}' for a literal brace)",
                    line=lineno,
                    col=m.start() + 1,
                )
            name = m.group(1)
            if name not in LOCAL_SLOTS and not IDENT_RE.match(name):
                raise MaslError(
                    ErrorKind.SYNTAX,
                    f"invalid placeholder name '{{{name}}}'",
                    line=lineno,
                    col=m.start() + 1,
                )
            names.append(name)
    return names


def _split_blocks(text: str) -> list:
    """Split template text into literal chunks and _EachBlocks.

    Tag lines are consumed together with their trailing newline, so a body
    written as lines between the tags renders with one trailing newline per
    line and nothing extra.
    """
    parts: list = []
    literal: list[str] = []
    lines = text.split("\n")
    i = 0
    while i < len(lines):
        stripped = lines[i].strip()
        open_match = _EACH_OPEN_RE.match(stripped)
        if open_match:
            depth_close = None
            for j in range(i + 1, len(lines)):
                inner = lines[j].strip()
                if _EACH_OPEN_RE.match(inner):
                    raise MaslError(ErrorKind.SYNTAX, "nested {#each} blocks are not supported", line=j + 1)
                if inner == "{/each}":
                    depth_close = j
                    break
            if depth_close is None:
                raise MaslError(ErrorKind.SYNTAX, "missing {/each}", line=i + 1)
            if literal:
                parts.append("".join(literal))
                literal = []
            body = "".join(line + "\n" for line in lines[i + 1 : depth_close])
            parts.append(_EachBlock(open_match.group(1), body))
            i = depth_close + 1
        else:
            if stripped == "{/each}":
                raise MaslError(ErrorKind.SYNTAX, "{/each} without a matching {#each}", line=i + 1)
            literal.append(lines[i] + "\n" if i < len(lines) - 1 else lines[i])
            i += 1
    if literal:
        parts.append("".join(literal))
    return parts


def _substitute(text: str, bindings: dict) -> str:
    def repl(m: re.Match) -> str:
        token = m.group(0)
        if token == "{{":
            return "{"
        if token == "}}":
            return "}"
        if token in ("{", "}"):
            return token
        name = m.group(1)
        if name not in bindings:
            raise UnresolvedPlaceholder(name)
        value = bindings[name]
        if isinstance(value, (list, tuple)):
            raise MaslError(
                ErrorKind.KIND_MISMATCH,
                f"placeholder '{name}' was bound to a list; only {{#each}} blocks accept lists",
            )
        return str(value)

    return _SLOT_RE.sub(repl, text)
