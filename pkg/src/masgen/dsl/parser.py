"""Parser and validator for MASL source text.

Syntax summary (see docs/masl_reference.md for the full reference):

    mas <name>

    prompt <name> \"\"\"
    ...template text...
    \"\"\"

    call <out> = <template>(<placeholder>=<var>, ...) [role=<tag>] [temp=<t>]
    render <out> = <template>(<placeholder>=<var>, ...)
    extract <out> = <var> marker=<CODE_TAGS|SOLUTION_TAGS|FENCED>
    exec <out> = <var> timeout=<seconds>
    fanout <out> count=<n>:
      <body...>
    loop <carry> rounds=<n>:
      <body...>
    return <var>

Comments start with '#' outside prompt bodies; blank lines are ignored.
Bodies are indented with spaces (tabs are rejected). Validation guarantees
every invariant the runtime relies on: variables defined before use, bindings
covering exactly the referenced template's placeholders, static fan-out and
loop bounds, and a single trailing return.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from .ast import (
    BRANCH_VAR,
    MAX_FANOUT,
    MAX_ROUNDS,
    QUERY_VAR,
    RESERVED_NAMES,
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
from .errors import ErrorKind, MaslError
from .templates import IDENT_RE, PromptTemplate

_IDENT = r"[a-z0-9][a-z0-9_]*"
_NUM = r"\d+(?:\.\d+)?"

# Regexes run against normalized text: single spaces, none around '='.
_HEADER_RE = re.compile(rf"mas ({_IDENT})\Z")
_PROMPT_RE = re.compile(rf'prompt ({_IDENT}) """\Z')
_CALL_RE = re.compile(rf"call ({_IDENT})=({_IDENT})\((.*)\)(?: role=({_IDENT}))?(?: temp=({_NUM}))?\Z")
_RENDER_RE = re.compile(rf"render ({_IDENT})=({_IDENT})\((.*)\)\Z")
_EXTRACT_RE = re.compile(rf"extract ({_IDENT})=({_IDENT}) marker=(\w+)\Z")
_EXEC_RE = re.compile(rf"exec ({_IDENT})=({_IDENT}) timeout=({_NUM})\Z")
_FANOUT_RE = re.compile(rf"fanout ({_IDENT}) count=(\d+):\Z")
_LOOP_RE = re.compile(rf"loop ({_IDENT}) rounds=(\d+):\Z")
_RETURN_RE = re.compile(rf"return ({_IDENT})\Z")
_BINDING_RE = re.compile(rf"({_IDENT})=({_IDENT})\Z")

_STEP_KEYWORDS = ("call", "render", "extract", "exec", "fanout", "loop", "return")

_SCALAR = "text"
_LIST = "list"


@dataclass
class _Line:
    number: int
    indent: int  # -1 marks verbatim prompt-body lines
    text: str


def parse_mas(text: str) -> MasProgram:
    """Parse MASL source into a validated MasProgram.

    Raises MaslError with a specific ErrorKind, line, and column on any
    syntactic or semantic violation.
    """
    lines = _significant_lines(text)
    if not lines:
        raise MaslError(ErrorKind.SYNTAX, "empty program", line=1)

    header = lines[0]
    if header.indent != 0:
        raise MaslError(ErrorKind.SYNTAX, "unexpected indentation", line=header.number, col=1)
    m = _HEADER_RE.match(_normalize(header.text))
    if not m:
        raise MaslError(ErrorKind.SYNTAX, "program must start with 'mas <name>'", line=header.number)
    name = m.group(1)

    prompts: dict[str, PromptTemplate] = {}
    lineno_of: dict[int, int] = {}
    steps, stop = _parse_block(lines, 1, indent=0, prompts=prompts, lineno_of=lineno_of, top_level=True)
    if stop != len(lines):
        stray = lines[stop]
        raise MaslError(ErrorKind.SYNTAX, "unexpected indentation", line=stray.number, col=stray.indent + 1)

    _validate(prompts, steps, lineno_of)
    return MasProgram(name=name, prompts=prompts, steps=tuple(steps))


def parse_file(path) -> MasProgram:
    with open(path, encoding="utf-8") as handle:
        return parse_mas(handle.read())


def _significant_lines(text: str) -> list[_Line]:
    """Split source into lines, keeping prompt bodies verbatim.

    A prompt body runs from a ``prompt x \"\"\"`` line to a line that is
    exactly ``\"\"\"``; within it nothing is stripped and '#' is literal text.
    """
    out: list[_Line] = []
    raw = text.replace("\r\n", "\n").replace("\r", "\n").split("\n")
    in_prompt = False
    for number, line in enumerate(raw, start=1):
        if in_prompt:
            out.append(_Line(number, -1, line))
            if line.rstrip() == '"""':
                in_prompt = False
            continue
        leading = line[: len(line) - len(line.lstrip())]
        if "\t" in leading:
            raise MaslError(ErrorKind.SYNTAX, "tabs are not allowed in indentation", line=number)
        content = line.split("#", 1)[0].rstrip()
        if not content.strip():
            continue
        indent = len(content) - len(content.lstrip(" "))
        stripped = content.strip()
        out.append(_Line(number, indent, stripped))
        if _PROMPT_RE.match(_normalize(stripped)):
            in_prompt = True
    if in_prompt:
        raise MaslError(ErrorKind.SYNTAX, 'unterminated prompt body (missing closing \'"""\')', line=len(raw))
    return out


def _normalize(text: str) -> str:
    """Collapse space runs and drop spaces around '=' so one regex form fits."""
    text = re.sub(r" +", " ", text)
    return re.sub(r" ?= ?", "=", text)


def _parse_block(lines, index, indent, prompts, lineno_of, top_level):
    steps: list[Step] = []
    while index < len(lines):
        line = lines[index]
        if line.indent < indent:
            break
        if line.indent > indent:
            raise MaslError(ErrorKind.SYNTAX, "unexpected indentation", line=line.number, col=line.indent + 1)

        text = _normalize(line.text)
        first = re.match(r"[a-z]+", text)
        keyword = first.group(0) if first else ""

        if keyword == "prompt":
            if not top_level:
                raise MaslError(ErrorKind.SYNTAX, "prompts must be defined at the top level", line=line.number)
            index = _parse_prompt(lines, index, prompts)
            continue
        if keyword == "mas":
            raise MaslError(ErrorKind.SYNTAX, "duplicate 'mas' header", line=line.number)
        if keyword not in _STEP_KEYWORDS:
            raise MaslError(
                ErrorKind.UNKNOWN_STEP_KIND,
                f"unknown step kind '{line.text.split()[0]}'",
                line=line.number,
                col=line.indent + 1,
            )

        step, index = _parse_step(lines, index, indent, keyword, text, prompts, lineno_of)
        lineno_of[id(step)] = line.number
        steps.append(step)
    return steps, index


def _parse_prompt(lines, index, prompts):
    line = lines[index]
    m = _PROMPT_RE.match(_normalize(line.text))
    if not m:
        raise MaslError(ErrorKind.SYNTAX, 'expected: prompt <name> """', line=line.number)
    name = m.group(1)
    if name in prompts:
        raise MaslError(ErrorKind.DUPLICATE_PROMPT, f"prompt '{name}' is defined twice", line=line.number)

    body: list[str] = []
    index += 1
    while lines[index].text.rstrip() != '"""':
        body.append(lines[index].text)
        index += 1
    try:
        prompts[name] = PromptTemplate("\n".join(body))
    except MaslError as err:
        raise MaslError(err.kind, f"in prompt '{name}': {err}", line=line.number) from err
    return index + 1


def _parse_step(lines, index, indent, keyword, text, prompts, lineno_of):
    line = lines[index]

    if keyword == "call":
        m = _CALL_RE.match(text)
        if not m:
            raise MaslError(
                ErrorKind.SYNTAX,
                "expected: call <out> = <template>(<bindings>) [role=..] [temp=..]",
                line=line.number,
            )
        out, template, args, role, temp = m.groups()
        step = LlmCall(
            out=out,
            template=template,
            bindings=_parse_bindings(args, line.number),
            role_tag=role or template,
            temperature=float(temp) if temp is not None else None,
        )
        return step, index + 1

    if keyword == "render":
        m = _RENDER_RE.match(text)
        if not m:
            raise MaslError(ErrorKind.SYNTAX, "expected: render <out> = <template>(<bindings>)", line=line.number)
        out, template, args = m.groups()
        return Render(out=out, template=template, bindings=_parse_bindings(args, line.number)), index + 1

    if keyword == "extract":
        m = _EXTRACT_RE.match(text)
        if not m:
            raise MaslError(ErrorKind.SYNTAX, "expected: extract <out> = <var> marker=<MARKER>", line=line.number)
        out, source, marker = m.groups()
        try:
            marker_value = Marker(marker)
        except ValueError:
            raise MaslError(
                ErrorKind.INVALID_VALUE,
                f"unknown marker '{marker}' (expected CODE_TAGS, SOLUTION_TAGS, or FENCED)",
                line=line.number,
            ) from None
        return ExtractBlock(out=out, source=source, marker=marker_value), index + 1

    if keyword == "exec":
        m = _EXEC_RE.match(text)
        if not m:
            raise MaslError(ErrorKind.SYNTAX, "expected: exec <out> = <var> timeout=<seconds>", line=line.number)
        out, code, timeout = m.groups()
        timeout_s = float(timeout)
        if timeout_s <= 0:
            raise MaslError(ErrorKind.INVALID_VALUE, "timeout must be positive", line=line.number)
        return ExecCode(out=out, code=code, timeout_s=timeout_s), index + 1

    if keyword == "return":
        m = _RETURN_RE.match(text)
        if not m:
            raise MaslError(ErrorKind.SYNTAX, "expected: return <var>", line=line.number)
        return Return(var=m.group(1)), index + 1

    if keyword == "fanout":
        m = _FANOUT_RE.match(text)
        if not m:
            raise MaslError(ErrorKind.SYNTAX, "expected: fanout <out> count=<n>:", line=line.number)
        out, count = m.group(1), int(m.group(2))
        if not 1 <= count <= MAX_FANOUT:
            raise MaslError(
                ErrorKind.LIMIT_EXCEEDED, f"fanout count must be between 1 and {MAX_FANOUT}", line=line.number
            )
        body, index = _parse_body(lines, index, indent, prompts, lineno_of)
        return FanOut(out=out, count=count, body=tuple(body)), index

    m = _LOOP_RE.match(text)
    if not m:
        raise MaslError(ErrorKind.SYNTAX, "expected: loop <carry> rounds=<n>:", line=line.number)
    carry, rounds = m.group(1), int(m.group(2))
    if not 1 <= rounds <= MAX_ROUNDS:
        raise MaslError(ErrorKind.LIMIT_EXCEEDED, f"loop rounds must be between 1 and {MAX_ROUNDS}", line=line.number)
    body, index = _parse_body(lines, index, indent, prompts, lineno_of)
    return Loop(carry=carry, rounds=rounds, body=tuple(body)), index


def _parse_body(lines, index, indent, prompts, lineno_of):
    header = lines[index]
    index += 1
    if index >= len(lines) or lines[index].indent <= indent:
        raise MaslError(ErrorKind.EMPTY_BODY, "block body is empty", line=header.number)
    body_indent = lines[index].indent
    return _parse_block(lines, index, body_indent, prompts, lineno_of, top_level=False)


def _parse_bindings(args: str, lineno: int) -> dict[str, str]:
    bindings: dict[str, str] = {}
    args = args.strip()
    if not args:
        return bindings
    for part in args.split(","):
        m = _BINDING_RE.match(part.strip())
        if not m:
            raise MaslError(ErrorKind.SYNTAX, f"malformed binding '{part.strip()}'", line=lineno)
        placeholder, var = m.groups()
        if placeholder in bindings:
            raise MaslError(ErrorKind.SYNTAX, f"placeholder '{placeholder}' bound twice", line=lineno)
        bindings[placeholder] = var
    return bindings


def _validate(prompts, steps, lineno_of):
    if not any(isinstance(s, Return) for s in steps):
        raise MaslError(ErrorKind.MISSING_RETURN, "program has no return step", line=max(lineno_of.values(), default=1))
    _check_block(steps, {QUERY_VAR: _SCALAR}, prompts, lineno_of, top_level=True, loop_carry=None)


def _check_block(steps, scope, prompts, lineno_of, top_level, loop_carry):
    """Walk one step sequence, extending ``scope`` (name -> kind) in place."""
    for position, step in enumerate(steps):
        lineno = lineno_of.get(id(step), 0)

        if isinstance(step, Return):
            if not top_level:
                raise MaslError(ErrorKind.MISPLACED_RETURN, "return is only allowed at the top level", line=lineno)
            if position != len(steps) - 1:
                raise MaslError(ErrorKind.MISPLACED_RETURN, "return must be the final step", line=lineno)
            _require(step.var, scope, _SCALAR, lineno)
            continue

        if top_level and position == len(steps) - 1:
            raise MaslError(ErrorKind.MISSING_RETURN, "final step must be a return", line=lineno)

        if isinstance(step, (LlmCall, Render)):
            template = prompts.get(step.template)
            if template is None:
                raise MaslError(ErrorKind.UNKNOWN_TEMPLATE, f"no prompt named '{step.template}'", line=lineno)
            wanted_scalars = set(template.scalar_placeholders)
            wanted_lists = set(template.list_placeholders)
            missing = sorted((wanted_scalars | wanted_lists) - set(step.bindings))
            if missing:
                raise MaslError(
                    ErrorKind.UNRESOLVED_PLACEHOLDER,
                    f"template '{step.template}' placeholder '{missing[0]}' has no binding",
                    line=lineno,
                )
            extra = sorted(set(step.bindings) - (wanted_scalars | wanted_lists))
            if extra:
                raise MaslError(
                    ErrorKind.UNKNOWN_PLACEHOLDER,
                    f"template '{step.template}' has no placeholder '{extra[0]}'",
                    line=lineno,
                )
            for placeholder, var in sorted(step.bindings.items()):
                kind = _LIST if placeholder in wanted_lists else _SCALAR
                _require(var, scope, kind, lineno)
            _define(step.out, _SCALAR, scope, lineno, loop_carry)

        elif isinstance(step, ExtractBlock):
            _require(step.source, scope, _SCALAR, lineno)
            _define(step.out, _SCALAR, scope, lineno, loop_carry)

        elif isinstance(step, ExecCode):
            _require(step.code, scope, _SCALAR, lineno)
            _define(step.out, _SCALAR, scope, lineno, loop_carry)

        elif isinstance(step, FanOut):
            inner = dict(scope)
            inner[BRANCH_VAR] = _SCALAR
            _check_block(step.body, inner, prompts, lineno_of, top_level=False, loop_carry=None)
            last = step.body[-1]
            if not hasattr(last, "out") or inner.get(last.out) != _SCALAR:
                raise MaslError(
                    ErrorKind.KIND_MISMATCH,
                    "each fan-out branch must end with a step producing a single text value",
                    line=lineno_of.get(id(last), lineno),
                )
            _define(step.out, _LIST, scope, lineno, loop_carry)

        elif isinstance(step, Loop):
            _require(step.carry, scope, _SCALAR, lineno)
            inner = dict(scope)
            _check_block(step.body, inner, prompts, lineno_of, top_level=False, loop_carry=step.carry)


def _require(var, scope, kind, lineno):
    if var not in scope:
        raise MaslError(ErrorKind.UNDEFINED_VARIABLE, f"variable '{var}' is not defined here", line=lineno)
    if scope[var] != kind:
        holds = "a list" if scope[var] == _LIST else "text"
        raise MaslError(ErrorKind.KIND_MISMATCH, f"variable '{var}' holds {holds}, which does not fit here", line=lineno)


def _define(out, kind, scope, lineno, loop_carry):
    if out in RESERVED_NAMES:
        raise MaslError(ErrorKind.RESERVED_NAME, f"'{out}' is reserved and cannot be assigned", line=lineno)
    if out in scope and out != loop_carry:
        raise MaslError(ErrorKind.DUPLICATE_VARIABLE, f"variable '{out}' is already defined", line=lineno)
    if out == loop_carry and kind != _SCALAR:
        raise MaslError(ErrorKind.KIND_MISMATCH, "loop carry must stay a single text value", line=lineno)
    scope[out] = kind


def is_identifier(name: str) -> bool:
    return bool(IDENT_RE.match(name))
