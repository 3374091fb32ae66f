"""Canonical text form and content fingerprint for MASL programs.

The canonical form is what fingerprints, deduplication, and training exports
all operate on: prompts sorted by name, bindings sorted by placeholder, fixed
spacing and two-space body indentation, one trailing newline. Parsing the
canonical text yields a structurally equal program.
"""

from __future__ import annotations

import hashlib

from .ast import ExecCode, ExtractBlock, FanOut, LlmCall, Loop, MasProgram, Render, Return


def serialize(program: MasProgram) -> str:
    """Render the canonical text of a valid program (deterministic)."""
    chunks: list[str] = [f"mas {program.name}", ""]
    for name in sorted(program.prompts):
        text = program.prompts[name].text
        body = text + "\n" if text else "\n"
        chunks.append(f'prompt {name} """\n{body}"""')
        chunks.append("")
    for step in program.steps:
        chunks.extend(_step_lines(step, 0))
    return "\n".join(chunks) + "\n"


def fingerprint(program: MasProgram) -> str:
    """256-bit content identity: equal iff the canonical texts are equal."""
    return hashlib.sha256(serialize(program).encode("utf-8")).hexdigest()


def _step_lines(step, depth: int) -> list[str]:
    pad = "  " * depth
    if isinstance(step, LlmCall):
        line = f"{pad}call {step.out} = {step.template}({_bindings(step.bindings)}) role={step.role_tag}"
        if step.temperature is not None:
            line += f" temp={_number(step.temperature)}"
        return [line]
    if isinstance(step, Render):
        return [f"{pad}render {step.out} = {step.template}({_bindings(step.bindings)})"]
    if isinstance(step, ExtractBlock):
        return [f"{pad}extract {step.out} = {step.source} marker={step.marker.value}"]
    if isinstance(step, ExecCode):
        return [f"{pad}exec {step.out} = {step.code} timeout={_number(step.timeout_s)}"]
    if isinstance(step, FanOut):
        lines = [f"{pad}fanout {step.out} count={step.count}:"]
        for sub in step.body:
            lines.extend(_step_lines(sub, depth + 1))
        return lines
    if isinstance(step, Loop):
        lines = [f"{pad}loop {step.carry} rounds={step.rounds}:"]
        for sub in step.body:
            lines.extend(_step_lines(sub, depth + 1))
        return lines
    assert isinstance(step, Return)
    return [f"{pad}return {step.var}"]


def _bindings(bindings: dict[str, str]) -> str:
    return ", ".join(f"{k}={bindings[k]}" for k in sorted(bindings))


def _number(value: float) -> str:
    return format(value, "g")
