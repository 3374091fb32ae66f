"""AST for MASL, the workflow language describing one multi-agent system.

A program is a set of named prompt templates plus a straight-line list of
steps that thread string values through named variables, starting from the
reserved input variable ``query`` and ending at a single ``return``. Fan-out
and loop blocks are the only repetition constructs, and both carry static
counts, so call cost is computable without running anything.

All nodes are frozen; a parsed program can be shared freely across threads.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Union

from .templates import PromptTemplate

# Variable that always holds the user query.
QUERY_VAR = "query"
# Variable bound to the 1-based branch number inside a fan-out body.
BRANCH_VAR = "branch"
# Names steps may never define.
RESERVED_NAMES = (QUERY_VAR, BRANCH_VAR, "item", "i")

MAX_FANOUT = 16
MAX_ROUNDS = 8


class Marker(enum.Enum):
    """Delimiters recognized when pulling a block out of model output."""

    CODE_TAGS = "CODE_TAGS"  # <CODE> ... </CODE>
    SOLUTION_TAGS = "SOLUTION_TAGS"  # <Code Solution> ... </Code Solution>
    FENCED = "FENCED"  # ``` ... ```


@dataclass(frozen=True)
class LlmCall:
    """Render a template and send it to the backing model as one user turn."""

    out: str
    template: str
    bindings: dict[str, str]
    role_tag: str
    temperature: float | None = None  # None = executor policy decides


@dataclass(frozen=True)
class Render:
    """Render a template into a variable without calling a model."""

    out: str
    template: str
    bindings: dict[str, str]


@dataclass(frozen=True)
class ExtractBlock:
    """Pull a marker-delimited block out of a variable's text."""

    out: str
    source: str
    marker: Marker


@dataclass(frozen=True)
class ExecCode:
    """Run a variable's text as code in the sandbox and capture its output."""

    out: str
    code: str
    timeout_s: float


@dataclass(frozen=True)
class FanOut:
    """Run the body once per branch; ``out`` collects one value per branch.

    Branches are independent and may execute concurrently; results keep
    branch order. The branch value is the output of the body's last step.
    """

    out: str
    count: int
    body: tuple["Step", ...]


@dataclass(frozen=True)
class Loop:
    """Run the body ``rounds`` times; ``carry`` threads a value between rounds.

    Only reassignments of the carry variable survive an iteration; any other
    variable the body defines is iteration-local.
    """

    carry: str
    rounds: int
    body: tuple["Step", ...]


@dataclass(frozen=True)
class Return:
    var: str


Step = Union[LlmCall, Render, ExtractBlock, ExecCode, FanOut, Loop, Return]


@dataclass(frozen=True)
class MasProgram:
    name: str
    prompts: dict[str, PromptTemplate]
    steps: tuple[Step, ...]

    @property
    def output_var(self) -> str:
        last = self.steps[-1]
        assert isinstance(last, Return)
        return last.var

    @property
    def code_capable(self) -> bool:
        """True when the program contains at least one exec step."""
        return _contains_exec(self.steps)


def _contains_exec(steps) -> bool:
    for step in steps:
        if isinstance(step, ExecCode):
            return True
        if isinstance(step, (FanOut, Loop)) and _contains_exec(step.body):
            return True
    return False
