"""The base pool of candidate multi-agent system programs.

Built-ins ship as ``.masl`` files in masgen/builtins and cover the structural
families the pipeline needs: direct/step-by-step single agents, parallel
sampling with a decision agent, debate, iterative refinement, and
code-executing pipelines. Entry order is the tie-break order used during pair
selection, so it is fixed: simple programs come before complex ones.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import yaml

from .dsl import MasProgram, fingerprint, parse_mas

# Entry order is load-bearing (selection tie-breaks on index): simplest first.
BUILTIN_ORDER = (
    ("direct", ("general",)),
    ("cot", ("general", "math")),
    ("step_back", ("general", "math")),
    ("self_refine", ("general", "math")),
    ("code_test_refine", ("code", "math")),
    ("quality_diversity", ("general",)),
    ("ensemble_format", ("general", "math")),
    ("5_cot_sc", ("math", "general")),
    ("5_expert_decide", ("general",)),
    ("3_debate", ("general", "math")),
    ("2_code_2_direct_ensemble", ("math", "code")),
    ("5_refine_decide", ("general", "math")),
)


class DuplicateMas(Exception):
    """A program with the same fingerprint is already in the pool."""


class UnknownName(KeyError):
    """No pool entry has the requested name."""


@dataclass(frozen=True)
class MasEntry:
    name: str
    program: MasProgram
    tags: tuple[str, ...] = ()

    @property
    def code_capable(self) -> bool:
        return self.program.code_capable


@dataclass
class MasPool:
    entries: list[MasEntry] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def names(self) -> list[str]:
        return [entry.name for entry in self.entries]

    def get(self, name: str) -> MasEntry:
        for entry in self.entries:
            if entry.name == name:
                return entry
        raise UnknownName(name)

    def index_of(self, name: str) -> int:
        for index, entry in enumerate(self.entries):
            if entry.name == name:
                return index
        raise UnknownName(name)

    def add(self, entry: MasEntry) -> "MasPool":
        digest = fingerprint(entry.program)
        for existing in self.entries:
            if fingerprint(existing.program) == digest:
                raise DuplicateMas(f"'{entry.name}' duplicates '{existing.name}' (fingerprint {digest[:12]}…)")
            if existing.name == entry.name:
                raise DuplicateMas(f"name '{entry.name}' is already taken")
        self.entries.append(entry)
        return self

    def add_from_file(self, path, tags: tuple[str, ...] = ()) -> MasEntry:
        with open(path, encoding="utf-8") as handle:
            program = parse_mas(handle.read())
        entry = MasEntry(name=program.name, program=program, tags=tags)
        self.add(entry)
        return entry

    def unique_fingerprints(self) -> set[str]:
        return {fingerprint(entry.program) for entry in self.entries}


def builtin_pool() -> MasPool:
    """Load the shipped programs in their canonical order."""
    pool = MasPool()
    package = resources.files("masgen.builtins")
    for name, tags in BUILTIN_ORDER:
        text = (package / f"{name}.masl").read_text(encoding="utf-8")
        program = parse_mas(text)
        if program.name != name:
            raise RuntimeError(f"builtin file {name}.masl declares program '{program.name}'")
        pool.add(MasEntry(name=name, program=program, tags=tags))
    return pool


def load_manifest(path) -> MasPool:
    """Build a pool from a YAML manifest mapping names to .masl paths + tags.

    Schema:
        entries:
          - name: my_mas          # optional, defaults to the program's name
            path: relative/or/absolute.masl
            tags: [math]
        include_builtins: true    # optional, prepends the shipped pool
    """
    manifest_path = Path(path)
    with open(manifest_path, encoding="utf-8") as handle:
        manifest = yaml.safe_load(handle) or {}
    pool = builtin_pool() if manifest.get("include_builtins") else MasPool()
    for row in manifest.get("entries", []):
        entry_path = Path(row["path"])
        if not entry_path.is_absolute():
            entry_path = manifest_path.parent / entry_path
        entry = pool.add_from_file(entry_path, tags=tuple(row.get("tags", ())))
        declared = row.get("name")
        if declared and declared != entry.name:
            raise ValueError(f"manifest names entry '{declared}' but file declares '{entry.name}'")
    return pool
