"""Verifiable query pools: loading, normalization, and metadata grouping.

Input is line-delimited JSON. Every record must carry a way to verify an
answer: either a ground-truth string or executable test cases. Records keep
their dataset/subdomain metadata because grouping during pair selection is
metadata-based by default (embedding-based grouping is a plug-point: the
strategy enum is open, only METADATA ships).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path


class CorpusError(Exception):
    pass


class MalformedRecord(CorpusError):
    def __init__(self, path, line_number: int, reason: str):
        self.line_number = line_number
        super().__init__(f"{path}:{line_number}: {reason}")


class MissingVerification(MalformedRecord):
    pass


class DuplicateId(MalformedRecord):
    pass


class QueryFormat(Enum):
    JSONL_GT = "jsonl_gt"  # fields: id, query, answer, dataset, [subdomain], [split]
    JSONL_CODE = "jsonl_code"  # fields: id, query, tests, entry_point, dataset, ...


class GroupStrategy(Enum):
    METADATA = "metadata"


@dataclass(frozen=True)
class GroundTruth:
    answer: str


@dataclass(frozen=True)
class CodeTests:
    entry_point: str
    tests: tuple[str, ...]


Verification = GroundTruth | CodeTests


@dataclass(frozen=True)
class QueryRecord:
    id: str
    query: str
    verification: Verification
    dataset: str
    subdomain: str | None = None
    split: str = "train"

    @property
    def is_code(self) -> bool:
        return isinstance(self.verification, CodeTests)

    def to_json(self) -> dict:
        row = {"id": self.id, "query": self.query, "dataset": self.dataset,
               "subdomain": self.subdomain, "split": self.split}
        if isinstance(self.verification, GroundTruth):
            row["answer"] = self.verification.answer
        else:
            row["entry_point"] = self.verification.entry_point
            row["tests"] = list(self.verification.tests)
        return row


@dataclass
class QueryPool:
    records: list[QueryRecord] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def get(self, record_id: str) -> QueryRecord:
        for record in self.records:
            if record.id == record_id:
                return record
        raise KeyError(record_id)


def load_queries(path, format: QueryFormat) -> QueryPool:
    """Load and normalize one JSONL file into a QueryPool.

    Raises MalformedRecord (with line number), MissingVerification, or
    DuplicateId; a file that loads is fully normalized.
    """
    path = Path(path)
    records: list[QueryRecord] = []
    seen: set[str] = set()
    with open(path, encoding="utf-8") as handle:
        for number, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError as err:
                raise MalformedRecord(path, number, f"invalid JSON: {err}") from err
            record = _normalize(row, path, number, format)
            if record.id in seen:
                raise DuplicateId(path, number, f"duplicate id '{record.id}'")
            seen.add(record.id)
            records.append(record)
    if not records:
        raise CorpusError(f"{path}: no records")
    return QueryPool(records)


def _normalize(row: dict, path, number: int, format: QueryFormat) -> QueryRecord:
    if not isinstance(row, dict):
        raise MalformedRecord(path, number, "record is not an object")
    for required in ("id", "query", "dataset"):
        if not row.get(required):
            raise MalformedRecord(path, number, f"missing field '{required}'")

    if format is QueryFormat.JSONL_GT:
        answer = row.get("answer")
        if not answer:
            raise MissingVerification(path, number, "ground-truth record has no 'answer'")
        verification: Verification = GroundTruth(str(answer))
    else:
        tests = row.get("tests")
        entry_point = row.get("entry_point")
        if not tests or not entry_point:
            raise MissingVerification(path, number, "code record needs nonempty 'tests' and 'entry_point'")
        verification = CodeTests(entry_point=str(entry_point), tests=tuple(str(t) for t in tests))

    return QueryRecord(
        id=str(row["id"]),
        query=str(row["query"]),
        verification=verification,
        dataset=str(row["dataset"]),
        subdomain=str(row["subdomain"]) if row.get("subdomain") else None,
        split=str(row.get("split", "train")),
    )


def group_key(record: QueryRecord, strategy: GroupStrategy = GroupStrategy.METADATA) -> str:
    """Grouping key for pair selection: dataset plus subdomain ('-' if none)."""
    if strategy is not GroupStrategy.METADATA:
        raise NotImplementedError(f"grouping strategy {strategy} is a plug-point, not implemented")
    return f"{record.dataset}/{record.subdomain or '-'}"


def dump_queries(pool: QueryPool, path):
    """Inverse of load_queries for normalized pools."""
    with open(path, "w", encoding="utf-8") as handle:
        for record in pool:
            handle.write(json.dumps(record.to_json(), ensure_ascii=False) + "\n")
