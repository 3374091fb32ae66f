"""From a score matrix to training records.

Four passes, all file-friendly so the CLI can run them as separate stages:

1. select_pairs - group queries by metadata, give the whole group the single
   program with the highest cumulative score (lowest pool index on ties), and
   keep only the queries that program actually answered correctly.
2. refine_pair - ask a refiner model for a query-specialized variant of the
   selected program plus a reasoning paragraph; the variant replaces the base
   only if it scores no worse on the query.
3. export_sft - write (system, instruction, response) records where the
   response is the reasoning followed by the final program between <CODE>
   tags, shuffled with a fixed recorded seed.
4. dataset_stats - length and uniqueness statistics over an exported file.
"""

from __future__ import annotations

import json
import random
from collections.abc import Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from .backends import LlmBackend, user_request
from .corpus import GroupStrategy, MalformedRecord, QueryPool, QueryRecord, group_key
from .dsl import BlockNotFound, Marker, MasProgram, MaslError, extract_block, fingerprint, parse_mas, serialize, wrap_block
from .dsl.blocks import extract_tagged
from .dsl.reference import GRAMMAR_PRIMER
from .evaluator import EvalOutcome, ScoreMatrix, f_eval
from .pool import MasPool
from .runtime import Executor, Limits, RuntimeOptions
from .sandbox import CodeSandbox

SFT_SYSTEM_PROMPT = (
    "You are an expert in designing LLM-based multi-agent systems. Given a user query, respond with a "
    "paragraph that reasons about what kind of multi-agent system the query needs, followed by the system "
    "itself written in the MASL workflow language between <CODE> and </CODE>. The system takes the query "
    "as input and returns the final answer."
)

REFINEMENT_PROMPT = """I will give you a question and a multi-agent system. The multi-agent system is described in the MASL workflow language, where each agent is represented by an agent-specific prompt template and one call step. Though the multi-agent system can answer the question, it may not be the best one. Your task is to return me two things: an improved multi-agent system and a paragraph.

The improved multi-agent system should be more related to the question, while basically, try not to change the architecture compared to the original multi-agent system.
- For example, if the multi-agent system is in a parallel structure (e.g., 5 parallel agents generate answers and 1 agent selects the best answer), you may keep the structure unchanged while only changing each parallel agent's instruction.
- If the multi-agent system is already suitable, you may only modify the instructions in the multi-agent system to be more relevant to the question while leaving the structure unchanged.
- If you think additional agents are required (e.g., the question is difficult and complex), you may add some related expert agents to enhance the multi-agent system.

The paragraph should first analyze the question itself, from the perspectives of domain and difficulty. Then, you should provide a reasoning process to bridge the question and the improved multi-agent system. The reasoning process should be written as how one analyzes the question and objectively thinks about what multi-agent system is needed, finally and logically leading to the improved multi-agent system. Do not mention "this multi-agent system" or "the improved multi-agent system"; say "a multi-agent system" instead. Never mention the original multi-agent system or the original structure.

Please follow the following format requirements:
- The improved multi-agent system must be a valid MASL program and must be included between <CODE> and </CODE>.
- The paragraph should be included between <PARAGRAPH> and </PARAGRAPH>.

{grammar}

The question is:
{query}

The multi-agent system is:
{mas}"""

FALLBACK_REASONING_PROMPT = """I will give you a question and a multi-agent system. The multi-agent system is described in the MASL workflow language, where each agent is represented by an agent-specific prompt template and one call step. Your task is to return me a paragraph.

The paragraph should first analyze the question itself, from the perspectives of domain and difficulty. Then, you should provide a reasoning process to bridge the question and the provided multi-agent system. The reasoning process should be written as how one analyzes the question and objectively thinks about what multi-agent system is needed, finally and logically leading to the provided multi-agent system. Do not mention "this multi-agent system" or "the provided multi-agent system"; say "a multi-agent system" instead.

Remember, the paragraph should be included between <PARAGRAPH> and </PARAGRAPH>.

The question is:
{query}

The provided multi-agent system is:
{mas}"""

_REFINER_MAX_TOKENS = 4096


class PipelineError(Exception):
    pass


class ReasoningMissing(PipelineError):
    """Neither the refiner nor the fallback produced a reasoning paragraph."""


# ---------------------------------------------------------------------------
# Selection
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SelectionResult:
    group_key: str
    cumulative: tuple[int, ...]
    chosen_index: int
    chosen_name: str
    retained_query_ids: tuple[str, ...]

    def to_json(self) -> dict:
        return {
            "group_key": self.group_key,
            "cumulative": list(self.cumulative),
            "chosen_index": self.chosen_index,
            "chosen_name": self.chosen_name,
            "retained_query_ids": list(self.retained_query_ids),
        }

    @classmethod
    def from_json(cls, row: dict) -> "SelectionResult":
        return cls(row["group_key"], tuple(row["cumulative"]), row["chosen_index"], row["chosen_name"],
                   tuple(row["retained_query_ids"]))


def select_pairs(matrix: ScoreMatrix, queries: QueryPool,
                 strategy: GroupStrategy = GroupStrategy.METADATA) -> list[SelectionResult]:
    """Per metadata group: argmax of summed scores, lowest index on ties.

    Only group members the chosen program answered correctly are retained;
    a group where nothing scored survives as an empty retained set.
    """
    groups: dict[str, list[QueryRecord]] = {}
    for record in queries:
        groups.setdefault(group_key(record, strategy), []).append(record)

    results = []
    for key, members in groups.items():
        cumulative = [0] * len(matrix.mas_names)
        for record in members:
            for j, score in enumerate(matrix.row(record.id)):
                cumulative[j] += score
        best = 0
        for j in range(1, len(cumulative)):
            if cumulative[j] > cumulative[best]:
                best = j
        chosen_name = matrix.mas_names[best]
        retained = tuple(r.id for r in members if matrix.cell(r.id, chosen_name).score == 1)
        results.append(SelectionResult(key, tuple(cumulative), best, chosen_name, retained))
    return results


def save_selections(selections: Sequence[SelectionResult], path):
    with open(path, "w", encoding="utf-8") as handle:
        for selection in selections:
            handle.write(json.dumps(selection.to_json(), ensure_ascii=False) + "\n")


def load_selections(path) -> list[SelectionResult]:
    with open(path, encoding="utf-8") as handle:
        return [SelectionResult.from_json(json.loads(line)) for line in handle if line.strip()]


# ---------------------------------------------------------------------------
# Refinement
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RefinedPair:
    query_id: str
    query: str
    base: MasProgram
    refined: MasProgram | None
    reasoning: str
    final: MasProgram
    accepted: bool
    s_base: int
    s_refine: int | None
    note: str = ""  # why a refinement was rejected or absent

    def to_json(self) -> dict:
        return {
            "query_id": self.query_id,
            "query": self.query,
            "base": serialize(self.base),
            "refined": serialize(self.refined) if self.refined else None,
            "reasoning": self.reasoning,
            "final": serialize(self.final),
            "accepted": self.accepted,
            "s_base": self.s_base,
            "s_refine": self.s_refine,
            "note": self.note,
        }

    @classmethod
    def from_json(cls, row: dict) -> "RefinedPair":
        return cls(
            query_id=row["query_id"],
            query=row["query"],
            base=parse_mas(row["base"]),
            refined=parse_mas(row["refined"]) if row.get("refined") else None,
            reasoning=row["reasoning"],
            final=parse_mas(row["final"]),
            accepted=row["accepted"],
            s_base=row["s_base"],
            s_refine=row.get("s_refine"),
            note=row.get("note", ""),
        )


def refine_pair(
    record: QueryRecord,
    base: MasProgram,
    refiner: LlmBackend,
    executor_backend: LlmBackend,
    judge: LlmBackend,
    sandbox: CodeSandbox | None = None,
    limits: Limits | None = None,
    options: RuntimeOptions | None = None,
    s_base: int = 1,
) -> RefinedPair:
    """One refinement round for a (query, program) pair that scored s_base.

    The refiner's program is accepted only when it parses, executes, and
    scores at least s_base on the query; otherwise the base stays and the
    reasoning paragraph is regenerated for it via the fallback prompt.
    Raises ReasoningMissing when no paragraph can be obtained at all.
    """
    base_text = serialize(base)
    prompt = REFINEMENT_PROMPT.format(grammar=GRAMMAR_PRIMER, query=record.query, mas=base_text)
    response = refiner.complete(
        user_request(refiner.model_id, prompt, temperature=0.0, max_tokens=_REFINER_MAX_TOKENS)
    ).content

    refined: MasProgram | None = None
    note = ""
    try:
        code_text = extract_block(response, [Marker.CODE_TAGS])
    except BlockNotFound:
        code_text = None
        note = "refiner response had no <CODE> block"
    if code_text is not None:
        try:
            refined = parse_mas(code_text)
        except MaslError as err:
            note = f"refined program rejected by parser: {err}"

    s_refine: int | None = None
    if refined is not None:
        s_refine = _score_program(refined, record, executor_backend, judge, sandbox, limits, options).score
        accepted = s_refine >= s_base
        if not accepted:
            note = f"refined program scored {s_refine} < {s_base}"
    else:
        accepted = False

    if accepted:
        final = refined
        try:
            reasoning = extract_tagged(response, "<PARAGRAPH>", "</PARAGRAPH>")
        except BlockNotFound:
            reasoning = _fallback_reasoning(record, final, refiner)
    else:
        final = base
        reasoning = _fallback_reasoning(record, base, refiner)

    if not reasoning.strip():
        raise ReasoningMissing(f"query {record.id}: empty reasoning paragraph")
    return RefinedPair(
        query_id=record.id,
        query=record.query,
        base=base,
        refined=refined,
        reasoning=reasoning,
        final=final,
        accepted=accepted,
        s_base=s_base,
        s_refine=s_refine,
        note=note,
    )


def _score_program(program, record, executor_backend, judge, sandbox, limits, options) -> EvalOutcome:
    executor = Executor(executor_backend, sandbox=sandbox, limits=limits, options=options)
    execution = executor.run(program, record.query)
    if not execution.ok:
        return EvalOutcome(0, "failed", detail=f"execution_{execution.status.value}: {execution.failure}")
    return f_eval(record.query, execution.answer, record.verification, judge, sandbox)


def _fallback_reasoning(record: QueryRecord, program: MasProgram, refiner: LlmBackend) -> str:
    prompt = FALLBACK_REASONING_PROMPT.format(query=record.query, mas=serialize(program))
    response = refiner.complete(
        user_request(refiner.model_id, prompt, temperature=0.0, max_tokens=_REFINER_MAX_TOKENS)
    ).content
    try:
        return extract_tagged(response, "<PARAGRAPH>", "</PARAGRAPH>")
    except BlockNotFound as err:
        raise ReasoningMissing(f"query {record.id}: fallback prompt yielded no <PARAGRAPH> block") from err


def refine_all(
    selections: Sequence[SelectionResult],
    queries: QueryPool,
    pool: MasPool,
    refiner: LlmBackend,
    executor_backend: LlmBackend,
    judge: LlmBackend,
    sandbox: CodeSandbox | None = None,
    limits: Limits | None = None,
    options: RuntimeOptions | None = None,
    parallelism: int = 1,
) -> tuple[list[RefinedPair], list[tuple[str, str]]]:
    """Refine every retained (query, program) pair; returns (pairs, drops)."""
    work: list[tuple[QueryRecord, MasProgram]] = []
    for selection in selections:
        program = pool.get(selection.chosen_name).program
        for query_id in selection.retained_query_ids:
            work.append((queries.get(query_id), program))

    def one(args) -> RefinedPair | tuple[str, str]:
        record, program = args
        try:
            return refine_pair(record, program, refiner, executor_backend, judge, sandbox, limits, options)
        except ReasoningMissing as err:
            return (record.id, str(err))

    if parallelism > 1 and work:
        with ThreadPoolExecutor(max_workers=parallelism) as tp:
            outcomes = list(tp.map(one, work))
    else:
        outcomes = [one(args) for args in work]

    pairs = [o for o in outcomes if isinstance(o, RefinedPair)]
    drops = [o for o in outcomes if not isinstance(o, RefinedPair)]
    return pairs, drops


def save_pairs(pairs: Sequence[RefinedPair], path):
    with open(path, "w", encoding="utf-8") as handle:
        for pair in pairs:
            handle.write(json.dumps(pair.to_json(), ensure_ascii=False) + "\n")


def load_pairs(path) -> list[RefinedPair]:
    with open(path, encoding="utf-8") as handle:
        return [RefinedPair.from_json(json.loads(line)) for line in handle if line.strip()]


# ---------------------------------------------------------------------------
# Export + statistics
# ---------------------------------------------------------------------------


def export_sft(pairs: Sequence[RefinedPair], system_prompt: str, out, *, seed: int = 20240501,
               manifest_extra: dict | None = None) -> int:
    """Write shuffled (system, instruction, response) records plus a manifest.

    The response is the reasoning paragraph, a blank line, then the canonical
    program between <CODE> tags, so extract+parse recovers the exact program.
    Same pairs + same seed = byte-identical output.
    """
    if not pairs:
        raise PipelineError("no pairs to export")
    if not system_prompt:
        raise PipelineError("system prompt must be nonempty")

    records = []
    for pair in pairs:
        response = f"{pair.reasoning}\n\n{wrap_block(serialize(pair.final), Marker.CODE_TAGS)}"
        records.append({"system": system_prompt, "instruction": pair.query, "response": response})
    random.Random(seed).shuffle(records)

    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", encoding="utf-8") as handle:
        for record in records:
            handle.write(json.dumps(record, ensure_ascii=False) + "\n")

    manifest = {"seed": seed, "count": len(records)}
    manifest.update(manifest_extra or {})
    with open(f"{out}.manifest.json", "w", encoding="utf-8") as handle:
        json.dump(manifest, handle, ensure_ascii=False, indent=2, sort_keys=True)
        handle.write("\n")
    return len(records)


@dataclass(frozen=True)
class LengthStats:
    words: float
    chars: float


@dataclass(frozen=True)
class DatasetStats:
    n_data: int
    n_unique_mas: int
    instruction: LengthStats
    response: LengthStats
    reasoning: LengthStats
    mas: LengthStats

    def table(self) -> str:
        rows = [("records", str(self.n_data)), ("unique programs", str(self.n_unique_mas))]
        for label, stats in (("instruction", self.instruction), ("response", self.response),
                             ("reasoning", self.reasoning), ("program", self.mas)):
            rows.append((f"mean {label} length", f"{stats.words:.1f} words / {stats.chars:.1f} chars"))
        width = max(len(r[0]) for r in rows)
        return "\n".join(f"{name.ljust(width)}  {value}" for name, value in rows) + "\n"


def dataset_stats(path) -> DatasetStats:
    """Counts and mean lengths over an exported training file."""
    instructions: list[str] = []
    responses: list[str] = []
    reasonings: list[str] = []
    mas_texts: list[str] = []
    digests: set[str] = set()

    with open(path, encoding="utf-8") as handle:
        for number, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
                system, instruction, response = row["system"], row["instruction"], row["response"]
            except (json.JSONDecodeError, KeyError, TypeError) as err:
                raise MalformedRecord(path, number, f"bad training record: {err}") from err
            if not system or not instruction or not response:
                raise MalformedRecord(path, number, "training record fields must be nonempty")
            try:
                mas_text = extract_block(response, [Marker.CODE_TAGS])
                program = parse_mas(mas_text)
            except (BlockNotFound, MaslError) as err:
                raise MalformedRecord(path, number, f"response program does not parse: {err}") from err
            instructions.append(instruction)
            responses.append(response)
            reasonings.append(response.split("<CODE>", 1)[0].strip())
            mas_texts.append(mas_text)
            digests.add(fingerprint(program))

    if not instructions:
        raise MalformedRecord(path, 0, "no records")

    def mean_lengths(texts: list[str]) -> LengthStats:
        return LengthStats(
            words=sum(len(t.split()) for t in texts) / len(texts),
            chars=sum(len(t) for t in texts) / len(texts),
        )

    return DatasetStats(
        n_data=len(instructions),
        n_unique_mas=len(digests),
        instruction=mean_lengths(instructions),
        response=mean_lengths(responses),
        reasoning=mean_lengths(reasonings),
        mas=mean_lengths(mas_texts),
    )
