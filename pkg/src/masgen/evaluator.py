"""Binary scoring of answers against verification, and the full pair sweep.

Ground-truth queries go through a two-step judge flow: one call extracts the
final answer from the (often rambling) system output, a second call compares
it against the ground truth and must reply with one of four fixed verdict
sentences. Code queries skip the judge comparison: a judge call extracts the
function, the sandbox runs the test cases, and the score is 1 only when every
test passes.

Every failure mode scores 0 with the reason retained; nothing in the sweep
aborts on a per-cell problem.
"""

from __future__ import annotations

import json
import threading
from collections.abc import Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

from .backends import BackendError, LlmBackend, user_request
from .corpus import CodeTests, GroundTruth, QueryPool, QueryRecord, Verification
from .dsl import BlockNotFound, Marker, extract_block
from .pool import MasPool
from .runtime import Executor, Limits, RuntimeOptions
from .sandbox import CodeSandbox, SandboxFailure, SandboxStatus

ANSWER_EXTRACTION_PROMPT = """You are a helpful AI assistant tasked with extracting the final answer from a provided solution.

**Input:**
1. A problem statement, prefixed with "===Problem: <problem>".
2. A solution to the problem, prefixed with "===Solution: <solution>".

**Problem and Solution:**
===Problem: {query}

===Solution: {response}

**Instructions:**
- Carefully analyze the solution and extract the final answer in reply: "The answer is <answer extracted> in reply".
- If the solution does not contain a final answer (e.g., only reasoning, code without execution, or incomplete information), respond with: "The reply doesn't contain an answer."
- Ensure that the extracted answer is exactly as presented in the solution. Do not infer or use external knowledge. Do not execute the code yourself.
- Remember, Never execute the code yourself! Never doing any computation yourself! Just extract and output the existing answer!"""

ANSWER_COMPARISON_PROMPT = """You are a helpful AI assistant. You will use your coding and language skills to verify the answer.
You are given:
    1. A problem, which is going to start like "===Problem: <problem>".
    2. A ground truth answer, which is going to start like "===Ground truth answer:".
    3. A reply with the answer to the problem, which are going to start like "===Reply:".
Please do the following:
1. Extract the answer in reply: "The answer is <answer extracted> in reply".
2. Check whether the answer in reply matches the ground truth answer. When comparison is not obvious (for example, 3*sqrt(6) and 7.348), you may compare by calculation, allowing a small margin of error.
3. After everything is done, please give each reply a comment like the following options:
    - "The answer is correct."
    - "The answer is approximated but should be correct. Correct Answer: <ground truth answer> | Answer extracted: <answer extracted>."
    - "The answer is incorrect. Correct Answer: <ground truth answer> | Answer extracted: <answer extracted>."
    - "The reply doesn't contain an answer."
Here are the problem, the ground truth answer and the reply:
===Problem: {query}

===Ground truth answer: {ground_truth}

===Reply: {reply}"""

CODE_EXTRACTION_PROMPT = """You are given a **Problem** and a **Solution**. The **Problem** asks for a code function. Extract the final code function from the **Solution**.
**Problem:**
{query}

**Solution:**
{solution}

Please follow the following rules:
- Only output the code function that exists in the **Solution**, without any additional explanation or content.
- Do not modify any part of the code function.
- Remove parts like 'example use' or 'test cases'.
- If the **Solution** does not contain a code function, respond with: "The reply doesn't contain a code function."
"""

NO_ANSWER_PHRASE = "the reply doesn't contain an answer"
NO_CODE_PHRASE = "the reply doesn't contain a code function"

_JUDGE_MAX_TOKENS = 1024


class VerdictKind(Enum):
    CORRECT = "correct"
    APPROX_CORRECT = "approx_correct"
    INCORRECT = "incorrect"
    NO_ANSWER = "no_answer"
    UNPARSEABLE = "unparseable"


# Phrase table drives verdict mapping; earliest occurrence in the reply wins.
_PHRASES = (
    ("the answer is approximated but should be correct", VerdictKind.APPROX_CORRECT),
    ("the answer is correct", VerdictKind.CORRECT),
    ("the answer is incorrect", VerdictKind.INCORRECT),
    (NO_ANSWER_PHRASE, VerdictKind.NO_ANSWER),
)


@dataclass(frozen=True)
class Verdict:
    kind: VerdictKind
    raw: str

    @property
    def score(self) -> int:
        # "approximated but should be correct" counts as correct.
        return 1 if self.kind in (VerdictKind.CORRECT, VerdictKind.APPROX_CORRECT) else 0


def _normalize(text: str) -> str:
    return text.replace("’", "'").replace("“", '"').replace("”", '"').lower()


def parse_verdict(raw: str) -> Verdict:
    """Map judge text to a Verdict; anything unrecognized is UNPARSEABLE."""
    normalized = _normalize(raw)
    best: tuple[int, VerdictKind] | None = None
    for phrase, kind in _PHRASES:
        position = normalized.find(phrase)
        if position != -1 and (best is None or position < best[0]):
            best = (position, kind)
    return Verdict(best[1] if best else VerdictKind.UNPARSEABLE, raw)


def _ask_judge(judge: LlmBackend, prompt: str) -> str:
    request = user_request(judge.model_id, prompt, temperature=0.0, max_tokens=_JUDGE_MAX_TOKENS)
    return judge.complete(request).content


def extract_final_answer(query: str, response: str, judge: LlmBackend) -> str | None:
    """First judge step: pull the final answer phrase out of a solution.

    Returns None when there is no answer (empty input short-circuits without
    a judge call; otherwise the judge must say so explicitly).
    """
    if not response.strip():
        return None
    reply = _ask_judge(judge, ANSWER_EXTRACTION_PROMPT.format(query=query, response=response))
    normalized = _normalize(reply)
    if NO_ANSWER_PHRASE in normalized:
        return None
    start = normalized.find("the answer is ")
    end = normalized.rfind(" in reply")
    if start == -1 or end == -1 or end <= start:
        return None
    extracted = reply[start + len("the answer is ") : end].strip()
    return extracted or None


def judge_answer(query: str, ground_truth: str, reply: str, judge: LlmBackend) -> Verdict:
    """Second judge step: compare a reply against the ground truth."""
    raw = _ask_judge(judge, ANSWER_COMPARISON_PROMPT.format(query=query, ground_truth=ground_truth, reply=reply))
    return parse_verdict(raw)


@dataclass(frozen=True)
class CodeEval:
    pass_rate: float
    score: int
    per_test: tuple = ()
    reason: str = ""


def extract_code(query: str, response: str, judge: LlmBackend) -> str | None:
    """Judge-driven code extraction; returns None when no function exists."""
    if not response.strip():
        return None
    reply = _ask_judge(judge, CODE_EXTRACTION_PROMPT.format(query=query, solution=response))
    if NO_CODE_PHRASE in _normalize(reply):
        return None
    try:
        return extract_block(reply, [Marker.FENCED])
    except BlockNotFound:
        return reply.strip() or None


def evaluate_code(query: str, response: str, tests: Sequence[str], entry_point: str,
                  judge: LlmBackend, sandbox: CodeSandbox, timeout_s: float = 20.0) -> CodeEval:
    """Run extracted code against the test cases; all-pass scores 1."""
    code = extract_code(query, response, judge)
    if code is None:
        return CodeEval(0.0, 0, reason="no_code_found")
    result = sandbox.run_tests(code, tests, entry_point, timeout_s)
    if result.status is not SandboxStatus.OK or result.per_test is None:
        return CodeEval(0.0, 0, reason=f"sandbox_{result.status.value.lower()}: {result.output[:200]}")
    rate = result.pass_rate
    return CodeEval(rate, 1 if rate == 1.0 else 0, per_test=result.per_test)


@dataclass(frozen=True)
class EvalOutcome:
    score: int
    kind: str  # verdict kind, or "code:<passed>/<total>", or "failed"
    detail: str = ""
    pass_rate: float | None = None


def f_eval(query: str, answer: str, verification: Verification,
           judge: LlmBackend, sandbox: CodeSandbox | None = None) -> EvalOutcome:
    """The query-dependent scoring function; every failure maps to score 0."""
    try:
        if isinstance(verification, GroundTruth):
            extracted = extract_final_answer(query, answer, judge)
            if extracted is None:
                return EvalOutcome(0, VerdictKind.NO_ANSWER.value)
            verdict = judge_answer(query, verification.answer, extracted, judge)
            return EvalOutcome(verdict.score, verdict.kind.value, detail=verdict.raw)
        assert isinstance(verification, CodeTests)
        if sandbox is None:
            return EvalOutcome(0, "failed", detail="code verification without a sandbox")
        code_eval = evaluate_code(query, answer, verification.tests, verification.entry_point, judge, sandbox)
        passed = round(code_eval.pass_rate * len(verification.tests))
        kind = code_eval.reason or f"code:{passed}/{len(verification.tests)}"
        return EvalOutcome(code_eval.score, kind, pass_rate=code_eval.pass_rate)
    except (BackendError, SandboxFailure) as err:
        return EvalOutcome(0, "failed", detail=f"{type(err).__name__}: {err}")


# ---------------------------------------------------------------------------
# The N x M sweep
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PairResult:
    query_id: str
    mas_name: str
    score: int
    answer: str = ""
    verdict: str = ""
    reason: str = ""
    transcript_ref: str = ""

    def to_json(self) -> dict:
        return {
            "query_id": self.query_id,
            "mas_name": self.mas_name,
            "score": self.score,
            "answer": self.answer,
            "verdict": self.verdict,
            "reason": self.reason,
            "transcript_ref": self.transcript_ref,
        }

    @classmethod
    def from_json(cls, row: dict) -> "PairResult":
        return cls(**{k: row.get(k, "") for k in
                      ("query_id", "mas_name", "score", "answer", "verdict", "reason", "transcript_ref")})


class DimensionMismatch(Exception):
    """The score matrix does not cover the requested query/program pair."""


@dataclass
class ScoreMatrix:
    query_ids: list[str]
    mas_names: list[str]
    cells: dict[tuple[str, str], PairResult] = field(default_factory=dict)

    def cell(self, query_id: str, mas_name: str) -> PairResult:
        try:
            return self.cells[(query_id, mas_name)]
        except KeyError:
            raise DimensionMismatch(f"no result for ({query_id}, {mas_name})") from None

    def row(self, query_id: str) -> list[int]:
        return [self.cell(query_id, name).score for name in self.mas_names]

    def save(self, path):
        with open(path, "w", encoding="utf-8") as handle:
            for query_id in self.query_ids:
                for name in self.mas_names:
                    handle.write(json.dumps(self.cell(query_id, name).to_json(), ensure_ascii=False) + "\n")

    @classmethod
    def load(cls, path, query_ids: list[str] | None = None, mas_names: list[str] | None = None) -> "ScoreMatrix":
        cells: dict[tuple[str, str], PairResult] = {}
        seen_queries: list[str] = []
        seen_names: list[str] = []
        with open(path, encoding="utf-8") as handle:
            for line in handle:
                if not line.strip():
                    continue
                result = PairResult.from_json(json.loads(line))
                cells[(result.query_id, result.mas_name)] = result
                if result.query_id not in seen_queries:
                    seen_queries.append(result.query_id)
                if result.mas_name not in seen_names:
                    seen_names.append(result.mas_name)
        return cls(query_ids or seen_queries, mas_names or seen_names, cells)


def score_matrix(
    queries: QueryPool,
    pool: MasPool,
    executor_backend: LlmBackend,
    judge_backend: LlmBackend,
    sandbox: CodeSandbox | None = None,
    limits: Limits | None = None,
    options: RuntimeOptions | None = None,
    parallelism: int = 1,
    results_path=None,
    transcripts_path=None,
) -> ScoreMatrix:
    """Execute and score every (query, program) pair.

    Results append to ``results_path`` as they complete; a rerun skips cells
    already on disk, so an interrupted sweep resumes where it stopped (pair a
    record/replay backend with this to also avoid repaying for model calls).
    """
    matrix = ScoreMatrix([q.id for q in queries], pool.names())
    if results_path and Path(results_path).exists():
        existing = ScoreMatrix.load(results_path)
        wanted = {(q, m) for q in matrix.query_ids for m in matrix.mas_names}
        matrix.cells.update({k: v for k, v in existing.cells.items() if k in wanted})

    executor = Executor(executor_backend, sandbox=sandbox, limits=limits, options=options)
    io_lock = threading.Lock()

    def persist(result: PairResult, transcript_lines: list[str]):
        with io_lock:
            if results_path:
                with open(results_path, "a", encoding="utf-8") as handle:
                    handle.write(json.dumps(result.to_json(), ensure_ascii=False) + "\n")
            if transcripts_path and transcript_lines:
                with open(transcripts_path, "a", encoding="utf-8") as handle:
                    for line in transcript_lines:
                        handle.write(line + "\n")

    def run_cell(record: QueryRecord, mas_name: str) -> PairResult:
        ref = f"{record.id}::{mas_name}"
        program = pool.get(mas_name).program
        execution = executor.run(program, record.query)
        if not execution.ok:
            result = PairResult(record.id, mas_name, 0, reason=f"execution_{execution.status.value}: "
                                                               f"{execution.failure}", transcript_ref=ref)
        else:
            outcome = f_eval(record.query, execution.answer, record.verification, judge_backend, sandbox)
            result = PairResult(record.id, mas_name, outcome.score, answer=execution.answer,
                                verdict=outcome.kind, reason=outcome.detail if not outcome.score else "",
                                transcript_ref=ref)
        lines = [json.dumps({"ref": ref}, ensure_ascii=False)] + execution.transcript.export_lines()
        persist(result, lines)
        return result

    todo = [(record, name) for record in queries for name in matrix.mas_names
            if (record.id, name) not in matrix.cells]
    if parallelism > 1 and todo:
        with ThreadPoolExecutor(max_workers=parallelism) as tp:
            for result in tp.map(lambda args: run_cell(*args), todo):
                matrix.cells[(result.query_id, result.mas_name)] = result
    else:
        for record, name in todo:
            result = run_cell(record, name)
            matrix.cells[(result.query_id, result.mas_name)] = result
    return matrix


def summary_table(matrix: ScoreMatrix, queries: QueryPool) -> str:
    """Per-program accuracy per dataset, tab-delimited with a header row."""
    datasets = sorted({record.dataset for record in queries})
    by_dataset: dict[str, list[QueryRecord]] = {d: [] for d in datasets}
    for record in queries:
        by_dataset[record.dataset].append(record)

    lines = ["\t".join(["mas"] + datasets + ["overall"])]
    for name in matrix.mas_names:
        row = [name]
        total_hits = 0
        for dataset in datasets:
            members = by_dataset[dataset]
            hits = sum(matrix.cell(r.id, name).score for r in members)
            total_hits += hits
            row.append(f"{hits / len(members):.3f}")
        row.append(f"{total_hits / len(matrix.query_ids):.3f}")
        lines.append("\t".join(row))
    return "\n".join(lines) + "\n"
