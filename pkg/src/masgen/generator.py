"""Inference frontend: query -> generated program -> executed answer.

One generator call produces reasoning plus a MASL block; the block is parsed
(strictly: a block that does not parse counts as non-extractable), executed
against the executor backend, and the program's answer is the reply. Batch
mode aggregates extractability, executability, and accuracy with the
denominators nested in that order.
"""

from __future__ import annotations

import json
from collections.abc import Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

from .backends import ChatRequest, LlmBackend, Message
from .dsl import DEFAULT_MARKER_ORDER, MaslError, MasProgram, parse_mas
from .dsl.blocks import locate_block
from .dsl.reference import GRAMMAR_PRIMER
from .pipeline import SFT_SYSTEM_PROMPT
from .evaluator import f_eval
from .runtime import ExecutionResult, Executor, Limits, RuntimeOptions
from .sandbox import CodeSandbox


@dataclass(frozen=True)
class GeneratorProfile:
    """How to prompt the generator model.

    ``trained_profile`` assumes a model fine-tuned on exported records, so the
    bare task description suffices. ``primed_profile`` targets off-the-shelf
    models: it adds the language reference and two worked examples, since such
    models have never seen the workflow language.
    """

    system_prompt: str
    temperature: float = 0.0
    max_tokens: int = 4096
    retries: int = 0  # extra generator attempts when the reply has no program


_FEW_SHOT = '''Two examples of the expected output shape:

Example query: "What is 37 * 43? Show your work."
Example response:
The question is elementary arithmetic: a single multiplication with small operands. It needs careful
step-by-step computation but no specialized knowledge, so one reasoning agent that works through the
steps and states the result is the right amount of machinery; extra agents would add cost without
improving reliability on so direct a task.

<CODE>
mas cot

prompt solve """
Task: {query}

Please solve the task step by step, showing your reasoning before stating the final answer.
"""

call final = solve(query=query) role=solver
return final
</CODE>

Example query: "A bag has 5 red and 3 blue marbles. Two are drawn without replacement. What is the
probability both are red?"
Example response:
The question is a probability computation where slips in setting up conditional probabilities are
common. Sampling several independent step-by-step solutions and then reconciling them exploits the
fact that independent attempts rarely share the same mistake, so a fan-out of solvers followed by a
decision agent that weighs agreement fits the risk profile of the task.

<CODE>
mas 3_sample_decide

prompt solve """
Task: {query}

Please solve the task step by step, showing your reasoning before stating the final answer.
"""

prompt decide """
Task:
{query}

{#each sols}
Solution {i+1}:
{item}

{/each}
Given all the above solutions, reason over them carefully and provide a final answer to the task.
"""

fanout sols count=3:
  call s = solve(query=query) role=solver
call final = decide(query=query, sols=sols) role=decider
return final
</CODE>'''


def trained_profile() -> GeneratorProfile:
    return GeneratorProfile(system_prompt=SFT_SYSTEM_PROMPT)


def primed_profile() -> GeneratorProfile:
    return GeneratorProfile(system_prompt=f"{SFT_SYSTEM_PROMPT}\n\n{GRAMMAR_PRIMER}\n\n{_FEW_SHOT}")


@dataclass
class GenerationOutcome:
    query_id: str
    raw_response: str
    reasoning: str | None = None
    program: MasProgram | None = None
    extractable: bool = False
    parse_error: str | None = None
    executable: bool | None = None  # defined only when extractable
    execution_failure: str | None = None
    answer: str | None = None  # present only when executable
    correct: bool | None = None  # present only when scored against verification
    generator_calls: int = 1
    transcript_digest: str | None = None

    def to_json(self) -> dict:
        return {
            "query_id": self.query_id,
            "extractable": self.extractable,
            "executable": self.executable,
            "correct": self.correct,
            "answer": self.answer,
            "reasoning": self.reasoning,
            "parse_error": self.parse_error,
            "execution_failure": self.execution_failure,
            "generator_calls": self.generator_calls,
            "transcript_digest": self.transcript_digest,
            "raw_response": self.raw_response,
        }


def generate_mas(query: str, generator: LlmBackend, profile: GeneratorProfile,
                 query_id: str = "") -> GenerationOutcome:
    """One generator inference; parses but does not execute the program."""
    outcome = GenerationOutcome(query_id=query_id, raw_response="")
    attempts = 1 + max(profile.retries, 0)
    for attempt in range(attempts):
        request = ChatRequest(
            model=generator.model_id,
            messages=(Message("system", profile.system_prompt), Message("user", query)),
            temperature=profile.temperature,
            max_tokens=profile.max_tokens,
        )
        response = generator.complete(request).content
        outcome.raw_response = response
        outcome.generator_calls = attempt + 1

        located = locate_block(response, DEFAULT_MARKER_ORDER)
        if located is None:
            outcome.parse_error = "no program block in generator output"
            continue
        marker, start, block = located
        outcome.reasoning = response[:start].strip() or None
        try:
            outcome.program = parse_mas(block)
        except MaslError as err:
            outcome.parse_error = str(err)
            continue
        outcome.extractable = True
        outcome.parse_error = None
        break
    return outcome


def answer_query(query: str, generator: LlmBackend, executor_backend: LlmBackend,
                 sandbox: CodeSandbox | None = None, limits: Limits | None = None,
                 options: RuntimeOptions | None = None,
                 profile: GeneratorProfile | None = None,
                 query_id: str = "") -> GenerationOutcome:
    """Generate, then execute; the generator call never enters the program transcript."""
    profile = profile or trained_profile()
    outcome = generate_mas(query, generator, profile, query_id=query_id)
    if not outcome.extractable:
        return outcome
    executor = Executor(executor_backend, sandbox=sandbox, limits=limits, options=options)
    execution: ExecutionResult = executor.run(outcome.program, query)
    outcome.transcript_digest = execution.transcript.digest
    if execution.ok:
        outcome.executable = True
        outcome.answer = execution.answer
    else:
        outcome.executable = False
        outcome.execution_failure = f"{execution.status.value}: {execution.failure}"
    return outcome


@dataclass(frozen=True)
class GenMetrics:
    n: int
    extractability: float  # extractable / n
    executability: float  # executable / extractable
    accuracy: float  # correct / executed-and-verifiable
    n_extractable: int = 0
    n_executable: int = 0
    n_scored: int = 0
    n_correct: int = 0

    def report(self) -> str:
        return (
            f"queries\t{self.n}\n"
            f"extractability\t{self.extractability:.3f}\t({self.n_extractable}/{self.n})\n"
            f"executability\t{self.executability:.3f}\t({self.n_executable}/{self.n_extractable})\n"
            f"accuracy\t{self.accuracy:.3f}\t({self.n_correct}/{self.n_scored})\n"
        )


def batch_metrics(queries: Sequence, generator: LlmBackend, executor_backend: LlmBackend,
                  judge: LlmBackend, sandbox: CodeSandbox | None = None,
                  limits: Limits | None = None, options: RuntimeOptions | None = None,
                  profile: GeneratorProfile | None = None, parallelism: int = 1,
                  outcomes_path=None) -> GenMetrics:
    """Run answer_query over a pool and aggregate the three nested fractions.

    ``queries`` is anything with .id / .query / .verification; records whose
    verification is None are excluded from the accuracy denominator.
    """

    def one(record) -> GenerationOutcome:
        outcome = answer_query(record.query, generator, executor_backend, sandbox=sandbox,
                               limits=limits, options=options, profile=profile, query_id=record.id)
        verification = getattr(record, "verification", None)
        if outcome.executable and verification is not None:
            outcome.correct = bool(f_eval(record.query, outcome.answer, verification, judge, sandbox).score)
        return outcome

    records = list(queries)
    if parallelism > 1 and records:
        with ThreadPoolExecutor(max_workers=parallelism) as tp:
            outcomes = list(tp.map(one, records))
    else:
        outcomes = [one(r) for r in records]

    if outcomes_path:
        with open(outcomes_path, "w", encoding="utf-8") as handle:
            for outcome in outcomes:
                handle.write(json.dumps(outcome.to_json(), ensure_ascii=False) + "\n")

    n = len(outcomes)
    n_extractable = sum(1 for o in outcomes if o.extractable)
    n_executable = sum(1 for o in outcomes if o.executable)
    scored = [o for o in outcomes if o.correct is not None]
    n_correct = sum(1 for o in scored if o.correct)
    return GenMetrics(
        n=n,
        extractability=n_extractable / n if n else 0.0,
        executability=n_executable / n_extractable if n_extractable else 0.0,
        accuracy=n_correct / len(scored) if scored else 0.0,
        n_extractable=n_extractable,
        n_executable=n_executable,
        n_scored=len(scored),
        n_correct=n_correct,
    )
