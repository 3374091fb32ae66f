"""A deterministic rule-based responder standing in for every model role.

The responder inspects each request and plays judge, refiner, generator, or
plain agent accordingly, with all variation derived from content hashes. That
makes full pipeline runs reproducible bit-for-bit without any network, which
is what the determinism tests (and the out-of-the-box CLI demo) rely on.

Synthetic corpora lean on one convention: a query containing ``QUERY-<n>``
has ground truth ``ANS-<n>``. Agent replies embed the right token roughly two
thirds of the time, keyed on the prompt hash, so score matrices come out
varied but stable.
"""

from __future__ import annotations

import hashlib
import re

from .backends import ChatRequest, ScriptedBackend
from .dsl import MaslError, locate_block, parse_mas, serialize

_QUERY_TOKEN = re.compile(r"QUERY-(\d+)")
_ANSWER_CLAIM = re.compile(r"(?i)the answer is\s+([^\n.]+)")


def demo_backend(model: str = "demo") -> ScriptedBackend:
    return ScriptedBackend(responder=demo_responder, model=model)


def _hash(text: str) -> int:
    return int.from_bytes(hashlib.sha256(text.encode("utf-8")).digest()[:8], "big")


def demo_responder(request: ChatRequest) -> str:
    prompt = request.messages[-1].content
    system = next((m.content for m in request.messages if m.role == "system"), "")

    if "tasked with extracting the final answer" in prompt:
        return _extract_answer_reply(prompt)
    if "===Ground truth answer:" in prompt:
        return _compare_reply(prompt)
    if "asks for a code function" in prompt:
        return _extract_code_reply(prompt)
    if "an improved multi-agent system and a paragraph" in prompt:
        return _refine_reply(prompt)
    if "Your task is to return me a paragraph." in prompt:
        return _paragraph_reply(prompt)
    if "MASL workflow language between <CODE> and </CODE>" in system:
        return _generate_reply(prompt)
    return _agent_reply(prompt)


# --- judge roles -----------------------------------------------------------


def _section(prompt: str, header: str) -> str:
    # The judge prompts mention their own headers in the instructions, so the
    # real payload is always the LAST occurrence.
    index = prompt.rfind(header)
    return prompt[index + len(header) :] if index != -1 else ""


def _extract_answer_reply(prompt: str) -> str:
    solution = _section(prompt, "===Solution:").split("**Instructions:**")[0]
    claims = _ANSWER_CLAIM.findall(solution)
    if claims:
        return f"The answer is {claims[-1].strip()} in reply"
    token = _QUERY_TOKEN.search(solution)
    if token:
        return f"The answer is ANS-{token.group(1)} in reply"
    return "The reply doesn't contain an answer."


def _compare_reply(prompt: str) -> str:
    truth = _section(prompt, "===Ground truth answer:").split("===Reply:")[0].strip()
    reply = _section(prompt, "===Reply:").strip()
    matched = truth and (truth == reply or re.search(rf"(?<![\w-]){re.escape(truth)}(?![\w-])", reply))
    if matched:
        return "The answer is correct."
    return f"The answer is incorrect. Correct Answer: {truth} | Answer extracted: {reply[:80]}."


def _extract_code_reply(prompt: str) -> str:
    solution = _section(prompt, "**Solution:**")
    located = locate_block(solution)
    if located is None:
        return "The reply doesn't contain a code function."
    return located[2]


# --- refiner role ----------------------------------------------------------


def _refine_reply(prompt: str) -> str:
    base_text = _section(prompt, "The multi-agent system is:").strip()
    question = _section(prompt, "The question is:").split("The multi-agent system is:")[0].strip()
    refined_text = base_text
    try:
        program = parse_mas(base_text)
        first = sorted(program.prompts)[0]
        template = program.prompts[first]
        patched = template.text + "\nPay close attention to the specifics of the question."
        prompts = dict(program.prompts)
        prompts[first] = type(template)(patched)
        refined_text = serialize(type(program)(name=program.name, prompts=prompts, steps=program.steps))
    except (MaslError, IndexError):
        pass
    return (
        f"<CODE>\n{refined_text}</CODE>\n"
        f"<PARAGRAPH>\n{_paragraph_text(question)}\n</PARAGRAPH>"
    )


def _paragraph_reply(prompt: str) -> str:
    question = _section(prompt, "The question is:").split("The provided multi-agent system is:")[0].strip()
    return f"<PARAGRAPH>\n{_paragraph_text(question)}\n</PARAGRAPH>"


def _paragraph_text(question: str) -> str:
    domain = ("quantitative reasoning", "procedural analysis", "factual recall")[_hash(question) % 3]
    return (
        f"The question calls for {domain} and rewards careful decomposition over breadth. "
        "A multi-agent system suits it because independent attempts expose each other's mistakes: "
        "several agents work the task from their own angle and a final decision agent weighs their "
        "agreement before committing to an answer, which keeps the outcome robust on exactly this "
        "kind of task."
    )


# --- generator role --------------------------------------------------------

_GEN_SINGLE = '''mas demo_single

prompt solve """
Task: {query}

Please solve the task step by step, showing your reasoning before stating the final answer.
"""

call final = solve(query=query) role=solver
return final
'''

_GEN_SAMPLED = '''mas demo_sampled

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
'''


def _generate_reply(query: str) -> str:
    program = _GEN_SAMPLED if _hash(query) % 2 else _GEN_SINGLE
    return f"{_paragraph_text(query)}\n\n<CODE>\n{program}</CODE>"


# --- plain agent role ------------------------------------------------------


def _agent_reply(prompt: str) -> str:
    token = _QUERY_TOKEN.search(prompt)
    if token:
        n = token.group(1)
        answer = f"ANS-{n}" if _hash(prompt) % 3 else "ANS-0"
    else:
        answer = "42"

    # Emit code only when the prompt asks for it, not merely because an
    # embedded draft happens to contain code tags.
    asks_for_code = "Generate Python code" in prompt or "corrected code between <CODE>" in prompt
    if asks_for_code:
        tag = "Code Solution" if "<Code Solution>" in prompt else "CODE"
        return (
            "Plan: compute the value directly and expose it as `output`.\n"
            f'<{tag}>\noutput = "{answer}"\nprint(output)\n</{tag}>'
        )
    return f"Working through the task step by step leads to a single consistent result. The answer is {answer}."
