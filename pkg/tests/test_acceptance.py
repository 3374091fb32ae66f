"""Acceptance criteria, one test per criterion at its stated tolerance.

Run with ``pytest -s tests/test_acceptance.py`` to see one PASS/FAIL line per
criterion. The sandbox-contract criterion drives the real worker process and
skips when sandbox-worker/ has not been built; everything else runs with
scripted backends and a stubbed sandbox.
"""

import functools
import json
import random
import time
from pathlib import Path

import pytest

from masgen.backends import CountingBackend, RecordingBackend, ResponseStore, ScriptedBackend
from masgen.corpus import GroundTruth, QueryFormat, QueryPool, QueryRecord, load_queries
from masgen.demo import demo_backend
from masgen.dsl import Marker, extract_block, fingerprint, parse_mas
from masgen.evaluator import PairResult, ScoreMatrix, VerdictKind, parse_verdict, score_matrix
from masgen.generator import batch_metrics
from masgen.pipeline import SFT_SYSTEM_PROMPT, export_sft, refine_all, refine_pair, save_pairs, select_pairs
from masgen.pool import builtin_pool
from masgen.runtime import count_calls, execute
from masgen.sandbox import SandboxStatus, ScriptedSandbox, WorkerSandbox

WORKER = Path(__file__).resolve().parent.parent / "sandbox-worker" / "dist" / "worker.js"


def criterion(name):
    def decorate(fn):
        @functools.wraps(fn)
        def wrapper(*args, **kwargs):
            try:
                result = fn(*args, **kwargs)
            except BaseException:
                print(f"\nACCEPTANCE {name}: FAIL")
                raise
            print(f"\nACCEPTANCE {name}: PASS")
            return result

        return wrapper

    return decorate


# ---------------------------------------------------------------------------
# Shared fixtures
# ---------------------------------------------------------------------------


def synthetic_corpus(path: Path, n: int = 20) -> Path:
    subdomains = ("alg", "geo", "code", "qa")
    with open(path, "w", encoding="utf-8") as handle:
        for i in range(1, n + 1):
            handle.write(json.dumps({
                "id": f"q{i}",
                "query": f"QUERY-{i}: how many widgets does scenario {i} produce?",
                "answer": f"ANS-{i}",
                "dataset": "synth",
                "subdomain": subdomains[i % len(subdomains)],
            }) + "\n")
    return path


def small_pool():
    pool = builtin_pool()
    pool.entries = [entry for entry in pool.entries if not entry.code_capable][:5]
    return pool


def build_dataset(queries, pool, executor_backend, judge, refiner, out_dir: Path, seed=11):
    out_dir.mkdir(parents=True, exist_ok=True)
    matrix = score_matrix(queries, pool, executor_backend, judge, sandbox=ScriptedSandbox())
    matrix.save(out_dir / "matrix.jsonl")
    selections = select_pairs(matrix, queries)
    pairs, drops = refine_all(selections, queries, pool, refiner, executor_backend, judge,
                              sandbox=ScriptedSandbox())
    save_pairs(pairs, out_dir / "pairs.jsonl")
    export_sft(pairs, SFT_SYSTEM_PROMPT, out_dir / "sft.jsonl", seed=seed)
    return matrix, selections, pairs, drops


# ---------------------------------------------------------------------------
# [PRIMARY] criteria
# ---------------------------------------------------------------------------


@criterion("selection-oracle-equivalence")
def test_selection_oracle_equivalence():
    rng = random.Random(12345)
    started = time.monotonic()
    for _ in range(500):
        n, m = rng.randint(1, 6), rng.randint(1, 5)
        names = [f"m{j}" for j in range(m)]
        matrix = ScoreMatrix([f"q{i}" for i in range(n)], names)
        subdomains = {}
        records = []
        for i in range(n):
            query_id = f"q{i}"
            subdomains[query_id] = rng.choice(["a", "b", "c"])
            records.append(QueryRecord(query_id, f"question {i}", GroundTruth("x"),
                                       dataset="d", subdomain=subdomains[query_id]))
            for j, name in enumerate(names):
                matrix.cells[(query_id, name)] = PairResult(query_id, name, rng.randint(0, 1))
        selections = select_pairs(matrix, QueryPool(records))

        groups = {}
        for record in records:
            groups.setdefault(f"d/{record.subdomain}", []).append(record.id)
        assert {s.group_key for s in selections} == set(groups)
        for selection in selections:
            members = groups[selection.group_key]
            cums = [sum(matrix.cells[(q, name)].score for q in members) for name in names]
            assert list(selection.cumulative) == cums
            best = selection.chosen_index
            assert all(cums[best] > cums[j] or (cums[best] == cums[j] and best <= j) for j in range(m))
            expected = {q for q in members if matrix.cells[(q, names[best])].score == 1}
            assert set(selection.retained_query_ids) == expected
    elapsed = time.monotonic() - started
    assert elapsed < 5.0, f"500 matrices took {elapsed:.2f}s (limit 5s)"


@criterion("inter-consistency-invariant")
def test_inter_consistency_invariant(tmp_path):
    queries = load_queries(synthetic_corpus(tmp_path / "q.jsonl"), QueryFormat.JSONL_GT)
    pool = small_pool()
    matrix, selections, pairs, _ = build_dataset(
        queries, pool, demo_backend(), demo_backend(model="judge"), demo_backend(model="refiner"),
        tmp_path / "build",
    )
    base_of = {}
    for selection in selections:
        chosen = fingerprint(pool.get(selection.chosen_name).program)
        for query_id in selection.retained_query_ids:
            base_of[query_id] = (selection.group_key, chosen)

    violations = 0
    per_group = {}
    for query_id, (group, digest) in base_of.items():
        per_group.setdefault(group, set()).add(digest)
    violations += sum(1 for digests in per_group.values() if len(digests) != 1)

    # the same invariant must hold for the pairs actually refined
    for pair in pairs:
        group, digest = base_of[pair.query_id]
        if fingerprint(pair.base) != digest:
            violations += 1
    assert violations == 0
    assert sum(len(s.retained_query_ids) for s in selections) > 0


@criterion("effectiveness-and-accept-rule")
def test_effectiveness_and_accept_rule(tmp_path):
    # scripted-refiner suite: accept / reject / missing-CODE / fallback-reasoning
    base = parse_mas('mas b\n\nprompt p """\nTask: {query}\n"""\n\ncall out = p(query=query)\nreturn out\n')
    refined_text = (
        'mas b2\n\nprompt p """\nRefined task: {query}\n"""\n\ncall out = p(query=query) role=p\nreturn out\n'
    )
    record = QueryRecord("q", "what is 4?", GroundTruth("4"), dataset="d")
    judge_ok = ["The answer is 4 in reply", "The answer is correct."]
    judge_bad = ["The answer is 5 in reply",
                 "The answer is incorrect. Correct Answer: 4 | Answer extracted: 5."]
    para = "<PARAGRAPH>\nfits the task.\n</PARAGRAPH>"

    accept = refine_pair(record, base, ScriptedBackend(queue=[f"<CODE>\n{refined_text}</CODE>\n{para}"]),
                         ScriptedBackend(queue=["the answer is 4"]), ScriptedBackend(queue=list(judge_ok)))
    assert accept.accepted and accept.s_refine >= accept.s_base
    assert fingerprint(accept.final) == fingerprint(parse_mas(refined_text))

    reject = refine_pair(record, base,
                         ScriptedBackend(queue=[f"<CODE>\n{refined_text}</CODE>\n{para}", para]),
                         ScriptedBackend(queue=["the answer is 5"]), ScriptedBackend(queue=list(judge_bad)))
    assert not reject.accepted and reject.s_refine == 0
    assert fingerprint(reject.final) == fingerprint(base)

    missing = refine_pair(record, base, ScriptedBackend(queue=["no code block", para]),
                          ScriptedBackend(queue=[]), ScriptedBackend(queue=[]))
    assert not missing.accepted and missing.refined is None
    assert fingerprint(missing.final) == fingerprint(base)

    fallback = refine_pair(record, base,
                           ScriptedBackend(queue=[f"<CODE>\nmas broken(\n</CODE>\n{para}", para]),
                           ScriptedBackend(queue=[]), ScriptedBackend(queue=[]))
    assert not fallback.accepted and fallback.reasoning == "fits the task."

    # every exported record's final program has recorded score 1 on its query
    queries = load_queries(synthetic_corpus(tmp_path / "q.jsonl"), QueryFormat.JSONL_GT)
    pool = small_pool()
    matrix, selections, pairs, _ = build_dataset(
        queries, pool, demo_backend(), demo_backend(model="judge"), demo_backend(model="refiner"),
        tmp_path / "build",
    )
    retained_score = {
        query_id: matrix.cell(query_id, selection.chosen_name).score
        for selection in selections for query_id in selection.retained_query_ids
    }
    for pair in pairs:
        if pair.accepted:
            assert pair.s_refine is not None and pair.s_refine >= pair.s_base
        else:
            assert retained_score[pair.query_id] == 1  # final = base, scored 1 during the sweep
        assert pair.s_base == 1


@criterion("call-count-oracle")
def test_call_count_oracle():
    pool = builtin_pool()
    backend = demo_backend()
    sandbox = ScriptedSandbox()
    agreements = 0
    for entry in pool:
        result = execute(entry.program, "QUERY-3: count widgets for scenario 3?", backend, sandbox=sandbox)
        assert result.ok, f"{entry.name} failed: {result.failure}"
        assert len(result.transcript.events) == count_calls(entry.program), entry.name
        agreements += 1
    assert agreements == len(pool)
    assert count_calls(pool.get("5_cot_sc").program) == 6
    assert count_calls(pool.get("3_debate").program) == 7


@criterion("dataset-build-determinism")
def test_dataset_build_determinism(tmp_path):
    started = time.monotonic()
    queries = load_queries(synthetic_corpus(tmp_path / "q.jsonl", n=20), QueryFormat.JSONL_GT)
    pool = small_pool()
    store = ResponseStore(tmp_path / "store.jsonl")
    inner = {name: CountingBackend(demo_backend(model=name)) for name in ("executor", "judge", "refiner")}
    backends = {name: RecordingBackend(counting, store) for name, counting in inner.items()}

    build_dataset(queries, pool, backends["executor"], backends["judge"], backends["refiner"],
                  tmp_path / "run1")
    calls_after_first = {name: counting.calls for name, counting in inner.items()}
    assert sum(calls_after_first.values()) > 0

    build_dataset(queries, pool, backends["executor"], backends["judge"], backends["refiner"],
                  tmp_path / "run2")
    for name, counting in inner.items():
        assert counting.calls == calls_after_first[name], f"{name} hit the network on the second run"

    for artifact in ("sft.jsonl", "matrix.jsonl", "pairs.jsonl"):
        first = (tmp_path / "run1" / artifact).read_bytes()
        second = (tmp_path / "run2" / artifact).read_bytes()
        assert first == second, f"{artifact} differs between runs"
    elapsed = time.monotonic() - started
    assert elapsed < 60.0, f"end-to-end determinism check took {elapsed:.1f}s (limit 60s)"


@criterion("verdict-parsing")
def test_verdict_parsing():
    from test_evaluator import VERDICT_FIXTURES

    assert len(VERDICT_FIXTURES) == 12
    hits = sum(1 for raw, kind in VERDICT_FIXTURES if parse_verdict(raw).kind is kind)
    assert hits == 12
    assert parse_verdict("I think maybe right").kind is VerdictKind.UNPARSEABLE
    assert parse_verdict("I think maybe right").score == 0


@criterion("export-round-trip")
def test_export_round_trip(tmp_path):
    queries = load_queries(synthetic_corpus(tmp_path / "q.jsonl"), QueryFormat.JSONL_GT)
    pool = small_pool()
    _, _, pairs, _ = build_dataset(
        queries, pool, demo_backend(), demo_backend(model="judge"), demo_backend(model="refiner"),
        tmp_path / "build",
    )
    final_of = {pair.query: fingerprint(pair.final) for pair in pairs}
    failures = 0
    rows = 0
    for line in (tmp_path / "build" / "sft.jsonl").read_text(encoding="utf-8").splitlines():
        rows += 1
        row = json.loads(line)
        program = parse_mas(extract_block(row["response"], [Marker.CODE_TAGS]))
        if fingerprint(program) != final_of[row["instruction"]]:
            failures += 1
    assert rows == len(pairs) > 0
    assert failures == 0


@criterion("generator-metrics")
def test_generator_metrics():
    from test_generator import BROKEN_RESPONSE, GOOD_RESPONSE, GenQuery

    responses = {
        "k1": GOOD_RESPONSE,
        "k2": GOOD_RESPONSE.replace("role=solver", "role=solver temp=0.1"),
        "k3": BROKEN_RESPONSE,
        "k4": GOOD_RESPONSE.replace("call final = solve(query=query) role=solver",
                                    "extract final = query marker=CODE_TAGS"),
    }

    def generator_responder(request):
        return responses[request.messages[-1].content.split()[0]]

    def executor_responder(request):
        return "right-answer" if "k1" in request.messages[-1].content else "wrong-answer"

    def judge_responder(request):
        prompt = request.messages[-1].content
        if "tasked with extracting" in prompt:
            token = "right-answer" if "right-answer" in prompt[prompt.rfind("===Solution:"):] else "wrong-answer"
            return f"The answer is {token} in reply"
        truth = prompt[prompt.rfind("===Ground truth answer:"):].split("===Reply:")[0]
        reply = prompt[prompt.rfind("===Reply:"):]
        if "right-answer" in truth and "right-answer" in reply:
            return "The answer is correct."
        return "The answer is incorrect. Correct Answer: x | Answer extracted: y."

    from masgen.runtime import RuntimeOptions

    queries = [GenQuery(f"k{i}", f"k{i} compute", GroundTruth("right-answer")) for i in range(1, 5)]
    metrics = batch_metrics(
        queries,
        ScriptedBackend(responder=generator_responder, model="gen"),
        ScriptedBackend(responder=executor_responder, model="exec"),
        ScriptedBackend(responder=judge_responder, model="judge"),
        options=RuntimeOptions(call_retries=0),
    )
    assert metrics.extractability == pytest.approx(0.75, abs=1e-9)
    assert metrics.executability == pytest.approx(0.667, abs=1e-3)
    assert metrics.accuracy == pytest.approx(0.5, abs=1e-9)


# ---------------------------------------------------------------------------
# [SECONDARY] sandbox contract (needs the built worker)
# ---------------------------------------------------------------------------

CORRECT_SOLUTION = """def add(a, b):
    return a + b
"""

OFF_BY_ONE_SOLUTION = """def add(a, b):
    if a == 0:
        return b
    return a + b + 1
"""

ADD_TESTS = ["assert add(1, 2) == 3", "assert add(0, 5) == 5", "assert add(-1, 1) == 0"]


@pytest.mark.skipif(not WORKER.exists(), reason="sandbox worker not built (sandbox-worker/dist/worker.js)")
@criterion("sandbox-contract")
def test_sandbox_contract():
    with WorkerSandbox(["node", str(WORKER)]) as sandbox:
        correct = sandbox.run_tests(CORRECT_SOLUTION, ADD_TESTS, "add", timeout_s=10)
        assert correct.status is SandboxStatus.OK
        assert correct.pass_rate == 1.0

        off_by_one = sandbox.run_tests(OFF_BY_ONE_SOLUTION, ADD_TESTS, "add", timeout_s=10)
        assert off_by_one.status is SandboxStatus.OK
        assert off_by_one.pass_rate == pytest.approx(1 / 3)

        started = time.monotonic()
        looped = sandbox.run_snippet("while True:\n    pass\n", timeout_s=2)
        elapsed = time.monotonic() - started
        assert looped.status is SandboxStatus.TIMEOUT
        assert elapsed < 3.0, f"timeout took {elapsed:.2f}s wall clock (limit 3s)"

        network = sandbox.run_snippet(
            "import urllib.request\noutput = urllib.request.urlopen('http://example.com').read()\n",
            timeout_s=10,
        )
        assert network.status is SandboxStatus.ERROR

        follow_up = sandbox.run_snippet("output = 2 + 2\n", timeout_s=10)
        assert follow_up.status is SandboxStatus.OK
        assert "4" in follow_up.output
