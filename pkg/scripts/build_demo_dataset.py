#!/usr/bin/env python3
"""End-to-end dataset construction on a synthetic corpus, fully offline.

Generates verifiable toy queries (ground truth ANS-<n> for QUERY-<n>), sweeps
them against the built-in program pool with the deterministic demo backends,
selects and refines pairs, and exports training records.

Usage:
    python scripts/build_demo_dataset.py --out out/demo [--n-queries 20] [--seed 11]
"""

import argparse
import json
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from masgen.corpus import QueryFormat, load_queries
from masgen.demo import demo_backend
from masgen.evaluator import score_matrix, summary_table
from masgen.pipeline import SFT_SYSTEM_PROMPT, dataset_stats, export_sft, refine_all, save_pairs, select_pairs
from masgen.pool import builtin_pool
from masgen.sandbox import ScriptedSandbox


def write_corpus(path: Path, n: int) -> Path:
    subdomains = ("algebra", "geometry", "logic", "trivia")
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


def main():
    parser = argparse.ArgumentParser(description=__doc__.split("\n", 1)[0])
    parser.add_argument("--out", default="out/demo", help="output directory (default: out/demo)")
    parser.add_argument("--n-queries", type=int, default=20)
    parser.add_argument("--seed", type=int, default=11, help="export shuffle seed")
    parser.add_argument("--include-code", action="store_true",
                        help="keep code-capable pool programs (needs the built sandbox worker)")
    args = parser.parse_args()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    queries = load_queries(write_corpus(out / "queries.jsonl", args.n_queries), QueryFormat.JSONL_GT)

    pool = builtin_pool()
    sandbox = ScriptedSandbox()
    if args.include_code:
        from masgen.sandbox import WorkerSandbox

        worker = Path(__file__).resolve().parent.parent / "sandbox-worker" / "dist" / "worker.js"
        sandbox = WorkerSandbox(["node", str(worker)])
    else:
        pool.entries = [e for e in pool.entries if not e.code_capable]

    executor = demo_backend(model="demo-executor")
    judge = demo_backend(model="demo-judge")
    refiner = demo_backend(model="demo-refiner")

    print(f"[1/4] scoring {len(queries)} queries x {len(pool)} programs")
    matrix = score_matrix(queries, pool, executor, judge, sandbox=sandbox, parallelism=4,
                          results_path=out / "matrix.partial.jsonl")
    matrix.save(out / "matrix.jsonl")
    print(summary_table(matrix, queries))

    print("[2/4] selecting one program per metadata group")
    selections = select_pairs(matrix, queries)
    for selection in selections:
        print(f"  {selection.group_key}: {selection.chosen_name} "
              f"(cumulative {list(selection.cumulative)}, retained {len(selection.retained_query_ids)})")

    print("[3/4] refining retained pairs")
    pairs, drops = refine_all(selections, queries, pool, refiner, executor, judge, sandbox=sandbox,
                              parallelism=4)
    save_pairs(pairs, out / "pairs.jsonl")
    accepted = sum(1 for p in pairs if p.accepted)
    print(f"  {len(pairs)} pairs, {accepted} refinements accepted, {len(drops)} dropped")

    print("[4/4] exporting training records")
    count = export_sft(pairs, SFT_SYSTEM_PROMPT, out / "sft.jsonl", seed=args.seed)
    print(f"  wrote {count} records to {out / 'sft.jsonl'}")
    print()
    print(dataset_stats(out / "sft.jsonl").table())


if __name__ == "__main__":
    main()
