"""Command-line entry point.

    masgen run -q "..." [--config cfg.yaml]         answer one query end to end
    masgen pool list                                 show the program pool
    masgen pool exec --mas 5_cot_sc -q "..."         run one pool program
    masgen eval --dataset q.jsonl [--mas NAME]       score pool programs
    masgen eval --dataset q.jsonl --generator NAME   generator metrics
    masgen dataset build --queries q.jsonl --out d/  eval -> select -> refine -> export
    masgen stats d/sft.jsonl                         training-file statistics

Exit codes: 0 success, 2 configuration/usage errors, 3 generation or
execution failures.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

from .backends import BackendError
from .config import Config, ConfigError, load_config
from .corpus import CorpusError, QueryFormat, load_queries
from .dsl import MaslError, fingerprint
from .evaluator import ScoreMatrix, score_matrix, summary_table
from .generator import batch_metrics, answer_query, primed_profile, trained_profile
from .pipeline import (
    SFT_SYSTEM_PROMPT,
    PipelineError,
    dataset_stats,
    export_sft,
    load_pairs,
    load_selections,
    refine_all,
    save_pairs,
    save_selections,
    select_pairs,
)
from .pool import UnknownName
from .runtime import Executor, count_calls
from .sandbox import SandboxFailure

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_FAILURE = 3

STAGES = ("eval", "select", "refine", "export")


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = load_config(args.config or os.environ.get("MASGEN_CONFIG"))
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.handler(args, config)
    except (ConfigError, CorpusError, UnknownName, FileNotFoundError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except (MaslError, PipelineError, SandboxFailure, BackendError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_FAILURE


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="masgen", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--config", help="path to config YAML (or $MASGEN_CONFIG)")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="generate a program for a query and execute it")
    query = run.add_mutually_exclusive_group(required=True)
    query.add_argument("-q", "--query")
    query.add_argument("--query-file", help="read the query from a file")
    run.add_argument("--generator", default="generator", help="backend name for generation")
    run.add_argument("--executor", default="executor", help="backend name for execution")
    run.add_argument("--primed", action="store_true",
                     help="prompt an off-the-shelf model (adds the language primer)")
    run.set_defaults(handler=cmd_run)

    pool = sub.add_parser("pool", help="inspect or run pool programs")
    pool_sub = pool.add_subparsers(dest="pool_command", required=True)
    pool_list = pool_sub.add_parser("list", help="list pool entries")
    pool_list.set_defaults(handler=cmd_pool_list)
    pool_exec = pool_sub.add_parser("exec", help="run one pool program on a query")
    pool_exec.add_argument("--mas", required=True)
    pool_exec.add_argument("-q", "--query", required=True)
    pool_exec.add_argument("--executor", default="executor")
    pool_exec.set_defaults(handler=cmd_pool_exec)

    evaluate = sub.add_parser("eval", help="score programs or the generator on a query file")
    evaluate.add_argument("--dataset", "--queries", dest="dataset", required=True,
                          help="query file (line-delimited JSON)")
    evaluate.add_argument("--format", choices=("gt", "code"), default="gt")
    target = evaluate.add_mutually_exclusive_group()
    target.add_argument("--mas", help="evaluate one pool program (default: the whole pool)")
    target.add_argument("--generator", help="evaluate the named generator backend instead")
    evaluate.add_argument("--out", help="directory for result files")
    evaluate.set_defaults(handler=cmd_eval)

    dataset = sub.add_parser("dataset", help="dataset construction stages")
    dataset_sub = dataset.add_subparsers(dest="dataset_command", required=True)
    build = dataset_sub.add_parser("build", help="run eval/select/refine/export stages")
    build.add_argument("--queries", required=True)
    build.add_argument("--format", choices=("gt", "code"), default="gt")
    build.add_argument("--out", required=True, help="stage output directory")
    build.add_argument("--stages", default="eval,select,refine,export",
                       help="comma-separated subset of: eval,select,refine,export")
    build.set_defaults(handler=cmd_dataset_build)

    stats = sub.add_parser("stats", help="statistics over an exported training file")
    stats.add_argument("path")
    stats.set_defaults(handler=cmd_stats)
    return parser


def _read_query(args) -> str:
    if args.query is not None:
        return args.query
    return Path(args.query_file).read_text(encoding="utf-8").strip()


def _query_format(name: str) -> QueryFormat:
    return QueryFormat.JSONL_GT if name == "gt" else QueryFormat.JSONL_CODE


def cmd_run(args, config: Config) -> int:
    query = _read_query(args)
    generator = config.backend(args.generator)
    executor = config.backend(args.executor)
    profile = primed_profile() if args.primed else trained_profile()
    outcome = answer_query(query, generator, executor, sandbox=config.make_sandbox(),
                           limits=config.limits, options=config.runtime, profile=profile)
    if not outcome.extractable:
        print(f"generation failed (not extractable): {outcome.parse_error}", file=sys.stderr)
        return EXIT_FAILURE
    if not outcome.executable:
        print(f"execution failed: {outcome.execution_failure}", file=sys.stderr)
        return EXIT_FAILURE
    print(outcome.answer)
    print(f"[program {outcome.program.name}: {count_calls(outcome.program)} calls, "
          f"transcript {outcome.transcript_digest[:12]}]", file=sys.stderr)
    return EXIT_OK


def cmd_pool_list(args, config: Config) -> int:
    pool = config.load_pool()
    for entry in pool:
        print(f"{entry.name}\tcalls={count_calls(entry.program)}\tcode={'yes' if entry.code_capable else 'no'}"
              f"\ttags={','.join(entry.tags)}\t{fingerprint(entry.program)[:12]}")
    return EXIT_OK


def cmd_pool_exec(args, config: Config) -> int:
    pool = config.load_pool()
    entry = pool.get(args.mas)
    executor = Executor(config.backend(args.executor), sandbox=config.make_sandbox(),
                        limits=config.limits, options=config.runtime)
    result = executor.run(entry.program, args.query)
    if not result.ok:
        print(f"execution failed ({result.status.value}): {result.failure}", file=sys.stderr)
        return EXIT_FAILURE
    print(result.answer)
    print(f"[{len(result.transcript.events)} calls, transcript {result.transcript.digest[:12]}]",
          file=sys.stderr)
    return EXIT_OK


def cmd_eval(args, config: Config) -> int:
    queries = load_queries(args.dataset, _query_format(args.format))
    out_dir = Path(args.out) if args.out else None
    if out_dir:
        out_dir.mkdir(parents=True, exist_ok=True)

    if args.generator:
        metrics = batch_metrics(
            queries, config.backend(args.generator), config.backend("executor"), config.backend("judge"),
            sandbox=config.make_sandbox(), limits=config.limits, options=config.runtime,
            parallelism=config.parallelism,
            outcomes_path=out_dir / "outcomes.jsonl" if out_dir else None,
        )
        print(metrics.report(), end="")
        return EXIT_OK

    pool = config.load_pool()
    if args.mas:
        entry = pool.get(args.mas)
        pool = type(pool)(entries=[entry])
    matrix = score_matrix(
        queries, pool, config.backend("executor"), config.backend("judge"),
        sandbox=config.make_sandbox(), limits=config.limits, options=config.runtime,
        parallelism=config.parallelism,
        results_path=out_dir / "matrix.partial.jsonl" if out_dir else None,
    )
    if out_dir:
        matrix.save(out_dir / "matrix.jsonl")
    print(summary_table(matrix, queries), end="")
    return EXIT_OK


def cmd_dataset_build(args, config: Config) -> int:
    stages = [stage.strip() for stage in args.stages.split(",") if stage.strip()]
    unknown = [stage for stage in stages if stage not in STAGES]
    if unknown:
        print(f"error: unknown stages {unknown}; pick from {STAGES}", file=sys.stderr)
        return EXIT_CONFIG

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    queries = load_queries(args.queries, _query_format(args.format))
    pool = config.load_pool()
    matrix_path = out_dir / "matrix.jsonl"
    selections_path = out_dir / "selections.jsonl"
    pairs_path = out_dir / "pairs.jsonl"
    export_path = out_dir / "sft.jsonl"

    if "eval" in stages:
        sandbox = config.make_sandbox()
        matrix = score_matrix(
            queries, pool, config.backend("executor"), config.backend("judge"), sandbox=sandbox,
            limits=config.limits, options=config.runtime, parallelism=config.parallelism,
            results_path=out_dir / "matrix.partial.jsonl",
            transcripts_path=out_dir / "transcripts.jsonl",
        )
        matrix.save(matrix_path)
        print(f"eval: {len(matrix.query_ids)} queries x {len(matrix.mas_names)} programs -> {matrix_path}")

    if "select" in stages:
        matrix = ScoreMatrix.load(matrix_path, [q.id for q in queries], pool.names())
        selections = select_pairs(matrix, queries)
        save_selections(selections, selections_path)
        retained = sum(len(s.retained_query_ids) for s in selections)
        print(f"select: {len(selections)} groups, {retained} retained pairs -> {selections_path}")

    if "refine" in stages:
        selections = load_selections(selections_path)
        pairs, drops = refine_all(
            selections, queries, pool, config.backend("refiner"), config.backend("executor"),
            config.backend("judge"), sandbox=config.make_sandbox(), limits=config.limits,
            options=config.runtime, parallelism=config.parallelism,
        )
        save_pairs(pairs, pairs_path)
        accepted = sum(1 for p in pairs if p.accepted)
        print(f"refine: {len(pairs)} pairs ({accepted} refined accepted, {len(drops)} dropped) -> {pairs_path}")

    if "export" in stages:
        pairs = load_pairs(pairs_path)
        manifest_extra = {
            "pool": {entry.name: fingerprint(entry.program) for entry in pool},
            "backends": {name: spec.model for name, spec in sorted(config.backends.items())},
        }
        count = export_sft(pairs, SFT_SYSTEM_PROMPT, export_path, seed=config.export_seed,
                           manifest_extra=manifest_extra)
        print(f"export: {count} records -> {export_path}")

    return EXIT_OK


def cmd_stats(args, config: Config) -> int:
    print(dataset_stats(args.path).table(), end="")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
