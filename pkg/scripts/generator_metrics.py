#!/usr/bin/env python3
"""Measure a generator backend: extractability, executability, accuracy.

Runs query -> generated program -> execution -> scoring for every record in a
query file and prints the three nested fractions. Defaults to the offline demo
backends; point --config at a real deployment to measure an actual endpoint.

Usage:
    python scripts/generator_metrics.py --queries out/demo/queries.jsonl
    python scripts/generator_metrics.py --queries q.jsonl --config deploy.yaml --primed
"""

import argparse
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from masgen.config import load_config
from masgen.corpus import QueryFormat, load_queries
from masgen.generator import batch_metrics, primed_profile, trained_profile


def main():
    parser = argparse.ArgumentParser(description=__doc__.split("\n", 1)[0])
    parser.add_argument("--queries", required=True)
    parser.add_argument("--format", choices=("gt", "code"), default="gt")
    parser.add_argument("--config", default=None, help="config YAML (default: demo backends)")
    parser.add_argument("--primed", action="store_true",
                        help="use the grammar-primed profile for off-the-shelf models")
    parser.add_argument("--out", default=None, help="write per-query outcome records here")
    parser.add_argument("--parallelism", type=int, default=4)
    args = parser.parse_args()

    config = load_config(args.config)
    fmt = QueryFormat.JSONL_GT if args.format == "gt" else QueryFormat.JSONL_CODE
    queries = load_queries(args.queries, fmt)
    profile = primed_profile() if args.primed else trained_profile()

    metrics = batch_metrics(
        queries,
        config.backend("generator"),
        config.backend("executor"),
        config.backend("judge"),
        sandbox=config.make_sandbox(),
        limits=config.limits,
        options=config.runtime,
        profile=profile,
        parallelism=args.parallelism,
        outcomes_path=args.out,
    )
    print(metrics.report(), end="")


if __name__ == "__main__":
    main()
