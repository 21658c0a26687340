"""Command-line driver: learn, sample, synth, evaluate, bench."""

from __future__ import annotations

import argparse
import json
import logging
import sys

from . import io
from .bench import bench_suite, learn, write_bench_csv
from .metrics import evaluate_run
from .search import SearchConfig
from .synth import SyntheticSuite, make_synthetic_suite, sample_network


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="idealparent",
                                 description="Structure learning with ideal-parent screening.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("learn", help="learn a network from a CSV dataset")
    p.add_argument("data")
    p.add_argument("-o", "--out", required=True, help="network JSON output")
    p.add_argument("--cpd", choices=["linear", "sigmoid"], default="linear")
    p.add_argument("--mode", choices=["greedy", "ideal"], default="ideal")
    p.add_argument("-K", type=int, dest="k")
    p.add_argument("--max-indegree", type=int)
    p.add_argument("--two-layer", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--trace", help="write search trace as JSON lines")
    p.add_argument("--missing-token", action="append",
                   help="cell value treated as missing (repeatable; default '' and NA)")
    p.add_argument("--no-standardize", action="store_true",
                   help="keep raw column scales (default: standardize)")
    p.add_argument("--dot", help="also write a Graphviz DOT file")

    p = sub.add_parser("sample", help="forward-sample a network")
    p.add_argument("network")
    p.add_argument("-M", type=int, required=True, dest="m")
    p.add_argument("-o", "--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--hidden-out", help="write hidden columns here")

    p = sub.add_parser("synth", help="generate a synthetic benchmark bundle")
    p.add_argument("kind", choices=["linear", "sigmoid", "two_layer"])
    p.add_argument("-N", type=int, required=True, dest="n")
    p.add_argument("--hidden", type=int, default=0)
    p.add_argument("--m-grid", default="25,50,100,200,500")
    p.add_argument("--test-size", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--out", required=True, help="bundle directory")

    p = sub.add_parser("evaluate", help="compare a learned network with a golden one")
    p.add_argument("learned")
    p.add_argument("golden")
    p.add_argument("--train", required=True)
    p.add_argument("--test", required=True)

    p = sub.add_parser("bench", help="paired greedy vs ideal runs on a synth bundle")
    p.add_argument("bundle")
    p.add_argument("-K", type=int, action="append", dest="ks",
                   help="K values for ideal mode (repeatable; default 2 and 5)")
    p.add_argument("--m", type=int, action="append", dest="ms", help="restrict to these M")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--out", help="CSV output (default stdout)")
    return ap


def _cmd_learn(args) -> int:
    tokens = tuple(args.missing_token) if args.missing_token else None
    data = io.load_csv(args.data, tokens, standardize=not args.no_standardize)
    cfg = SearchConfig(k=args.k, mode=args.mode, cpd=args.cpd, seed=args.seed,
                       max_in_degree=args.max_indegree, two_layer=args.two_layer)
    graph, trace = learn(data, cfg)
    io.save_network(graph, args.out)
    if args.trace:
        io.write_jsonl(trace.records, args.trace)
    if args.dot:
        with open(args.dot, "w") as fh:
            fh.write(io.to_dot(graph))
    print(f"{graph.n_edges()} edges, {len(graph.hidden_indices())} hidden -> {args.out}")
    return 0


def _cmd_sample(args) -> int:
    graph = io.load_network(args.network)
    data, hidden = sample_network(graph, args.m, args.seed, return_hidden=True)
    io.save_csv(data, args.out)
    if args.hidden_out and hidden is not None:
        io.save_csv(hidden, args.hidden_out)
    return 0


def _cmd_synth(args) -> int:
    grid = [int(x) for x in args.m_grid.split(",") if x.strip()]
    suite = make_synthetic_suite(args.kind, args.n, args.hidden, grid, args.seed,
                                 test_size=args.test_size)
    suite.save(args.out)
    return 0


def _cmd_evaluate(args) -> int:
    report = evaluate_run(io.load_network(args.learned), io.load_network(args.golden),
                          io.load_csv(args.train), io.load_csv(args.test))
    print(json.dumps(report.as_row(), indent=2))
    return 0


def _cmd_bench(args) -> int:
    suite = SyntheticSuite.load(args.bundle)
    cells = [("greedy", None)] + [("ideal", k) for k in (args.ks or [2, 5])]
    rows = bench_suite(suite, cells, args.ms, args.seed)
    if args.out:
        with open(args.out, "w", newline="") as fh:
            write_bench_csv(rows, fh)
    else:
        write_bench_csv(rows, sys.stdout)
    return 0


COMMANDS = {"learn": _cmd_learn, "sample": _cmd_sample, "synth": _cmd_synth,
            "evaluate": _cmd_evaluate, "bench": _cmd_bench}


def cli_main(argv=None) -> int:
    parser = _parser()
    args = parser.parse_args(argv)
    if args.command == "learn" and args.mode == "ideal" and args.k is None:
        parser.error("--mode ideal requires -K (candidates per ideal profile)")
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(cli_main())
