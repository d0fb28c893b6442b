"""Command-line entry point: ``lqot <subcommand> ...``.

Exit codes: 0 success, 1 usage error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from . import adjacency, harness, kge
from .fuzzy import execute, format_trace, top_k
from .kg import load_triples, load_triples_with_vocab, split_edges, write_triples
from .llm import FusionConfig, KGOracleProvider, LLMHook, make_provider, relation_templates
from .query import SHAPES, parse, write_workload

log = logging.getLogger("lqot")

USAGE_ERROR = 1
RUNTIME_ERROR = 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(USAGE_ERROR, f"{self.prog}: error: {message}\n")


def _existing_file(value: str) -> Path:
    p = Path(value)
    if not p.is_file():
        raise argparse.ArgumentTypeError(f"no such file: {value}")
    return p


def _existing_dir(value: str) -> Path:
    p = Path(value)
    if not p.is_dir():
        raise argparse.ArgumentTypeError(f"no such directory: {value}")
    return p


def _header(**settings) -> None:
    print("# " + " ".join(f"{k}={v}" for k, v in settings.items()))


def _train_graph(args):
    full = load_triples(args.kg)
    return full, (load_triples_with_vocab(args.train, full.vocab) if args.train else full)


# -- subcommands -------------------------------------------------------------------

def cmd_split(args) -> None:
    kg = load_triples(args.kg)
    kept, removed = split_edges(kg, args.keep, args.seed)
    write_triples(args.out, kg.vocab, kept.triples)
    if args.removed:
        write_triples(args.removed, kg.vocab, removed)
    print(f"kept {len(kept)} of {len(kg)} triples -> {args.out}")


def cmd_train(args) -> None:
    full, train_kg = _train_graph(args)
    config = kge.TrainConfig(args.dim, args.epochs, args.lr, args.l2, args.batch_size, args.seed)
    _header(dim=config.dim, epochs=config.epochs, lr=config.learning_rate, l2=config.l2,
            batch_size=config.batch_size, seed=config.seed)
    model, history = kge.train(kge.init_model(full.vocab, config), train_kg, config)
    kge.save_model(model, args.out)
    if history:
        print(f"loss {history[0]:.4f} -> {history[-1]:.4f}; model -> {args.out}")


def cmd_build_adj(args) -> None:
    _full, train_kg = _train_graph(args)
    if args.model is None:
        matrices = adjacency.boolean_matrices(train_kg)
        _header(adjacency="boolean")
    else:
        config = adjacency.AdjacencyConfig(args.delta, args.top_k, args.floor)
        _header(adjacency="neural", delta=config.delta, top_k=config.top_k, floor=config.floor)
        matrices = adjacency.build_all(kge.load_model(args.model), train_kg, config)
    adjacency.save_matrices(args.out, matrices, binary=args.binary)
    print(f"{len(matrices)} matrices, {sum(m.nnz for m in matrices.values())} entries -> {args.out}")


def cmd_gen_queries(args) -> None:
    kg = load_triples(args.kg)
    shapes = [s.strip() for s in args.shapes.split(",") if s.strip()]
    items = harness.sample_workload(kg, shapes, args.count, args.seed)
    write_workload(args.out, items, kg.vocab)
    print(f"{len(items)} queries -> {args.out}")


def cmd_query(args) -> None:
    full, train_kg = _train_graph(args)
    vocab = full.vocab
    matrices = adjacency.load_matrices(args.adj, vocab)
    tree = parse(args.q, vocab)
    fusion = FusionConfig(theta=args.theta, alpha=args.alpha, evaluate_at=args.evaluate_at)
    _header(theta=fusion.theta, alpha=fusion.alpha, samples=fusion.samples,
            evaluate_at=fusion.evaluate_at, provider=args.provider or "none", top=args.top)
    hook = None
    if args.provider:
        if args.provider == "oracle":
            templates = relation_templates(train_kg, None)
            provider = KGOracleProvider(full, {r: t.text for r, t in templates.items()})
        else:
            provider = make_provider(args.provider, cache_dir=args.cache_dir)
            templates = relation_templates(train_kg, provider)
        hook = LLMHook(provider, templates, matrices, vocab, fusion).for_query(tree)
    trace = [] if args.trace else None
    vec = execute(tree, matrices, n=vocab.n_entities, hook=hook, trace=trace)
    for rank, (name, value) in enumerate(top_k(vec, args.top, vocab), start=1):
        print(f"{rank}\t{name}\t{value:.6f}")
    if trace is not None:
        print(format_trace(trace, vocab), file=sys.stderr)


def cmd_eval(args) -> None:
    config = harness.load_config(args.config)
    if args.threads is not None:
        config.threads = args.threads
    if args.fixtures_out:
        config.fixtures_out = args.fixtures_out
    report = harness.run_experiment(config)
    print(report.table())
    csv_path = args.csv or Path(args.config).with_suffix(".csv")
    Path(csv_path).write_text(report.csv_text(), encoding="utf-8")
    print(f"# csv -> {csv_path}")


# -- parser ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="lqot", description="Fuzzy-logic query answering over incomplete knowledge graphs.")
    p.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")
    sub = p.add_subparsers(dest="command", required=True, metavar="command")
    d = argparse.ArgumentDefaultsHelpFormatter

    s = sub.add_parser("split", formatter_class=d, help="randomly keep a fraction of the triples")
    s.add_argument("--kg", type=_existing_file, required=True, help="full triple file (TSV)")
    s.add_argument("--keep", type=float, default=0.5, help="fraction of triples to keep")
    s.add_argument("--seed", type=int, default=0, help="split seed")
    s.add_argument("--out", required=True, help="kept triples output path")
    s.add_argument("--removed", help="removed triples output path")
    s.set_defaults(func=cmd_split)

    defaults = kge.TrainConfig()
    s = sub.add_parser("train", formatter_class=d, help="train a ComplEx model")
    s.add_argument("--kg", type=_existing_file, required=True, help="full triple file; fixes the vocabulary")
    s.add_argument("--train", type=_existing_file, help="training triples (default: --kg)")
    s.add_argument("--out", required=True, help="model checkpoint output path")
    s.add_argument("--dim", type=int, default=defaults.dim, help="embedding dimension")
    s.add_argument("--epochs", type=int, default=defaults.epochs, help="training epochs")
    s.add_argument("--lr", type=float, default=defaults.learning_rate, help="learning rate")
    s.add_argument("--l2", type=float, default=defaults.l2, help="L2 penalty")
    s.add_argument("--batch-size", type=int, default=defaults.batch_size, help="mini-batch size")
    s.add_argument("--seed", type=int, default=defaults.seed, help="initialisation and shuffling seed")
    s.set_defaults(func=cmd_train)

    adj = adjacency.AdjacencyConfig()
    s = sub.add_parser("build-adj", formatter_class=d, help="build per-relation adjacency matrices")
    s.add_argument("--kg", type=_existing_file, required=True, help="full triple file; fixes the vocabulary")
    s.add_argument("--train", type=_existing_file, help="observed triples (default: --kg)")
    s.add_argument("--model", type=_existing_file, help="ComplEx checkpoint; omit for boolean matrices")
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--delta", type=float, default=adj.delta, help="cap 1-delta on predicted entries")
    s.add_argument("--top-k", type=int, default=adj.top_k, help="predicted entries kept per row")
    s.add_argument("--floor", type=float, default=adj.floor, help="drop predicted entries below this")
    s.add_argument("--binary", action="store_true", help="write the binary format")
    s.set_defaults(func=cmd_build_adj)

    s = sub.add_parser("gen-queries", formatter_class=d, help="sample a query workload")
    s.add_argument("--kg", type=_existing_file, required=True, help="triple file gold answers come from")
    s.add_argument("--shapes", default=",".join(SHAPES), help="comma-separated shapes")
    s.add_argument("--count", type=int, default=50, help="queries per shape")
    s.add_argument("--seed", type=int, default=0, help="sampling seed")
    s.add_argument("--out", required=True, help="workload output path")
    s.set_defaults(func=cmd_gen_queries)

    fusion = FusionConfig()
    s = sub.add_parser("query", formatter_class=d, help="answer one query")
    s.add_argument("--kg", type=_existing_file, required=True, help="full triple file; fixes the vocabulary")
    s.add_argument("--train", type=_existing_file, help="observed triples for question templates (default: --kg)")
    s.add_argument("--adj", type=_existing_dir, required=True, help="adjacency matrix directory")
    s.add_argument("--q", "--query", dest="q", required=True, help="query in the s-expression syntax")
    s.add_argument("--top", type=int, default=10, help="answers to print")
    s.add_argument("--provider", help="LLM provider: mock:<file>, oracle, garbage, fail or live")
    s.add_argument("--cache-dir", help="cache provider responses here")
    s.add_argument("--theta", type=float, default=fusion.theta, help="likelihood-ratio threshold")
    s.add_argument("--alpha", type=float, default=fusion.alpha, help="LLM confidence weight")
    s.add_argument("--evaluate-at", choices=("off", "final", "all"), default=fusion.evaluate_at,
                   help="where to run the answer-evaluation prompt")
    s.add_argument("--trace", action="store_true", help="print per-node vectors to stderr")
    s.set_defaults(func=cmd_query)

    s = sub.add_parser("eval", formatter_class=d, help="run an experiment from a config file")
    s.add_argument("--config", type=_existing_file, required=True, help="key = value experiment config")
    s.add_argument("--csv", help="CSV report path (default: config path with .csv suffix)")
    s.add_argument("--threads", type=int, default=os.cpu_count() or 1, help="worker threads for queries")
    s.add_argument("--fixtures-out", help="record provider responses to this fixture file")
    s.set_defaults(func=cmd_eval)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=[logging.WARNING, logging.INFO, logging.DEBUG][min(args.verbose, 2)],
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except Exception as exc:
        log.debug("failure", exc_info=True)
        print(f"lqot {args.command}: {exc}", file=sys.stderr)
        return RUNTIME_ERROR
    return 0


if __name__ == "__main__":
    sys.exit(main())
