"""Command-line entry point: ``patientkg <subcommand> ...``.

Exit codes: 0 success, 1 runtime failure, 2 usage or validation failure.
Every subcommand writes a ``manifest.json`` next to its outputs.
"""

import argparse
import hashlib
import json
import logging
import sys
from dataclasses import asdict, replace
from datetime import datetime, timezone
from pathlib import Path

from . import __version__
from .entropy import corpus_entropy_report, standard_ablation_filters
from .errors import ValidationError
from .ingest import build_corpus, load_corpus, read_documents, read_triples
from .kg import (
    AblationFilter,
    build_graphs,
    export_dot,
    filter_graph,
    graph_stats,
    read_graph_archive,
    write_graph_archive,
)
from .model import EncoderConfig, PrecomputedEncoder
from .train import Checkpoint, TrainConfig, evaluate, load_config, train

log = logging.getLogger("patientkg")


class UsageError(ValidationError):
    pass


def file_digest(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return "sha256:" + h.hexdigest()


def _existing(path, flag):
    if path is None:
        return None
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"{flag}: no such file: {path}")
    return p


def _write_text(path, text):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _write_json(path, obj):
    _write_text(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


class Manifest:
    def __init__(self, command, args, inputs):
        self.record = {
            "command": command,
            "argv": getattr(args, "argv", None) or sys.argv[1:],
            "tool_version": __version__,
            "inputs": {name: {"path": str(p), "digest": file_digest(p)} for name, p in inputs.items() if p},
            "seed": getattr(args, "seed", None),
            "started": datetime.now(timezone.utc).isoformat(),
        }

    def write(self, out_dir, **extra):
        self.record.update(extra)
        self.record["finished"] = datetime.now(timezone.utc).isoformat()
        _write_json(Path(out_dir) / "manifest.json", self.record)


def _filter_from(args):
    try:
        return AblationFilter.parse(args.filter or [])
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _graphs_for(corpus, args):
    """Graphs from --graphs (archive) or built from the corpus triples, then filtered."""
    flt = _filter_from(args)
    if getattr(args, "graphs", None):
        graphs = read_graph_archive(args.graphs)
        missing = [d.doc_id for d in corpus.documents if d.doc_id not in graphs]
        if missing:
            raise ValidationError(f"graph archive lacks documents: {', '.join(missing[:10])}")
        return {d.doc_id: filter_graph(graphs[d.doc_id], flt) for d in corpus.documents}
    return build_graphs(corpus, flt)


def _out_dir(path):
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p


# -- subcommands ----------------------------------------------------------------


def cmd_build_graphs(args):
    docs = _existing(args.docs, "--docs")
    triples = _existing(args.triples, "--triples")
    splits = _existing(args.splits, "--splits")
    manifest = Manifest("build-graphs", args, {"docs": docs, "triples": triples, "splits": splits})
    corpus = load_corpus(docs, triples_path=triples, splits_path=splits)
    flt = _filter_from(args)
    graphs = build_graphs(corpus, flt)
    out = _out_dir(args.out)
    write_graph_archive(out / "graphs.jsonl", graphs)
    stats = graph_stats(corpus, graphs)
    _write_text(out / "stats.json", stats.to_json() + "\n")
    _write_text(out / "stats.txt", stats.to_table())
    print(stats.to_table(), end="")
    manifest.write(out, config={"filter": flt.describe()}, outputs=["graphs.jsonl", "stats.json", "stats.txt"])


def cmd_entropy(args):
    docs = _existing(args.docs, "--docs")
    graphs_path = _existing(args.graphs, "--graphs")
    triples = _existing(args.triples, "--triples")
    if graphs_path is None and triples is None:
        raise UsageError("one of --graphs or --triples is required")
    manifest = Manifest("entropy", args, {"docs": docs, "graphs": graphs_path, "triples": triples})
    texts = read_documents(docs)
    if not texts:
        raise ValidationError(f"{docs}: corpus is empty")
    corpus = build_corpus(texts, read_triples(triples) if triples else [])
    graphs = _graphs_for(corpus, args)
    filters = standard_ablation_filters() if args.ablate_all else []
    report = corpus_entropy_report(corpus, graphs, filters, mode=args.mode)
    if report.empty_graphs:
        log.warning("every serialized graph is empty; graph entropy reported as 0")
    out = _out_dir(args.out)
    _write_text(out / "entropy.json", report.to_json() + "\n")
    _write_text(out / "entropy.txt", report.to_table())
    print(report.to_table(), end="")
    manifest.write(
        out,
        config={"mode": args.mode, "ablate_all": args.ablate_all, "filter": _filter_from(args).describe()},
        outputs=["entropy.json", "entropy.txt"],
    )


def _load_encoder(args):
    path = _existing(getattr(args, "token_vectors", None), "--token-vectors")
    return PrecomputedEncoder.from_json_lines(path) if path else None


def _corpus_inputs(args):
    paths = {
        "docs": _existing(args.docs, "--docs"),
        "labels": _existing(args.labels, "--labels"),
        "splits": _existing(args.splits, "--splits"),
        "triples": _existing(args.triples, "--triples"),
        "graphs": _existing(args.graphs, "--graphs"),
        "token_vectors": _existing(getattr(args, "token_vectors", None), "--token-vectors"),
    }
    if paths["triples"] is None and paths["graphs"] is None:
        raise UsageError("one of --graphs or --triples is required")
    return paths


def cmd_train(args):
    paths = _corpus_inputs(args)
    config_path = _existing(args.config, "--config")
    manifest = Manifest("train", args, {**paths, "config": config_path})
    model_kwargs, train_cfg = load_config(config_path) if config_path else ({}, TrainConfig())
    if args.seed is not None:
        train_cfg = replace(train_cfg, seed=args.seed)
    if args.epochs is not None:
        train_cfg = replace(train_cfg, epochs=args.epochs)
    manifest.record["seed"] = train_cfg.seed

    corpus = load_corpus(paths["docs"], paths["labels"], paths["triples"], paths["splits"])
    graphs = _graphs_for(corpus, args)
    model_cfg = EncoderConfig(label_count=len(corpus.label_space), **model_kwargs)
    result = train(corpus, graphs, model_cfg, train_cfg, encoder=_load_encoder(args))

    out = _out_dir(args.out)
    result.best.save(out / "best.ckpt")
    result.final.save(out / "final.ckpt")
    _write_text(out / "train_log.jsonl", result.log.to_json_lines())
    manifest.write(
        out,
        config={"model": model_cfg.to_dict(), "train": asdict(train_cfg), "filter": _filter_from(args).describe()},
        best_epoch=result.best.epoch,
        epoch_seconds=[e.seconds for e in result.log.epochs],
        outputs=["best.ckpt", "final.ckpt", "train_log.jsonl"],
    )
    print(f"trained {train_cfg.epochs} epochs; best epoch {result.best.epoch}; final loss {result.log.losses[-1]:.6f}")


def cmd_eval(args):
    paths = _corpus_inputs(args)
    ckpt_path = _existing(args.checkpoint, "--checkpoint")
    manifest = Manifest("eval", args, {**paths, "checkpoint": ckpt_path})
    checkpoint = Checkpoint.load(ckpt_path)
    corpus = load_corpus(paths["docs"], paths["labels"], paths["triples"], paths["splits"])
    graphs = _graphs_for(corpus, args)
    report, _ = evaluate(checkpoint, corpus, graphs, args.split, args.k, encoder=_load_encoder(args))
    out = _out_dir(args.out)
    _write_text(out / "metrics.json", report.to_json() + "\n")
    _write_text(out / "metrics.txt", report.to_table())
    print(report.to_table(), end="")
    manifest.write(out, config={"split": args.split, "k": args.k}, outputs=["metrics.json", "metrics.txt"])


def cmd_export_dot(args):
    graphs_path = _existing(args.graphs, "--graphs")
    manifest = Manifest("export-dot", args, {"graphs": graphs_path})
    graphs = read_graph_archive(graphs_path)
    if args.doc_id:
        missing = [d for d in args.doc_id if d not in graphs]
        if missing:
            raise ValidationError(f"no graph for {', '.join(missing)}")
        selected = args.doc_id
    else:
        selected = list(graphs)
    out = _out_dir(args.out)
    written = []
    for doc_id in selected:
        name = f"{doc_id}.dot"
        _write_text(out / name, export_dot(graphs[doc_id]))
        written.append(name)
    manifest.write(out, config={"doc_ids": selected}, outputs=written)
    print(f"wrote {len(written)} DOT file(s) to {out}")


# -- parser ------------------------------------------------------------------------------


def _add_filter(p):
    p.add_argument(
        "--filter",
        action="append",
        metavar="remove-family=X|remove-entity=Y",
        help="ablation filter; repeatable",
    )


def build_parser():
    parser = argparse.ArgumentParser(prog="patientkg", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build-graphs", help="build per-document graphs and report statistics")
    p.add_argument("--docs", required=True)
    p.add_argument("--triples", required=True)
    p.add_argument("--splits")
    p.add_argument("--out", required=True)
    _add_filter(p)
    p.set_defaults(func=cmd_build_graphs)

    p = sub.add_parser("entropy", help="text vs serialized-graph entropy, optionally with ablations")
    p.add_argument("--docs", required=True)
    p.add_argument("--graphs")
    p.add_argument("--triples")
    p.add_argument("--ablate-all", action="store_true")
    p.add_argument("--mode", choices=("pooled", "per-document"), default="pooled")
    p.add_argument("--out", required=True)
    _add_filter(p)
    p.set_defaults(func=cmd_entropy)

    for name, func in (("train", cmd_train), ("eval", cmd_eval)):
        p = sub.add_parser(name, help=f"{name} the dual-branch classifier")
        p.add_argument("--docs", required=True)
        p.add_argument("--labels", required=True)
        p.add_argument("--splits", required=True)
        p.add_argument("--triples")
        p.add_argument("--graphs")
        p.add_argument("--token-vectors", help="JSON-lines {token, vector} replacing the trainable embedding")
        p.add_argument("--out", required=True)
        _add_filter(p)
        if name == "train":
            p.add_argument("--config", help="TOML or JSON hyperparameters")
            p.add_argument("--seed", type=int)
            p.add_argument("--epochs", type=int)
        else:
            p.add_argument("--checkpoint", required=True)
            p.add_argument("--split", default="test", choices=("train", "dev", "test"))
            p.add_argument("--k", type=int, default=8)
        p.set_defaults(func=func)

    p = sub.add_parser("export-dot", help="write Graphviz DOT files from a graph archive")
    p.add_argument("--graphs", required=True)
    p.add_argument("--doc-id", action="append")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export_dot)
    return parser


def main(argv=None):
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else [str(a) for a in argv]
    args = parser.parse_args(argv)
    args.argv = argv
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        args.func(args)
    except ValueError as exc:
        print(f"patientkg {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:
        print(f"patientkg {args.command}: failed: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
