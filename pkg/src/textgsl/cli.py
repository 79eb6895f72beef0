"""Command-line pipeline: ingest, graph building, training, and experiment drivers.

Exit codes: 0 success, 1 usage or configuration error (bad flags, malformed
or missing files, schema violations), 2 runtime failure (divergence,
unexpected errors).  Every produced artifact is listed in a sidecar
`*.manifest.json` recording the resolved config hash, input file digests,
output digests, and tool version; deterministic subcommands re-run with the
same inputs write byte-identical artifacts and manifests.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .corpus import (
    ConfigError,
    IngestError,
    LabelSpace,
    load_corpus,
    load_documents,
    load_stopwords,
    load_vocabulary,
    preprocess,
    save_documents,
    save_vocabulary,
)
from .embeddings import FormatError, load_pretrained
from .graphs import (
    DEFAULT_SEM_THRESHOLD,
    DEFAULT_WINDOW,
    GraphFormatError,
    assemble_graph,
    load_graphs,
    read_conllu,
    save_graphs,
)
from .model import MODES
from .training import (
    TrainConfig,
    TrainingDivergence,
    evaluate,
    export_adaptive_params,
    gradient_check_report,
    load_model,
    run_ablation,
    run_ratio_sweep,
    save_report,
    train,
    write_ablation_csv,
    write_adaptive_params_csv,
    write_ratio_sweep_csv,
)


def tool_version() -> str:
    try:
        from importlib.metadata import version

        return version("textgsl")
    except Exception:
        return "0.0.0+unknown"


class CliUsageError(Exception):
    """Bad flags or arguments; mapped to exit code 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliUsageError(message)


# ---------------------------------------------------------------------------
# manifest helpers


def _digest_bytes(data: bytes) -> str:
    return hashlib.blake2b(data, digest_size=16).hexdigest()


def _digest_file(path) -> str:
    return _digest_bytes(Path(path).read_bytes())


def _config_hash(record: dict) -> str:
    return _digest_bytes(json.dumps(record, sort_keys=True).encode("utf-8"))


def write_manifest(path, command: str, config_record: dict, inputs, outputs, volatile=()) -> dict:
    """Sidecar record tying outputs to their exact inputs and configuration.

    Volatile outputs (e.g. wall-clock progress logs) are listed without a
    digest so the manifest itself stays byte-identical across re-runs.
    """
    volatile = {str(p) for p in volatile}
    record = {
        "tool": "textgsl",
        "version": tool_version(),
        "command": command,
        "config": config_record,
        "config_hash": _config_hash(config_record),
        "inputs": {str(p): _digest_file(p) for p in inputs},
        "outputs": {
            str(p): (None if str(p) in volatile else _digest_file(p)) for p in outputs
        },
    }
    Path(path).write_text(json.dumps(record, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    return record


# ---------------------------------------------------------------------------
# shared loading


def _parse_floats(text: str) -> list[float]:
    try:
        values = [float(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise CliUsageError(f"expected comma-separated numbers, got {text!r}") from None
    if not values:
        raise CliUsageError("expected at least one value")
    return values


def _parse_ints(text: str) -> list[int]:
    try:
        values = [int(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise CliUsageError(f"expected comma-separated integers, got {text!r}") from None
    if not values:
        raise CliUsageError("expected at least one value")
    return values


def _parse_patience(text: str):
    if text.lower() == "none":
        return None
    try:
        return int(text)
    except ValueError:
        raise CliUsageError(f"patience must be an integer or 'none', got {text!r}") from None


def _require_file(path, flag: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise CliUsageError(f"{flag}: file not found: {p}")
    return p


def _load_pipeline_inputs(args):
    """Docs manifest, split map, embedding table, and label space for a run."""
    docs_path = _require_file(args.docs, "--docs")
    embeddings_path = _require_file(args.embeddings, "--embeddings")
    docs = load_documents(docs_path)
    splits = {d.id: d.split for d in docs}
    vocabulary = {t for d in docs for t in d.tokens}
    table = load_pretrained(embeddings_path, vocabulary=vocabulary, oov_seed=args.oov_seed)
    labels = LabelSpace.from_labels(d.label for d in docs)
    return docs, splits, table, labels


def _resolve_config(args) -> tuple[TrainConfig, dict]:
    """CLI flag > config file > built-in default."""
    if getattr(args, "config", None):
        config_path = _require_file(args.config, "--config")
        try:
            record = json.loads(config_path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as err:
            raise ConfigError(f"{config_path}: invalid JSON: {err}") from None
        if not isinstance(record, dict):
            raise ConfigError(f"{config_path}: config must be a JSON object")
        config = TrainConfig.from_dict(record)
    else:
        config = TrainConfig()
    override_fields = (
        "seed", "mode", "epochs", "batch_size", "learning_rate", "l2_weight",
        "val_ratio", "patience", "hidden_dim", "num_heads", "encoder_layers",
        "mpnn_steps", "dropout_seq", "dropout_str",
    )
    overrides = {}
    for name in override_fields:
        value = getattr(args, name, None)
        if value is not None:
            overrides[name] = value
    if overrides:
        config = replace(config, **overrides)
    return config, config.to_dict()


# ---------------------------------------------------------------------------
# subcommands


def cmd_ingest(args) -> int:
    corpus_path = _require_file(args.corpus, "--corpus")
    label_path = _require_file(args.labels, "--labels") if args.labels else None
    if args.stopwords is None:
        stopwords = set()
    elif args.stopwords == "builtin":
        stopwords = load_stopwords(None)
    else:
        stopwords = load_stopwords(_require_file(args.stopwords, "--stopwords"))

    docs = load_corpus(corpus_path, label_path=label_path)
    docs, vocabulary = preprocess(docs, min_freq=args.min_freq, stopwords=stopwords)

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    docs_path = out_dir / "docs.jsonl"
    vocab_path = out_dir / "vocab.json"
    save_documents(docs_path, docs)
    save_vocabulary(vocab_path, vocabulary)

    config_record = {"min_freq": args.min_freq, "stopwords": args.stopwords or "none"}
    inputs = [corpus_path] + ([label_path] if label_path else [])
    write_manifest(out_dir / "ingest.manifest.json", "ingest", config_record, inputs, [docs_path, vocab_path])
    n_train = sum(1 for d in docs if d.split == "train")
    n_test = sum(1 for d in docs if d.split == "test")
    print(f"ingested {len(docs)} documents ({n_train} train / {n_test} test), vocabulary {len(vocabulary)}")
    return 0


def cmd_build_graphs(args) -> int:
    docs_path = _require_file(args.docs, "--docs")
    embeddings_path = _require_file(args.embeddings, "--embeddings")
    docs = load_documents(docs_path)
    vocabulary = {t for d in docs for t in d.tokens}
    table = load_pretrained(embeddings_path, vocabulary=vocabulary, oov_seed=args.oov_seed)
    parses = {}
    inputs = [docs_path, embeddings_path]
    if args.parses:
        parses_path = _require_file(args.parses, "--parses")
        parses = read_conllu(parses_path)
        inputs.append(parses_path)

    graphs = [
        assemble_graph(
            doc, table,
            parse_sentences=parses.get(doc.id),
            window=args.window,
            sem_threshold=args.sem_threshold,
        )
        for doc in docs
    ]
    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    save_graphs(out_path, graphs)

    config_record = {
        "window": args.window,
        "sem_threshold": args.sem_threshold,
        "oov_seed": args.oov_seed,
        "parses": bool(args.parses),
    }
    write_manifest(f"{out_path}.manifest.json", "build-graphs", config_record, inputs, [out_path])
    n_edges = sum(len(g.edges) for g in graphs)
    print(f"built {len(graphs)} graphs with {n_edges} typed edges -> {out_path}")
    return 0


def cmd_train(args) -> int:
    graphs_path = _require_file(args.graphs, "--graphs")
    docs, splits, table, labels = _load_pipeline_inputs(args)
    graphs = load_graphs(graphs_path)
    config, config_record = _resolve_config(args)

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    checkpoint_path = out_dir / "model.ckpt"
    report_path = out_dir / "report.json"
    progress_path = out_dir / "progress.log"

    with open(progress_path, "w", encoding="utf-8") as progress:
        _params, report = train(
            graphs, splits, table, labels, config,
            checkpoint_path=checkpoint_path, progress_stream=progress,
        )
    save_report(report, report_path)

    inputs = [graphs_path, Path(args.docs), Path(args.embeddings)]
    write_manifest(
        out_dir / "train.manifest.json", "train", config_record, inputs,
        [checkpoint_path, report_path, progress_path], volatile=[progress_path],
    )
    test_note = f", test accuracy {report.test_accuracy:.4f}" if report.test_accuracy is not None else ""
    print(
        f"trained {config.mode} model: best val accuracy {report.best_val_accuracy:.4f} "
        f"at epoch {report.best_epoch}{test_note}; report digest {report.digest()}"
    )
    return 0


def cmd_eval(args) -> int:
    checkpoint_path = _require_file(args.checkpoint, "--checkpoint")
    graphs_path = _require_file(args.graphs, "--graphs")
    _docs, splits, table, _corpus_labels = _load_pipeline_inputs(args)
    graphs = load_graphs(graphs_path)
    params, model_cfg, labels, header = load_model(checkpoint_path)

    if model_cfg.embedding_dim != table.dim:
        raise ConfigError(
            f"checkpoint expects {model_cfg.embedding_dim}-dim embeddings, file has {table.dim}"
        )
    selected = [g for g in graphs if splits.get(g.doc_id) == args.split]
    if not selected:
        raise ConfigError(f"no documents with split {args.split!r}")
    unknown = sorted({g.label for g in selected} - set(labels.labels))
    if unknown:
        raise ConfigError(
            f"checkpoint classes {list(labels.labels)} do not cover graph labels {unknown}"
        )

    result = evaluate(params, model_cfg, selected, table, labels)
    record = {
        "split": args.split,
        "n_docs": len(selected),
        "accuracy": result.accuracy,
        "per_class": result.per_class,
        "checkpoint": str(checkpoint_path),
        "checkpoint_step": header.get("step"),
    }
    text = json.dumps(record, sort_keys=True, indent=2)
    print(text)
    if args.out:
        out_path = Path(args.out)
        out_path.write_text(text + "\n", encoding="utf-8")
        write_manifest(
            f"{out_path}.manifest.json", "eval", {"split": args.split},
            [checkpoint_path, graphs_path, Path(args.docs), Path(args.embeddings)], [out_path],
        )
    return 0


def cmd_ablate(args) -> int:
    graphs_path = _require_file(args.graphs, "--graphs")
    _docs, splits, table, labels = _load_pipeline_inputs(args)
    graphs = load_graphs(graphs_path)
    config, config_record = _resolve_config(args)
    seeds = _parse_ints(args.seeds)

    rows, summary = run_ablation(graphs, splits, table, labels, config, seeds)
    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    write_ablation_csv(out_path, rows, summary)
    write_manifest(
        f"{out_path}.manifest.json", "ablate", {**config_record, "seeds": seeds},
        [graphs_path, Path(args.docs), Path(args.embeddings)], [out_path],
    )
    for mode, stats in summary.items():
        print(f"{mode}: test accuracy {stats['mean']:.4f} +/- {stats['std']:.4f} over {len(seeds)} seeds")
    return 0


def cmd_export_gammas(args) -> int:
    checkpoint_path = _require_file(args.checkpoint, "--checkpoint")
    arrays, _header = ad.load_checkpoint(checkpoint_path)
    record = export_adaptive_params(arrays)
    text = json.dumps(record, sort_keys=True, indent=2)
    print(text)
    outputs = []
    if args.out_json:
        Path(args.out_json).write_text(text + "\n", encoding="utf-8")
        outputs.append(Path(args.out_json))
    if args.out_csv:
        write_adaptive_params_csv(args.out_csv, record)
        outputs.append(Path(args.out_csv))
    if outputs:
        write_manifest(
            f"{outputs[0]}.manifest.json", "export-gammas", {}, [checkpoint_path], outputs
        )
    return 0


def cmd_ratio_sweep(args) -> int:
    graphs_path = _require_file(args.graphs, "--graphs")
    _docs, splits, table, labels = _load_pipeline_inputs(args)
    graphs = load_graphs(graphs_path)
    config, config_record = _resolve_config(args)
    ratios = _parse_floats(args.ratios)

    rows = run_ratio_sweep(graphs, splits, table, labels, config, ratios)
    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    write_ratio_sweep_csv(out_path, rows)
    write_manifest(
        f"{out_path}.manifest.json", "ratio-sweep", {**config_record, "ratios": ratios},
        [graphs_path, Path(args.docs), Path(args.embeddings)], [out_path],
    )
    for row in rows:
        print(f"ratio {row['ratio']:.2f}: {row['train_docs']} train docs, test accuracy {row['test_accuracy']:.4f}")
    return 0


def cmd_gradcheck(args) -> int:
    errors = gradient_check_report(seed=args.seed, coords_per_tensor=args.coords)
    worst = max(errors.values())
    width = max(len(name) for name in errors)
    for name in sorted(errors):
        status = "PASS" if errors[name] < args.tolerance else "FAIL"
        print(f"{status}  {name:<{width}}  {errors[name]:.3e}")
    print(f"max relative error {worst:.3e} (tolerance {args.tolerance:.0e})")
    if worst >= args.tolerance:
        print("gradient check FAILED", file=sys.stderr)
        return 2
    return 0


# ---------------------------------------------------------------------------
# parser


def _add_data_flags(parser, with_graphs: bool = True):
    if with_graphs:
        parser.add_argument("--graphs", required=True, help="graph JSON-lines file from build-graphs")
    parser.add_argument("--docs", required=True, help="document manifest from ingest")
    parser.add_argument("--embeddings", required=True, help="word-vector text file")
    parser.add_argument("--oov-seed", type=int, default=0, help="seed for out-of-vocabulary vectors")


def _add_config_flags(parser):
    parser.add_argument("--config", help="JSON config file (TrainConfig schema)")
    parser.add_argument("--seed", type=int, default=None, help="run seed (overrides config)")
    parser.add_argument("--mode", choices=MODES, default=None, help="branch mode")
    parser.add_argument("--epochs", type=int, default=None)
    parser.add_argument("--batch-size", dest="batch_size", type=int, default=None)
    parser.add_argument("--learning-rate", dest="learning_rate", type=float, default=None)
    parser.add_argument("--l2-weight", dest="l2_weight", type=float, default=None)
    parser.add_argument("--val-ratio", dest="val_ratio", type=float, default=None)
    parser.add_argument("--patience", type=_parse_patience, default=None, help="epochs without val improvement before stopping, or 'none'")
    parser.add_argument("--hidden-dim", dest="hidden_dim", type=int, default=None)
    parser.add_argument("--num-heads", dest="num_heads", type=int, default=None)
    parser.add_argument("--encoder-layers", dest="encoder_layers", type=int, default=None)
    parser.add_argument("--mpnn-steps", dest="mpnn_steps", type=int, default=None)
    parser.add_argument("--dropout-seq", dest="dropout_seq", type=float, default=None)
    parser.add_argument("--dropout-str", dest="dropout_str", type=float, default=None)


def build_parser() -> _Parser:
    parser = _Parser(prog="textgsl", description="Graph-plus-sequence text classification pipeline.")
    parser.add_argument("--version", action="version", version=f"textgsl {tool_version()}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="tokenize a corpus and build the vocabulary")
    p.add_argument("--corpus", required=True, help="split<TAB>label<TAB>text lines")
    p.add_argument("--labels", help="separate [id<TAB>]split<TAB>label file for raw-text corpora")
    p.add_argument("--stopwords", help="stopword file (one word per line), or 'builtin'")
    p.add_argument("--min-freq", dest="min_freq", type=int, default=1, help="corpus-frequency cutoff")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("build-graphs", help="construct multi-relation graphs per document")
    p.add_argument("--docs", required=True)
    p.add_argument("--embeddings", required=True)
    p.add_argument("--parses", help="CoNLL-U file with '# doc_id = <id>' comments")
    p.add_argument("--window", type=int, default=DEFAULT_WINDOW)
    p.add_argument("--sem-threshold", dest="sem_threshold", type=float, default=DEFAULT_SEM_THRESHOLD)
    p.add_argument("--oov-seed", dest="oov_seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output graphs.jsonl path")
    p.set_defaults(func=cmd_build_graphs)

    p = sub.add_parser("train", help="train a model and write checkpoint + report")
    _add_data_flags(p)
    _add_config_flags(p)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on one split")
    p.add_argument("--checkpoint", required=True)
    _add_data_flags(p)
    p.add_argument("--split", choices=("train", "val", "test"), default="test")
    p.add_argument("--out", help="optional JSON output path")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="train every branch mode over a seed list")
    _add_data_flags(p)
    _add_config_flags(p)
    p.add_argument("--seeds", default="0,1,2", help="comma-separated seed list")
    p.add_argument("--out", required=True, help="output CSV path")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("export-gammas", help="export adaptive relation weights from a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out-json", dest="out_json")
    p.add_argument("--out-csv", dest="out_csv")
    p.set_defaults(func=cmd_export_gammas)

    p = sub.add_parser("ratio-sweep", help="accuracy vs training-set ratio")
    _add_data_flags(p)
    _add_config_flags(p)
    p.add_argument("--ratios", default="0.3,0.4,0.5,0.6,0.7,0.8")
    p.add_argument("--out", required=True, help="output CSV path")
    p.set_defaults(func=cmd_ratio_sweep)

    p = sub.add_parser("gradcheck", help="finite-difference check of every layer")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tolerance", type=float, default=1e-5)
    p.add_argument("--coords", type=int, default=25, help="sampled coordinates per parameter")
    p.set_defaults(func=cmd_gradcheck)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except CliUsageError as err:
        print(f"textgsl: error: {err}", file=sys.stderr)
        return 1
    try:
        return args.func(args)
    except (CliUsageError, ConfigError, IngestError, FormatError, GraphFormatError,
            ad.CheckpointError, FileNotFoundError) as err:
        print(f"textgsl: error: {err}", file=sys.stderr)
        return 1
    except TrainingDivergence as err:
        print(f"textgsl: runtime failure: {err}", file=sys.stderr)
        return 2
    except Exception as err:  # pragma: no cover - safety net
        print(f"textgsl: runtime failure: {type(err).__name__}: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
