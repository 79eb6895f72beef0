"""Seeded training and evaluation harness.

Covers the experiment drivers: plain training with early stopping and
best-validation model selection, split evaluation with per-class breakdown,
the branch ablation table, adaptive relation-weight export, and the
training-ratio sweep.  Every run is deterministic given (config, seed):
reports and checkpoints are byte-identical across re-runs.

Wall-clock timing goes to the progress log only; the serialized RunReport
carries no volatile fields so its bytes can be compared directly.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import time
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import AdamState, Tape, Tensor, adam_step, backward, reset_grads
from .corpus import ConfigError, Document, LabelSpace, select_validation_ids
from .graphs import REL_COOC, REL_SEM, REL_SYN, TextGraph
from .model import (
    MODE_FULL,
    MODES,
    EdgeIndex,
    ModelConfig,
    cross_entropy,
    forward,
    graph_features,
    init_params,
)

_GAMMA_KEYS = {"co": "str.gamma.co", "syn": "str.gamma.syn", "sem": "str.gamma.sem"}


class TrainingDivergence(RuntimeError):
    """Training produced a non-finite loss; message names the first bad tensor."""


@dataclass(frozen=True)
class TrainConfig:
    """Harness knobs plus the model shape they train."""

    learning_rate: float = 0.001
    epochs: int = 200
    batch_size: int = 32
    l2_weight: float = 5e-5
    dropout_str: float = 0.5
    dropout_seq: float = 0.65
    val_ratio: float = 0.1
    seed: int = 0
    mode: str = MODE_FULL
    patience: int | None = 20
    hidden_dim: int = 96
    num_heads: int = 1
    encoder_layers: int = 1
    ff_dim: int | None = None
    mpnn_steps: int = 2
    message_activation: str = "relu"

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.l2_weight < 0:
            raise ConfigError(f"l2_weight must be >= 0, got {self.l2_weight}")
        if not 0.0 < self.val_ratio < 1.0:
            raise ConfigError(f"val_ratio must be in (0, 1), got {self.val_ratio}")
        if self.patience is not None and self.patience < 1:
            raise ConfigError(f"patience must be >= 1 or None, got {self.patience}")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")

    def model_config(self, embedding_dim: int, num_classes: int) -> ModelConfig:
        return ModelConfig(
            num_classes=num_classes,
            embedding_dim=embedding_dim,
            hidden_dim=self.hidden_dim,
            num_heads=self.num_heads,
            encoder_layers=self.encoder_layers,
            ff_dim=self.ff_dim,
            mpnn_steps=self.mpnn_steps,
            message_activation=self.message_activation,
            dropout_seq=self.dropout_seq,
            dropout_str=self.dropout_str,
            mode=self.mode,
        )

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, record: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(record) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        return cls(**record)

    def with_overrides(self, **overrides) -> "TrainConfig":
        overrides = {k: v for k, v in overrides.items() if v is not None}
        return replace(self, **overrides) if overrides else self


@dataclass
class RunReport:
    """Self-contained record of one training run.

    wall_clock_seconds is kept in memory for callers but excluded from
    serialization so identical (config, seed) runs serialize identically.
    """

    config: dict
    seed: int
    mode: str
    label_names: list[str]
    embedding_dim: int
    num_parameters: int
    epochs: list[dict]
    best_epoch: int
    best_val_accuracy: float
    test_accuracy: float | None
    test_per_class: dict | None
    audit: dict
    wall_clock_seconds: float | None = None

    def to_dict(self) -> dict:
        return {
            "config": self.config,
            "seed": self.seed,
            "mode": self.mode,
            "label_names": list(self.label_names),
            "embedding_dim": self.embedding_dim,
            "num_parameters": self.num_parameters,
            "epochs": self.epochs,
            "best_epoch": self.best_epoch,
            "best_val_accuracy": self.best_val_accuracy,
            "test_accuracy": self.test_accuracy,
            "test_per_class": self.test_per_class,
            "audit": self.audit,
        }

    def canonical_bytes(self) -> bytes:
        return (json.dumps(self.to_dict(), sort_keys=True) + "\n").encode("utf-8")

    def digest(self) -> str:
        return hashlib.blake2b(self.canonical_bytes(), digest_size=16).hexdigest()


def save_report(report: RunReport, path) -> None:
    Path(path).write_bytes(report.canonical_bytes())


def load_report(path) -> RunReport:
    record = json.loads(Path(path).read_text(encoding="utf-8"))
    return RunReport(wall_clock_seconds=None, **record)


@dataclass
class EvalResult:
    accuracy: float
    per_class: dict[str, dict]
    predictions: list[tuple[str, str, str]]  # (doc id, true label, predicted label)


# ---------------------------------------------------------------------------
# forward helpers


def _ids_digest(ids) -> str:
    joined = "\n".join(sorted(ids)).encode("utf-8")
    return hashlib.blake2b(joined, digest_size=16).hexdigest()


def _first_non_finite(tape: Tape, params: dict[str, Tensor]) -> str:
    for name, p in params.items():
        if not np.isfinite(p.values).all():
            return f"parameter {name}"
    for i, (out, _parents, _fn) in enumerate(tape._nodes):
        if not np.isfinite(out.values).all():
            return f"operation {i} output (shape {out.shape})"
    return "loss"


def _doc_loss(graph: TextGraph, edge_index: EdgeIndex, table, labels: LabelSpace,
              params, config: ModelConfig, rng=None, train=False):
    token_features, node_features = graph_features(graph, table)
    trace = forward(token_features, node_features, edge_index, params, config, rng=rng, train=train)
    loss = cross_entropy(trace.probabilities, labels.index(graph.label))
    predicted = int(np.argmax(trace.probabilities.values[0]))
    return loss, predicted


def l2_penalty(params: dict[str, Tensor], l2_weight: float) -> float:
    """The regularization term implied by decoupled L2 on the gradient:
    (w/2) * sum of squared parameter entries."""
    if l2_weight == 0.0:
        return 0.0
    return 0.5 * l2_weight * float(sum((p.values * p.values).sum() for p in params.values()))


def _split_graphs(graphs, splits: dict[str, str]):
    buckets: dict[str, list[TextGraph]] = {"train": [], "val": [], "test": []}
    for g in graphs:
        split = splits.get(g.doc_id)
        if split is None:
            raise ConfigError(f"document {g.doc_id} has no split assignment")
        if split not in buckets:
            raise ConfigError(f"document {g.doc_id} has unknown split {split!r}")
        buckets[split].append(g)
    return buckets["train"], buckets["val"], buckets["test"]


# ---------------------------------------------------------------------------
# training


def train(
    graphs,
    splits: dict[str, str],
    table,
    labels: LabelSpace,
    config: TrainConfig,
    checkpoint_path=None,
    progress_stream=None,
    include_test: bool = True,
    on_batch=None,
) -> tuple[dict[str, Tensor], RunReport]:
    """Mini-batch Adam training with seeded shuffling and best-val selection.

    Graphs carry no split tag, so `splits` maps doc_id to train/val/test.
    When no doc is tagged val, a validation subset of round(val_ratio *
    |train|) docs is carved from train with the run seed.  on_batch, when
    given, is called with (epoch, doc_ids) for every training batch (the
    audit hook for the inductive contract).
    """
    train_graphs, val_graphs, test_graphs = _split_graphs(graphs, splits)
    if not val_graphs:
        val_ids = select_validation_ids([g.doc_id for g in train_graphs], config.val_ratio, config.seed)
        val_graphs = [g for g in train_graphs if g.doc_id in val_ids]
        train_graphs = [g for g in train_graphs if g.doc_id not in val_ids]
    if not train_graphs or not val_graphs:
        raise ConfigError(
            f"need nonempty train and val splits, got {len(train_graphs)} train / {len(val_graphs)} val"
        )
    train_id_set = {g.doc_id for g in train_graphs}
    test_id_set = {g.doc_id for g in test_graphs}

    model_cfg = config.model_config(embedding_dim=table.dim, num_classes=labels.num_classes)
    rng = np.random.default_rng(config.seed)
    params = init_params(model_cfg, rng)
    optimizer = AdamState(params, learning_rate=config.learning_rate, weight_decay=config.l2_weight)
    edge_cache = {g.doc_id: EdgeIndex.from_graph(g) for g in (*train_graphs, *val_graphs)}

    epochs: list[dict] = []
    best_val = -1.0
    best_epoch = 0
    best_params: dict[str, np.ndarray] = {}
    stale = 0
    batch_ids_seen: set[str] = set()
    started = time.perf_counter()

    for epoch in range(1, config.epochs + 1):
        epoch_started = time.perf_counter()
        order = rng.permutation(len(train_graphs))
        loss_sum = 0.0
        correct = 0
        for start in range(0, len(order), config.batch_size):
            batch = [train_graphs[i] for i in order[start:start + config.batch_size]]
            batch_ids = [g.doc_id for g in batch]
            batch_ids_seen.update(batch_ids)
            if on_batch is not None:
                on_batch(epoch, batch_ids)
            with Tape() as tape:
                total = None
                for g in batch:
                    loss, predicted = _doc_loss(
                        g, edge_cache[g.doc_id], table, labels, params, model_cfg, rng=rng, train=True
                    )
                    loss_sum += float(loss.values)
                    correct += int(predicted == labels.index(g.label))
                    total = loss if total is None else total + loss
                mean_loss = total * (1.0 / len(batch))
            if not np.isfinite(mean_loss.values).all():
                raise TrainingDivergence(
                    f"non-finite loss at epoch {epoch}: first bad tensor is "
                    f"{_first_non_finite(tape, params)}"
                )
            backward(tape, mean_loss)
            adam_step(params, optimizer)
            reset_grads(params.values())

        train_loss = loss_sum / len(train_graphs)
        train_acc = correct / len(train_graphs)

        val_loss_sum = 0.0
        val_correct = 0
        for g in val_graphs:
            loss, predicted = _doc_loss(
                g, edge_cache[g.doc_id], table, labels, params, model_cfg, train=False
            )
            val_loss_sum += float(loss.values)
            val_correct += int(predicted == labels.index(g.label))
        val_loss = val_loss_sum / len(val_graphs)
        val_acc = val_correct / len(val_graphs)

        epochs.append(
            {
                "epoch": epoch,
                "train_loss": train_loss,
                "train_accuracy": train_acc,
                "val_loss": val_loss,
                "val_accuracy": val_acc,
                "l2_term": l2_penalty(params, config.l2_weight),
                "beta": float(params["str.beta"].values),
                "gamma": {k: float(params[name].values) for k, name in _GAMMA_KEYS.items()},
            }
        )
        if progress_stream is not None:
            seconds = time.perf_counter() - epoch_started
            progress_stream.write(f"{epoch},{train_loss:.6f},{train_acc:.6f},{val_acc:.6f},{seconds:.3f}\n")
            progress_stream.flush()

        if val_acc > best_val:
            best_val = val_acc
            best_epoch = epoch
            best_params = {name: p.values.copy() for name, p in params.items()}
            stale = 0
        else:
            stale += 1
            if config.patience is not None and stale >= config.patience:
                break

    for name, p in params.items():
        p.values = best_params[name].copy()

    leaked = sorted(batch_ids_seen & test_id_set)
    audit = {
        "train_docs": len(train_graphs),
        "val_docs": len(val_graphs),
        "test_docs": len(test_graphs),
        "train_ids_digest": _ids_digest(g.doc_id for g in train_graphs),
        "val_ids_digest": _ids_digest(g.doc_id for g in val_graphs),
        "test_ids_in_training_batches": len(leaked),
    }
    if leaked:
        raise AssertionError(f"inductive contract broken: test docs in training batches: {leaked[:5]}")
    if batch_ids_seen != train_id_set:
        raise AssertionError("training batches did not cover exactly the train split")

    test_accuracy = None
    test_per_class = None
    if include_test and test_graphs:
        result = evaluate(params, model_cfg, test_graphs, table, labels)
        test_accuracy = result.accuracy
        test_per_class = result.per_class

    report = RunReport(
        config=config.to_dict(),
        seed=config.seed,
        mode=config.mode,
        label_names=list(labels.labels),
        embedding_dim=table.dim,
        num_parameters=int(sum(p.values.size for p in params.values())),
        epochs=epochs,
        best_epoch=best_epoch,
        best_val_accuracy=best_val,
        test_accuracy=test_accuracy,
        test_per_class=test_per_class,
        audit=audit,
        wall_clock_seconds=time.perf_counter() - started,
    )
    if checkpoint_path is not None:
        save_model(checkpoint_path, params, model_cfg, config, labels, step=best_epoch)
    return params, report


def evaluate(params: dict[str, Tensor], model_cfg: ModelConfig, graphs, table, labels: LabelSpace) -> EvalResult:
    """Accuracy over a graph list with a per-class breakdown."""
    out_classes = params["out.W"].shape[1]
    if out_classes != labels.num_classes:
        raise ConfigError(
            f"checkpoint has {out_classes} classes but the label space has {labels.num_classes}"
        )
    counts = {name: {"support": 0, "correct": 0} for name in labels.labels}
    predictions = []
    correct = 0
    for g in graphs:
        edge_index = EdgeIndex.from_graph(g)
        token_features, node_features = graph_features(g, table)
        trace = forward(token_features, node_features, edge_index, params, model_cfg, train=False)
        predicted = labels.labels[int(np.argmax(trace.probabilities.values[0]))]
        predictions.append((g.doc_id, g.label, predicted))
        counts[g.label]["support"] += 1
        if predicted == g.label:
            counts[g.label]["correct"] += 1
            correct += 1
    per_class = {
        name: {
            "support": c["support"],
            "correct": c["correct"],
            "accuracy": (c["correct"] / c["support"]) if c["support"] else None,
        }
        for name, c in counts.items()
    }
    accuracy = correct / len(graphs) if graphs else 0.0
    return EvalResult(accuracy=accuracy, per_class=per_class, predictions=predictions)


# ---------------------------------------------------------------------------
# checkpoint plumbing


def save_model(path, params, model_cfg: ModelConfig, config: TrainConfig, labels: LabelSpace, step: int = 0) -> None:
    ad.save_checkpoint(
        path,
        params,
        step=step,
        hyperparameters={"model": model_cfg.to_dict(), "train": config.to_dict()},
        meta={"labels": list(labels.labels)},
    )


def load_model(path) -> tuple[dict[str, Tensor], ModelConfig, LabelSpace, dict]:
    arrays, header = ad.load_checkpoint(path)
    params = {name: ad.parameter(values) for name, values in arrays.items()}
    model_cfg = ModelConfig.from_dict(header["hyperparameters"]["model"])
    labels = LabelSpace.from_labels(header["meta"]["labels"])
    return params, model_cfg, labels, header


# ---------------------------------------------------------------------------
# experiment drivers


def run_ablation(graphs, splits, table, labels, config: TrainConfig, seeds, modes=MODES):
    """Train every mode over the same seed list; returns per-run rows and
    per-mode mean/std (population std) of test accuracy."""
    rows = []
    for mode in modes:
        for seed in seeds:
            run_cfg = replace(config, mode=mode, seed=int(seed))
            _params, report = train(graphs, splits, table, labels, run_cfg)
            rows.append(
                {
                    "mode": mode,
                    "seed": int(seed),
                    "best_val_accuracy": report.best_val_accuracy,
                    "test_accuracy": report.test_accuracy,
                }
            )
    summary = {}
    for mode in modes:
        accs = [r["test_accuracy"] for r in rows if r["mode"] == mode]
        summary[mode] = {"mean": float(np.mean(accs)), "std": float(np.std(accs))}
    return rows, summary


def write_ablation_csv(path, rows, summary) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["mode", "seed", "best_val_accuracy", "test_accuracy"])
        for r in rows:
            writer.writerow([r["mode"], r["seed"], f"{r['best_val_accuracy']:.6f}", f"{r['test_accuracy']:.6f}"])
        for mode, stats in summary.items():
            writer.writerow([mode, "mean", "", f"{stats['mean']:.6f}"])
            writer.writerow([mode, "std", "", f"{stats['std']:.6f}"])


def export_adaptive_params(params) -> dict:
    """Raw and |.|-normalized relation weights from a parameter set.

    Accepts Tensors or bare arrays (as loaded from a checkpoint).  When all
    three weights are zero the normalized shares fall back to uniform.
    """

    def scalar(name: str) -> float:
        value = params[name]
        return float(value.values if isinstance(value, Tensor) else value)

    raw = {rel: scalar(name) for rel, name in _GAMMA_KEYS.items()}
    total = sum(abs(v) for v in raw.values())
    if total == 0.0:
        normalized = {rel: 1.0 / len(raw) for rel in raw}
    else:
        normalized = {rel: abs(v) / total for rel, v in raw.items()}
    return {"raw": {**raw, "beta": scalar("str.beta")}, "normalized": normalized}


def write_adaptive_params_csv(path, record: dict) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["relation", "raw", "normalized"])
        for rel in ("co", "syn", "sem"):
            writer.writerow([rel, repr(record["raw"][rel]), repr(record["normalized"][rel])])


def run_ratio_sweep(graphs, splits, table, labels, config: TrainConfig, ratios):
    """Train on seeded subsamples of the train split at each ratio.

    A ratio r keeps exactly floor(r * |train|) documents.  One permutation
    (from the run seed) is shared by all ratios, so smaller ratios use nested
    subsets and ratio 1.0 reproduces the full pipeline.
    """
    for r in ratios:
        if not 0.0 < r <= 1.0:
            raise ConfigError(f"ratios must be in (0, 1], got {r}")
    train_graphs = [g for g in graphs if splits.get(g.doc_id) == "train"]
    other_graphs = [g for g in graphs if splits.get(g.doc_id) != "train"]
    n = len(train_graphs)
    permutation = np.random.default_rng(config.seed).permutation(n)
    rows = []
    for r in ratios:
        k = int(math.floor(r * n))
        keep = sorted(permutation[:k])
        subset = [train_graphs[i] for i in keep] + other_graphs
        _params, report = train(subset, splits, table, labels, config)
        rows.append({"ratio": float(r), "train_docs": k, "test_accuracy": report.test_accuracy})
    return rows


def write_ratio_sweep_csv(path, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["ratio", "train_docs", "test_accuracy"])
        for r in rows:
            writer.writerow([r["ratio"], r["train_docs"], f"{r['test_accuracy']:.6f}"])


# ---------------------------------------------------------------------------
# gradient check driver


def _toy_batch(seed: int = 0):
    """Two small documents exercising all three relations and both branches."""
    from .embeddings import random_table
    from .graphs import TypedEdge, assemble_graph

    docs = [
        Document(
            id="toy0",
            label="pos",
            tokens=("alpha", "beta", "gamma", "alpha", "delta"),
            split="train",
        ),
        Document(
            id="toy1",
            label="neg",
            tokens=("epsilon", "zeta", "beta", "eta"),
            split="train",
        ),
    ]
    vocab = sorted({t for d in docs for t in d.tokens})
    table = random_table(vocab, dim=12, seed=seed)
    parses = {
        "toy0": [[("alpha", 2), ("beta", 0), ("gamma", 2), ("alpha", 3), ("delta", 2)]],
        "toy1": [[("epsilon", 2), ("zeta", 0), ("beta", 2), ("eta", 3)]],
    }
    graphs = [
        assemble_graph(d, table, parse_sentences=parses[d.id], window=3, sem_threshold=0.2)
        for d in docs
    ]
    # make sure every relation is populated so every gamma gets a gradient
    patched = []
    for g in graphs:
        edges = set(g.edges)
        if not g.edges_for(REL_SEM):
            edges |= {TypedEdge(0, 1, REL_SEM), TypedEdge(1, 0, REL_SEM)}
        if not g.edges_for(REL_SYN):
            edges |= {TypedEdge(0, 1, REL_SYN), TypedEdge(1, 0, REL_SYN)}
        if not g.edges_for(REL_COOC):
            edges |= {TypedEdge(0, 1, REL_COOC), TypedEdge(1, 0, REL_COOC)}
        patched.append(replace(g, edges=tuple(sorted(edges))))
    labels = LabelSpace.from_labels([d.label for d in docs])
    return docs, patched, table, labels


def gradient_check_report(seed: int = 0, coords_per_tensor: int = 25,
                          eps_sweep: tuple[float, ...] = (1e-3, 1e-4, 1e-5)) -> dict[str, float]:
    """Finite-difference check of the whole model on a 2-document batch.

    Returns the max relative error per parameter; dropout is off (eval-mode
    forward) so repeated loss evaluations are deterministic.

    No single step width works for every coordinate of a deep model: the
    central-difference error is ~C1*eps^2 (truncation) + C2*ulp(loss)/eps
    (cancellation), so coordinates with gradients near 1e-7 need a wide step
    while high-curvature coordinates need a narrow one.  Each parameter is
    therefore checked at several widths (same sampled coordinates each time)
    and scored by its best agreement; a wrong analytic gradient stays wrong
    at every width, so the sweep does not mask real defects.
    """
    docs, graphs, table, labels = _toy_batch(seed)
    model_cfg = ModelConfig(
        num_classes=labels.num_classes,
        embedding_dim=table.dim,
        hidden_dim=8,
        mpnn_steps=2,
        dropout_seq=0.0,
        dropout_str=0.0,
    )
    params = init_params(model_cfg, np.random.default_rng(seed))
    edge_indexes = [EdgeIndex.from_graph(g) for g in graphs]
    features = [graph_features(g, table) for g in graphs]

    def loss_fn():
        total = None
        for g, idx, (tok, nod) in zip(graphs, edge_indexes, features):
            trace = forward(tok, nod, idx, params, model_cfg, train=False)
            loss = cross_entropy(trace.probabilities, labels.index(g.label))
            total = loss if total is None else total + loss
        return total * (1.0 / len(graphs))

    best: dict[str, np.ndarray] = {}
    for eps in eps_sweep:
        errors = ad.finite_diff_coordinate_errors(
            loss_fn, params, eps=eps, coords_per_tensor=coords_per_tensor,
            rng=np.random.default_rng(seed),
        )
        for name, per_coord in errors.items():
            prev = best.get(name)
            best[name] = per_coord if prev is None else np.minimum(prev, per_coord)
    return {name: float(errs.max()) if errs.size else 0.0 for name, errs in best.items()}
