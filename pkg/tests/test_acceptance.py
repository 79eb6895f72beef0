"""Release acceptance suite.

One test per shipping criterion.  Each numeric criterion re-derives its
expected values from scratch inside this file (scalar loops over plain
Python floats, no shared helpers with the unit tests) and prints a single
summary line once its assertions pass, so `pytest -v tests/test_acceptance.py`
reads as a checklist.

The benchmark-scale criteria (MR and R8 accuracy, ablation ordering, the
training-ratio sweep) need corpora and 300-dim GloVe vectors that are not
bundled with the package.  They skip with an explanation unless
TEXTGSL_DATA_DIR points at a directory containing:

    mr.tsv                 one `split<TAB>label<TAB>text` line per document
    r8.tsv                 same layout
    glove.6B.300d.txt      word2vec-style text vectors

Expect multi-hour CPU runtimes when those are present.
"""

import math
import os
import time
from pathlib import Path

import numpy as np
import pytest
from scipy.stats import spearmanr

import textgsl.autodiff as ad
from conftest import make_toy_docs, toy_vocabulary
from textgsl.cli import main
from textgsl.corpus import Document, LabelSpace, load_corpus, load_stopwords, preprocess, save_documents
from textgsl.embeddings import EmbeddingTable, load_pretrained, random_table
from textgsl.graphs import (
    REL_COOC,
    REL_SEM,
    REL_SYN,
    TextGraph,
    TypedEdge,
    assemble_graph,
    build_cooccurrence_edges,
    build_semantic_edges,
    load_graphs,
    save_graphs,
)
from textgsl.model import (
    MODES,
    EdgeIndex,
    ModelConfig,
    classify,
    cross_entropy,
    edge_weights,
    forward,
    graph_features,
    init_params,
    mpnn_step,
    readout,
    structural_branch,
)
from textgsl.training import TrainConfig, gradient_check_report, run_ablation, run_ratio_sweep, train

RELATIONS = (REL_COOC, REL_SYN, REL_SEM)


# ---------------------------------------------------------------------------
# small-model scaffolding shared by criteria 1-3


def _graph_from_edges(num_nodes, typed_edges):
    return TextGraph(
        doc_id="acc",
        label="x",
        nodes=tuple(f"w{i}" for i in range(num_nodes)),
        positions=tuple((i,) for i in range(num_nodes)),
        edges=tuple(sorted(TypedEdge(a, b, r) for a, b, r in typed_edges)),
    )


def _both_ways(a, b, rel):
    return [(a, b, rel), (b, a, rel)]


def _tiny_setup(seed=0, n=4, m=6):
    """Parameters with non-trivial alpha/gammas plus a 4-node mixed-relation graph."""
    config = ModelConfig(num_classes=3, embedding_dim=5, hidden_dim=m,
                         dropout_seq=0.0, dropout_str=0.0)
    rng = np.random.default_rng(seed)
    params = init_params(config, rng)
    params["str.alpha"] = ad.parameter(rng.normal(size=(2 * m, 1)) * 0.2)
    for rel, value in zip(RELATIONS, (1.3, 0.8, -0.4)):
        params[f"str.gamma.{rel}"] = ad.parameter(np.asarray(value))
    edges = (_both_ways(0, 1, REL_COOC) + _both_ways(2, 3, REL_COOC)
             + _both_ways(0, 2, REL_SYN)
             + _both_ways(1, 3, REL_SEM) + _both_ways(0, 1, REL_SEM))
    idx = EdgeIndex.from_graph(_graph_from_edges(n, edges))
    x = rng.normal(size=(n, m)) * 0.5
    return x, idx, params, config


# scalar-loop replicas: plain floats and math.*, no linear algebra library


def _s_sig(v):
    return 1.0 / (1.0 + math.exp(-v))


def _s_affine(row, w, b):
    cols = len(w[0])
    return [sum(row[i] * w[i][j] for i in range(len(row))) + b[j] for j in range(cols)]


def _scalar_edge_weights(xv, idx, alpha_col, beta_v):
    out = []
    for k in range(idx.num_pairs):
        i, j = int(idx.src[k]), int(idx.dst[k])
        cat = list(xv[i]) + list(xv[j])
        score = sum(c * a for c, a in zip(cat, alpha_col))
        dist = sum((xv[i][t] - xv[j][t]) ** 2 for t in range(len(xv[i])))
        out.append(math.exp(score - beta_v * dist))
    return out


def _scalar_mpnn(xv, ev, idx, params, m):
    """One gated round; returns (next state, update gate, reset gate) as lists."""
    n = len(xv)
    mat = {name: params[name].values.tolist() for name in (
        "str.gru.Wz", "str.gru.Uz", "str.gru.Wr", "str.gru.Ur", "str.gru.Wh", "str.gru.Uh")}
    vec = {name: params[name].values.tolist() for name in
           ("str.gru.bz", "str.gru.br", "str.gru.bh")}
    a = [[0.0] * m for _ in range(n)]
    for rel in RELATIONS:
        gamma = float(params[f"str.gamma.{rel}"].values)
        for k in idx.rel_pairs[rel]:
            i, j = int(idx.src[k]), int(idx.dst[k])
            w = gamma * ev[k]
            for t in range(m):
                a[i][t] += w * xv[j][t]
    a = [[max(0.0, v) for v in row] for row in a]
    zero = [0.0] * m
    z, r, nxt = [], [], []
    for i in range(n):
        zi = [_s_sig(p + q) for p, q in zip(_s_affine(a[i], mat["str.gru.Wz"], vec["str.gru.bz"]),
                                            _s_affine(xv[i], mat["str.gru.Uz"], zero))]
        ri = [_s_sig(p + q) for p, q in zip(_s_affine(a[i], mat["str.gru.Wr"], vec["str.gru.br"]),
                                            _s_affine(xv[i], mat["str.gru.Ur"], zero))]
        gated = [ri[t] * xv[i][t] for t in range(m)]
        cand = [math.tanh(p + q) for p, q in zip(_s_affine(a[i], mat["str.gru.Wh"], vec["str.gru.bh"]),
                                                 _s_affine(gated, mat["str.gru.Uh"], zero))]
        nxt.append([(1.0 - zi[t]) * xv[i][t] + zi[t] * cand[t] for t in range(m)])
        z.append(zi)
        r.append(ri)
    return nxt, z, r


def _scalar_readout(xv, params, m):
    rows = [list(r) for r in xv]
    p = {name: params[name].values.tolist() for name in (
        "read.f1.W1", "read.f1.b1", "read.f1.W2", "read.f1.b2",
        "read.f2.W1", "read.f2.b1", "read.f2.W2", "read.f2.b2")}
    gate = [[_s_sig(v) for v in _s_affine([max(0.0, h) for h in _s_affine(row, p["read.f1.W1"], p["read.f1.b1"])],
                                          p["read.f1.W2"], p["read.f1.b2"])] for row in rows]
    value = [[math.tanh(v) for v in _s_affine([max(0.0, h) for h in _s_affine(row, p["read.f2.W1"], p["read.f2.b1"])],
                                              p["read.f2.W2"], p["read.f2.b2"])] for row in rows]
    x_v = [[g * v for g, v in zip(gr, vr)] for gr, vr in zip(gate, value)]
    n = len(rows)
    return [max(x_v[t][j] for t in range(n)) + sum(x_v[t][j] for t in range(n)) / n
            for j in range(m)]


def _scalar_softmax_ce(logit_row, label):
    top = max(logit_row)
    exps = [math.exp(v - top) for v in logit_row]
    total = sum(exps)
    probs = [e / total for e in exps]
    return probs, -math.log(max(probs[label], 1e-12))


def _scalar_sem_pairs(rows, threshold):
    n = len(rows)
    pairs = set()
    for i in range(n):
        ni = math.sqrt(sum(v * v for v in rows[i]))
        if ni == 0.0:
            continue
        for j in range(i + 1, n):
            nj = math.sqrt(sum(v * v for v in rows[j]))
            if nj == 0.0:
                continue
            if sum(a * b for a, b in zip(rows[i], rows[j])) / (ni * nj) >= threshold:
                pairs.add((i, j))
                pairs.add((j, i))
    return pairs


# ---------------------------------------------------------------------------
# criterion 1: gradient fidelity


def test_criterion_1_gradient_fidelity():
    started = time.perf_counter()
    report = gradient_check_report()
    elapsed = time.perf_counter() - started
    # every layer family must be covered by the sweep
    for family in ("seq.", "str.alpha", "str.gru.", "fuse.", "read.", "out."):
        assert any(name.startswith(family) for name in report), f"missing family {family}"
    worst_name = max(report, key=report.get)
    worst = report[worst_name]
    over = {k: v for k, v in report.items() if not v < 1e-5}
    assert not over, f"relative error >= 1e-5: {over}"
    assert elapsed < 60.0, f"gradient check took {elapsed:.1f}s"
    print(f"PASS criterion 1: worst rel error {worst:.3e} ({worst_name}) "
          f"over {len(report)} tensors in {elapsed:.1f}s")


# ---------------------------------------------------------------------------
# criterion 2: scalar-loop oracle equivalence


def test_criterion_2_scalar_loop_oracles():
    xv, idx, params, config = _tiny_setup(seed=21)
    m = config.hidden_dim
    worst = 0.0

    e = edge_weights(ad.constant(xv), idx, params["str.alpha"], params["str.beta"])
    want_e = _scalar_edge_weights(xv, idx, params["str.alpha"].values[:, 0],
                                  float(params["str.beta"].values))
    for k in range(idx.num_pairs):
        worst = max(worst, abs(float(e.values[k, 0]) - want_e[k]))
    assert worst <= 1e-12, f"edge weights deviate by {worst:.3e}"

    got = mpnn_step(ad.constant(xv), idx, e, params, config)
    want_x, _, _ = _scalar_mpnn(xv.tolist(), want_e, idx, params, m)
    dev = float(np.abs(got.values - np.asarray(want_x)).max())
    worst = max(worst, dev)
    assert dev <= 1e-12, f"message passing deviates by {dev:.3e}"

    tokens = np.random.default_rng(22).normal(size=(5, m))
    x_g, _ = readout(ad.constant(tokens), params)
    dev = float(np.abs(x_g.values[0] - np.asarray(_scalar_readout(tokens, params, m))).max())
    worst = max(worst, dev)
    assert dev <= 1e-12, f"readout deviates by {dev:.3e}"

    logits, probs = classify(x_g, params)
    want_p, want_loss = _scalar_softmax_ce(logits.values[0].tolist(), 1)
    loss = cross_entropy(probs, 1)
    dev = max(float(np.abs(probs.values[0] - np.asarray(want_p)).max()),
              abs(float(loss.values) - want_loss))
    worst = max(worst, dev)
    assert dev <= 1e-12, f"loss deviates by {dev:.3e}"

    rng = np.random.default_rng(23)
    rows = rng.normal(size=(50, 8))
    rows[7] = 0.0  # zero-norm vector must never join an edge
    words = [f"w{i}" for i in range(50)]
    table = EmbeddingTable(dim=8, vectors={w: rows[i] for i, w in enumerate(words)})
    for threshold in (0.1, 0.5, 0.9):
        got_pairs = {(edge.src, edge.dst) for edge in build_semantic_edges(words, table, threshold=threshold)}
        assert got_pairs == _scalar_sem_pairs(rows.tolist(), threshold), f"threshold {threshold}"

    print(f"PASS criterion 2: scalar oracles agree, worst deviation {worst:.3e} "
          f"(edge weights, message passing, readout, loss); semantic edges exact at n=50")


# ---------------------------------------------------------------------------
# criterion 3: invariant suite


def test_criterion_3_invariant_suite():
    started = time.perf_counter()
    rng = np.random.default_rng(31)

    # softmax rows sum to one
    logits = ad.constant(rng.normal(size=(20, 7)) * 5.0)
    sums = ad.row_softmax(logits).values.sum(axis=1)
    assert np.abs(sums - 1.0).max() <= 1e-12

    # positive edge weights, bounded attention, and gate ranges on real
    # toy-corpus forwards
    docs = make_toy_docs(n_train=6, seed=31)
    table = random_table(toy_vocabulary(), dim=8, seed=31)
    config = ModelConfig(num_classes=2, embedding_dim=8, hidden_dim=6,
                         dropout_seq=0.0, dropout_str=0.0)
    params = init_params(config, np.random.default_rng(31))
    params["str.alpha"] = ad.parameter(np.random.default_rng(32).normal(size=(12, 1)) * 0.2)
    for doc in docs:
        graph = assemble_graph(doc, table, sem_threshold=0.9)
        idx = EdgeIndex.from_graph(graph)
        token_features, node_features = graph_features(graph, table)
        trace = forward(token_features, node_features, idx, params, config)
        for step_weights in trace.edge_weights_per_step:
            assert np.all(step_weights > 0.0)
        assert np.all(trace.attention > 0.0) and np.all(trace.attention < 1.0)
        projected = (node_features.values @ params["str.proj.W"].values
                     + params["str.proj.b"].values)
        e = edge_weights(ad.constant(projected), idx, params["str.alpha"], params["str.beta"])
        _, z, r = _scalar_mpnn(projected.tolist(), [float(v) for v in e.values[:, 0]],
                               idx, params, config.hidden_dim)
        gates = np.asarray(z + r)
        assert np.all(gates > 0.0) and np.all(gates < 1.0)

    # node-permutation equivariance of the structural branch
    n = 5
    edges = (_both_ways(0, 1, REL_COOC) + _both_ways(1, 2, REL_SYN)
             + _both_ways(3, 4, REL_SEM) + _both_ways(0, 4, REL_COOC))
    perm = np.random.default_rng(33).permutation(n)
    x = rng.normal(size=(n, 8)) * 0.5
    x_p = np.empty_like(x)
    x_p[perm] = x
    idx_a = EdgeIndex.from_graph(_graph_from_edges(n, edges))
    idx_b = EdgeIndex.from_graph(
        _graph_from_edges(n, [(int(perm[a]), int(perm[b]), rel) for a, b, rel in edges]))
    out_a, _ = structural_branch(ad.constant(x), idx_a, params, config)
    out_b, _ = structural_branch(ad.constant(x_p), idx_b, params, config)
    assert np.abs(out_b.values[perm] - out_a.values).max() <= 1e-12

    # co-occurrence edges grow with the window, semantic edges shrink with
    # the threshold
    for seed in range(5):
        doc_rng = np.random.default_rng(100 + seed)
        tokens = [f"t{doc_rng.integers(8)}" for _ in range(20)]
        word_to_node = {w: i for i, w in enumerate(dict.fromkeys(tokens))}
        grown = [build_cooccurrence_edges(tokens, word_to_node, window=w) for w in (2, 4, 8)]
        assert grown[0] <= grown[1] <= grown[2]
    sem_words = [f"w{i}" for i in range(12)]
    sem_table = random_table(sem_words, dim=6, seed=34)
    shrunk = [build_semantic_edges(sem_words, sem_table, threshold=t) for t in (0.2, 0.5, 0.8)]
    assert shrunk[2] <= shrunk[1] <= shrunk[0]

    # serialization round-trip identity
    graphs = [assemble_graph(d, table, sem_threshold=0.5) for d in docs]
    path = Path("roundtrip-check.jsonl")
    try:
        save_graphs(path, graphs)
        assert load_graphs(path) == graphs
    finally:
        path.unlink(missing_ok=True)

    elapsed = time.perf_counter() - started
    assert elapsed < 300.0, f"invariant suite took {elapsed:.1f}s"
    print(f"PASS criterion 3: softmax/positivity/gate/attention bounds, equivariance, "
          f"monotonicity, and round-trip invariants in {elapsed:.2f}s")


# ---------------------------------------------------------------------------
# criterion 4: toy memorization in every mode


def test_criterion_4_toy_memorization():
    docs = make_toy_docs(n_train=20, n_test=2, seed=3)
    table = random_table(toy_vocabulary(), dim=16, seed=3)
    graphs = [assemble_graph(d, table, sem_threshold=0.9) for d in docs]
    labels = LabelSpace.from_labels(d.label for d in docs)
    # 20 training documents; the two extras only satisfy the harness's
    # non-empty validation requirement
    splits = {d.id: ("train" if i < 20 else "val") for i, d in enumerate(docs)}

    reached = {}
    for mode in MODES:
        config = TrainConfig(learning_rate=0.01, epochs=30, batch_size=4, l2_weight=0.0,
                             dropout_str=0.0, dropout_seq=0.0, val_ratio=0.1, seed=0,
                             mode=mode, patience=None, hidden_dim=16, mpnn_steps=2)
        _params, report = train(graphs, splits, table, labels, config, include_test=False)
        perfect = [ep["epoch"] for ep in report.epochs if ep["train_accuracy"] == 1.0]
        assert perfect, f"mode {mode} never reached train accuracy 1.0 in 30 epochs"
        reached[mode] = perfect[0]
    print("PASS criterion 4: train accuracy 1.0 reached at epoch "
          + ", ".join(f"{mode}={epoch}" for mode, epoch in reached.items()))


# ---------------------------------------------------------------------------
# criteria 5-7: benchmark corpora (data-gated)


def _benchmark_root() -> Path:
    root = os.environ.get("TEXTGSL_DATA_DIR")
    if not root:
        pytest.skip("benchmark data unavailable: set TEXTGSL_DATA_DIR to a directory "
                    "holding mr.tsv, r8.tsv, and glove.6B.300d.txt")
    return Path(root)


def _load_benchmark(name: str):
    root = _benchmark_root()
    corpus_path = root / f"{name}.tsv"
    vector_path = root / "glove.6B.300d.txt"
    for path in (corpus_path, vector_path):
        if not path.exists():
            pytest.skip(f"benchmark file missing: {path}")
    docs = load_corpus(corpus_path)
    if name == "mr":
        # short texts: keep stopwords and rare words
        docs, vocab = preprocess(docs)
    else:
        docs, vocab = preprocess(docs, stopwords=load_stopwords(), min_freq=5)
    table = load_pretrained(vector_path, dim=300, vocabulary=vocab.index_to_word)
    graphs = [assemble_graph(d, table) for d in docs]
    labels = LabelSpace.from_labels(d.label for d in docs)
    splits = {d.id: d.split for d in docs}
    return graphs, splits, table, labels


def test_criterion_5_mr_accuracy():
    graphs, splits, table, labels = _load_benchmark("mr")
    config = TrainConfig(seed=0)
    _params, report = train(graphs, splits, table, labels, config)
    print(f"criterion 5 (MR): test accuracy {report.test_accuracy:.4f}")
    assert report.test_accuracy >= 0.75
    print("PASS criterion 5 (MR)")


def test_criterion_5_r8_accuracy():
    graphs, splits, table, labels = _load_benchmark("r8")
    config = TrainConfig(seed=0, l2_weight=5e-4)
    _params, report = train(graphs, splits, table, labels, config)
    print(f"criterion 5 (R8): test accuracy {report.test_accuracy:.4f}")
    assert report.test_accuracy >= 0.95
    print("PASS criterion 5 (R8)")


def test_criterion_6_ablation_directionality():
    graphs, splits, table, labels = _load_benchmark("mr")
    config = TrainConfig(seed=0)
    _rows, summary = run_ablation(graphs, splits, table, labels, config, seeds=(0, 1, 2))
    # raw numbers are part of the deliverable whether or not the ordering holds
    print("criterion 6 (MR, 3 seeds): "
          + ", ".join(f"{mode} mean={stats['mean']:.4f} std={stats['std']:.4f}"
                      for mode, stats in summary.items()))
    ablated_best = max(summary["no-lsl"]["mean"], summary["no-dsl"]["mean"])
    assert summary["full"]["mean"] >= ablated_best - 0.005
    print("PASS criterion 6")


def test_criterion_7_ratio_sweep_positive_trend():
    graphs, splits, table, labels = _load_benchmark("mr")
    config = TrainConfig(seed=0)
    ratios = (0.3, 0.4, 0.5, 0.6, 0.7, 0.8)
    rows = run_ratio_sweep(graphs, splits, table, labels, config, ratios)
    accuracies = [r["test_accuracy"] for r in rows]
    rho, _pvalue = spearmanr(ratios, accuracies)
    print(f"criterion 7 (MR): accuracies {['%.4f' % a for a in accuracies]}, spearman {rho:.3f}")
    assert rho > 0.0
    print("PASS criterion 7")


# ---------------------------------------------------------------------------
# criterion 8: re-run determinism


def _write_vector_file(path, table) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for word in sorted(table.vectors):
            row = table.vectors[word]
            f.write(word + " " + " ".join(repr(float(v)) for v in row) + "\n")


def test_criterion_8_rerun_determinism(tmp_path):
    docs = make_toy_docs(n_train=16, n_test=6, seed=8)
    table = random_table(toy_vocabulary(), dim=10, seed=8)
    graphs = [assemble_graph(d, table, sem_threshold=0.9) for d in docs]
    labels = LabelSpace.from_labels(d.label for d in docs)
    splits = {d.id: d.split for d in docs}
    config = TrainConfig(learning_rate=0.01, epochs=4, batch_size=8, l2_weight=0.0,
                         dropout_str=0.0, dropout_seq=0.0, val_ratio=0.25, seed=8,
                         patience=None, hidden_dim=8, mpnn_steps=1)

    # library level: reports and checkpoints serialize byte-identically
    first_ckpt, second_ckpt = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
    _params, first = train(graphs, splits, table, labels, config, checkpoint_path=first_ckpt)
    _params, second = train(graphs, splits, table, labels, config, checkpoint_path=second_ckpt)
    assert first.canonical_bytes() == second.canonical_bytes()
    assert first_ckpt.read_bytes() == second_ckpt.read_bytes()

    # command level: the train subcommand re-run into a fresh directory
    # produces the same report and checkpoint bytes
    docs_path, graphs_path, vectors_path = (tmp_path / "docs.jsonl", tmp_path / "graphs.jsonl",
                                            tmp_path / "vectors.txt")
    save_documents(docs_path, docs)
    save_graphs(graphs_path, graphs)
    _write_vector_file(vectors_path, table)
    argv = ["train", "--graphs", str(graphs_path), "--docs", str(docs_path),
            "--embeddings", str(vectors_path), "--seed", "8", "--epochs", "4",
            "--batch-size", "8", "--learning-rate", "0.01", "--l2-weight", "0",
            "--val-ratio", "0.25", "--dropout-seq", "0", "--dropout-str", "0",
            "--patience", "none", "--hidden-dim", "8", "--mpnn-steps", "1"]
    run_a, run_b = tmp_path / "run_a", tmp_path / "run_b"
    assert main(argv + ["--out", str(run_a)]) == 0
    assert main(argv + ["--out", str(run_b)]) == 0
    report_a = (run_a / "report.json").read_bytes()
    assert report_a == (run_b / "report.json").read_bytes()
    ckpt_a = (run_a / "model.ckpt").read_bytes()
    assert ckpt_a == (run_b / "model.ckpt").read_bytes()
    print(f"PASS criterion 8: byte-identical report ({len(report_a)} bytes) and "
          f"checkpoint ({len(ckpt_a)} bytes) across re-runs at library and command level")
