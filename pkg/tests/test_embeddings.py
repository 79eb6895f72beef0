"""Embedding table tests: vector files, OOV handling, per-document features."""

import numpy as np
import pytest

from textgsl.corpus import Document
from textgsl.embeddings import (
    EmbeddingTable,
    FormatError,
    features_for,
    load_pretrained,
    random_table,
)


def _write_vectors(path, rows):
    path.write_text("\n".join(rows) + "\n", encoding="utf-8")


def test_load_pretrained_parses_word_and_values(tmp_path):
    path = tmp_path / "vecs.txt"
    _write_vectors(path, ["hello 0.1 0.2"])
    table = load_pretrained(path)
    assert table.dim == 2
    np.testing.assert_allclose(table.lookup("hello"), [0.1, 0.2])


def test_self_cosine_is_one(tmp_path):
    path = tmp_path / "vecs.txt"
    _write_vectors(path, ["king 0.3 -0.4 0.5"])
    v = load_pretrained(path).lookup("king")
    cos = float(v @ v / (np.linalg.norm(v) * np.linalg.norm(v)))
    assert cos == pytest.approx(1.0, abs=1e-12)


def test_wrong_width_lines_skipped_with_warning(tmp_path, caplog):
    path = tmp_path / "vecs.txt"
    _write_vectors(path, ["good 0.1 0.2", "broken 0.1", "fine 0.3 0.4"])
    with caplog.at_level("WARNING"):
        table = load_pretrained(path)
    assert "good" in table.vectors and "fine" in table.vectors
    assert "broken" not in table.vectors
    assert any("1" in r.message and "skip" in r.message.lower() for r in caplog.records)


def test_load_pretrained_empty_file_rejected(tmp_path):
    path = tmp_path / "vecs.txt"
    path.write_text("", encoding="utf-8")
    with pytest.raises(FormatError):
        load_pretrained(path)


def test_load_pretrained_explicit_dim_filters_mismatches(tmp_path):
    path = tmp_path / "vecs.txt"
    _write_vectors(path, ["word 0.1 0.2 0.3"])
    # nothing in the file matches the requested width, so nothing is usable
    with pytest.raises(FormatError, match="no usable"):
        load_pretrained(path, dim=5)


def test_load_pretrained_vocabulary_filter(tmp_path):
    path = tmp_path / "vecs.txt"
    _write_vectors(path, ["keep 1 2", "drop 3 4"])
    table = load_pretrained(path, vocabulary={"keep"})
    assert "keep" in table.vectors and "drop" not in table.vectors


def test_oov_vector_is_deterministic_within_table(tmp_path):
    path = tmp_path / "vecs.txt"
    _write_vectors(path, ["seen 0.0 0.0"])
    table = load_pretrained(path, oov_seed=11)
    first = table.lookup("unseen")
    second = table.lookup("unseen")
    np.testing.assert_array_equal(first, second)


def test_oov_vector_matches_across_table_instances(tmp_path):
    path = tmp_path / "vecs.txt"
    _write_vectors(path, ["seen 0.0 0.0"])
    a = load_pretrained(path, oov_seed=11).lookup("mystery")
    b = load_pretrained(path, oov_seed=11).lookup("mystery")
    np.testing.assert_array_equal(a, b)


def test_oov_seed_changes_vector(tmp_path):
    path = tmp_path / "vecs.txt"
    _write_vectors(path, ["seen 0.0 0.0"])
    a = load_pretrained(path, oov_seed=1).lookup("mystery")
    b = load_pretrained(path, oov_seed=2).lookup("mystery")
    assert not np.array_equal(a, b)


def test_oov_values_within_documented_range():
    table = EmbeddingTable(dim=8, vectors={}, oov_seed=0)
    sample = np.stack([table.lookup(f"w{i}") for i in range(1000)])
    assert np.all(sample >= -0.01) and np.all(sample <= 0.01)
    # the draws are not degenerate
    assert np.ptp(sample) > 0.01


def test_features_for_unique_rows_and_positions():
    table = random_table(["cat", "sat"], dim=4, seed=0)
    doc = Document(id="d", label="x", tokens=("cat", "sat", "cat"), split="train")
    matrix, words, positions = features_for(doc, table)
    assert matrix.shape == (2, 4)
    assert words == ("cat", "sat")
    assert positions == {0: [0, 2], 1: [1]}
    np.testing.assert_array_equal(matrix[0], table.lookup("cat"))


def test_features_positions_partition_token_indices():
    table = random_table([], dim=3, seed=0)
    doc = Document(id="d", label="x", tokens=("a", "b", "a", "c", "b"), split="train")
    _, words, positions = features_for(doc, table)
    seen = sorted(p for plist in positions.values() for p in plist)
    assert seen == list(range(len(doc.tokens)))
    # disjointness: every token index appears exactly once overall
    assert len(seen) == len(set(seen))
    assert len(words) == len(positions)


def test_random_table_deterministic_and_scaled():
    a = random_table(["x", "y"], dim=16, seed=5, scale=0.5)
    b = random_table(["x", "y"], dim=16, seed=5, scale=0.5)
    np.testing.assert_array_equal(a.lookup("x"), b.lookup("x"))
    assert np.all(np.abs(a.lookup("y")) <= 0.5)
    c = random_table(["x", "y"], dim=16, seed=6, scale=0.5)
    assert not np.array_equal(a.lookup("x"), c.lookup("x"))


def test_table_dim_consistency():
    table = random_table(["x"], dim=7, seed=0)
    assert table.lookup("x").shape == (7,)
    assert table.lookup("never-seen").shape == (7,)
