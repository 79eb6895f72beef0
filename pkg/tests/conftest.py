"""Shared fixtures: tiny synthetic corpora small enough for fast CPU tests."""

import numpy as np
import pytest

from textgsl.corpus import Document, LabelSpace
from textgsl.embeddings import random_table
from textgsl.graphs import assemble_graph

POS_WORDS = ["good", "great", "fine", "happy", "superb"]
NEG_WORDS = ["bad", "awful", "poor", "sad", "dire"]
FILLER = ["movie", "film", "plot", "actor", "story", "scene"]


def make_toy_docs(n_train: int = 20, n_test: int = 0, seed: int = 0) -> list[Document]:
    """Two-class corpus whose labels correlate with sentiment-word choice."""
    rng = np.random.default_rng(seed)
    docs = []
    for i in range(n_train + n_test):
        label = "pos" if i % 2 == 0 else "neg"
        bank = POS_WORDS if label == "pos" else NEG_WORDS
        length = int(rng.integers(5, 9))
        tokens = tuple(
            bank[rng.integers(len(bank))] if rng.random() < 0.6 else FILLER[rng.integers(len(FILLER))]
            for _ in range(length)
        )
        split = "train" if i < n_train else "test"
        docs.append(Document(id=f"doc{i:03d}", label=label, tokens=tokens, split=split))
    return docs


def toy_vocabulary() -> list[str]:
    return sorted(set(POS_WORDS + NEG_WORDS + FILLER))


def build_toy_pipeline(n_train: int = 20, n_test: int = 0, seed: int = 0, dim: int = 16,
                       sem_threshold: float = 0.9):
    """Documents, graphs, embedding table, labels, and split map in one call."""
    docs = make_toy_docs(n_train=n_train, n_test=n_test, seed=seed)
    table = random_table(toy_vocabulary(), dim=dim, seed=seed)
    graphs = [assemble_graph(d, table, sem_threshold=sem_threshold) for d in docs]
    labels = LabelSpace.from_labels(d.label for d in docs)
    splits = {d.id: d.split for d in docs}
    return docs, graphs, table, labels, splits


@pytest.fixture
def toy_pipeline():
    return build_toy_pipeline(n_train=20, n_test=10, seed=0)
