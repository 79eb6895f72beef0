"""Scikit-learn style wrapper around the full pipeline.

TextGSLClassifier takes raw texts (or pre-tokenized word lists) and labels,
builds per-document multi-relation graphs, and trains the two-branch network
with the seeded harness.  It follows the usual estimator contract: __init__
stores parameters verbatim, fit returns self, fitted state lives in
trailing-underscore attributes, and clone()/get_params() round-trip.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from .corpus import Document, LabelSpace, preprocess, tokenize
from .embeddings import EmbeddingTable, random_table
from .graphs import assemble_graph
from .model import MODE_FULL, EdgeIndex, forward, graph_features
from .training import TrainConfig, evaluate, train


def check_texts(X) -> list[list[str]]:
    """Normalize input documents to token lists; reject empties."""
    if isinstance(X, str):
        raise ValueError("X must be a sequence of documents, not a single string")
    docs = []
    for i, item in enumerate(X):
        tokens = tokenize(item) if isinstance(item, str) else [str(t).lower() for t in item]
        if not tokens:
            raise ValueError(f"document {i} is empty after tokenization")
        docs.append(tokens)
    if not docs:
        raise ValueError("X is empty")
    return docs


def check_labels(y, n_docs: int) -> list[str]:
    labels = [str(v) for v in np.asarray(y).ravel()]
    if len(labels) != n_docs:
        raise ValueError(f"X has {n_docs} documents but y has {len(labels)} labels")
    if len(set(labels)) < 2:
        raise ValueError("y must contain at least 2 classes")
    return labels


class TextGSLClassifier(ClassifierMixin, BaseEstimator):
    """Inductive text classifier over per-document word graphs.

    Parameters mirror the training harness defaults; embedding_table may be
    a prebuilt EmbeddingTable (e.g. loaded pretrained vectors), otherwise a
    seeded random table of width embedding_dim is built over the fit
    vocabulary and unseen prediction-time words fall back to the table's
    deterministic OOV draw.
    """

    def __init__(
        self,
        hidden_dim: int = 32,
        embedding_dim: int = 50,
        embedding_table: EmbeddingTable | None = None,
        window: int = 3,
        sem_threshold: float = 0.9,
        num_heads: int = 1,
        encoder_layers: int = 1,
        mpnn_steps: int = 2,
        mode: str = MODE_FULL,
        learning_rate: float = 0.001,
        epochs: int = 50,
        batch_size: int = 32,
        l2_weight: float = 5e-5,
        dropout_seq: float = 0.0,
        dropout_str: float = 0.0,
        val_ratio: float = 0.1,
        patience: int | None = 20,
        stopwords=None,
        min_freq: int = 1,
        seed: int = 0,
    ):
        self.hidden_dim = hidden_dim
        self.embedding_dim = embedding_dim
        self.embedding_table = embedding_table
        self.window = window
        self.sem_threshold = sem_threshold
        self.num_heads = num_heads
        self.encoder_layers = encoder_layers
        self.mpnn_steps = mpnn_steps
        self.mode = mode
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.batch_size = batch_size
        self.l2_weight = l2_weight
        self.dropout_seq = dropout_seq
        self.dropout_str = dropout_str
        self.val_ratio = val_ratio
        self.patience = patience
        self.stopwords = stopwords
        self.min_freq = min_freq
        self.seed = seed

    def _train_config(self) -> TrainConfig:
        return TrainConfig(
            learning_rate=self.learning_rate,
            epochs=self.epochs,
            batch_size=self.batch_size,
            l2_weight=self.l2_weight,
            dropout_str=self.dropout_str,
            dropout_seq=self.dropout_seq,
            val_ratio=self.val_ratio,
            seed=self.seed,
            mode=self.mode,
            patience=self.patience,
            hidden_dim=self.hidden_dim,
            num_heads=self.num_heads,
            encoder_layers=self.encoder_layers,
            mpnn_steps=self.mpnn_steps,
        )

    def _build_graphs(self, token_lists, labels, parses, split: str, id_prefix: str):
        docs = [
            Document(id=f"{id_prefix}{i:05d}", label=labels[i], tokens=tuple(toks), split=split)
            for i, toks in enumerate(token_lists)
        ]
        graphs = []
        for i, doc in enumerate(docs):
            parse = parses[i] if parses is not None else None
            graphs.append(
                assemble_graph(
                    doc,
                    self.table_,
                    parse_sentences=parse,
                    window=self.window,
                    sem_threshold=self.sem_threshold,
                )
            )
        return docs, graphs

    def fit(self, X, y, parses=None):
        """Train on documents X with class labels y.

        parses, when given, is a sequence aligned with X; each entry is a
        list of dependency-parsed sentences [(form, head), ...] or None.
        """
        token_lists = check_texts(X)
        labels = check_labels(y, len(token_lists))
        if parses is not None and len(parses) != len(token_lists):
            raise ValueError(f"parses has {len(parses)} entries for {len(token_lists)} documents")

        stopword_set = set(self.stopwords) if self.stopwords is not None else set()
        docs = [
            Document(id=f"fit{i:05d}", label=labels[i], tokens=tuple(toks), split="train")
            for i, toks in enumerate(token_lists)
        ]
        kept, vocab = preprocess(docs, min_freq=self.min_freq, stopwords=stopword_set)
        if len(kept) < len(docs):
            raise ValueError("some documents became empty after stopword/frequency filtering")

        if self.embedding_table is not None:
            self.table_ = self.embedding_table
        else:
            self.table_ = random_table(vocab.index_to_word, dim=self.embedding_dim, seed=self.seed)
        self.vocabulary_ = vocab
        self.label_space_ = LabelSpace.from_labels(labels)
        self.classes_ = np.asarray(self.label_space_.labels)

        graphs = []
        for i, doc in enumerate(kept):
            parse = parses[i] if parses is not None else None
            graphs.append(
                assemble_graph(
                    doc, self.table_, parse_sentences=parse,
                    window=self.window, sem_threshold=self.sem_threshold,
                )
            )
        splits = {g.doc_id: "train" for g in graphs}
        config = self._train_config()
        self.params_, self.report_ = train(
            graphs, splits, self.table_, self.label_space_, config, include_test=False
        )
        self.model_config_ = config.model_config(
            embedding_dim=self.table_.dim, num_classes=self.label_space_.num_classes
        )
        return self

    def predict_proba(self, X, parses=None):
        check_is_fitted(self, "params_")
        token_lists = check_texts(X)
        if parses is not None and len(parses) != len(token_lists):
            raise ValueError(f"parses has {len(parses)} entries for {len(token_lists)} documents")
        placeholder = [self.classes_[0]] * len(token_lists)
        _docs, graphs = self._build_graphs(token_lists, placeholder, parses, "test", "pred")
        rows = []
        for g in graphs:
            token_features, node_features = graph_features(g, self.table_)
            trace = forward(
                token_features, node_features, EdgeIndex.from_graph(g),
                self.params_, self.model_config_, train=False,
            )
            rows.append(trace.probabilities.values[0])
        return np.stack(rows)

    def predict(self, X, parses=None):
        probabilities = self.predict_proba(X, parses=parses)
        return self.classes_[np.argmax(probabilities, axis=1)]

    def evaluate(self, X, y, parses=None):
        """Accuracy plus per-class breakdown on labeled documents."""
        check_is_fitted(self, "params_")
        token_lists = check_texts(X)
        labels = [str(v) for v in np.asarray(y).ravel()]
        if len(labels) != len(token_lists):
            raise ValueError(f"X has {len(token_lists)} documents but y has {len(labels)} labels")
        _docs, graphs = self._build_graphs(token_lists, labels, parses, "test", "eval")
        result = evaluate(self.params_, self.model_config_, graphs, self.table_, self.label_space_)
        return result
