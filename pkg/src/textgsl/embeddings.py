"""Pretrained word vector lookup with deterministic out-of-vocabulary fallback.

Embedding file format: text, one entry per line, `word v1 v2 ... vD` separated
by single spaces (the usual GloVe distribution layout).
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

OOV_RANGE = 0.01


class FormatError(ValueError):
    """An embedding file yields no usable entries."""


def _oov_vector(word: str, dim: int, seed: int, scale: float) -> np.ndarray:
    """Uniform(-scale, scale) vector seeded by a stable hash of (seed, word).

    blake2b rather than hash() so the draw does not change between
    interpreter processes.
    """
    digest = hashlib.blake2b(f"{seed}:{word}".encode("utf-8"), digest_size=8).digest()
    rng = np.random.default_rng(int.from_bytes(digest, "little"))
    return rng.uniform(-scale, scale, size=dim)


@dataclass
class EmbeddingTable:
    """Word -> vector map; unseen words get seeded random vectors, cached per table."""

    dim: int
    vectors: dict[str, np.ndarray]
    oov_seed: int = 0
    oov_range: float = OOV_RANGE
    _oov_cache: dict[str, np.ndarray] = field(default_factory=dict, repr=False)

    def __contains__(self, word: str) -> bool:
        return word in self.vectors

    def lookup(self, word: str) -> np.ndarray:
        vec = self.vectors.get(word)
        if vec is not None:
            return vec
        vec = self._oov_cache.get(word)
        if vec is None:
            vec = _oov_vector(word, self.dim, self.oov_seed, self.oov_range)
            self._oov_cache[word] = vec
        return vec

    def features_for(self, words) -> np.ndarray:
        """Stack lookup vectors for a word sequence into an (n, dim) matrix."""
        if not words:
            return np.zeros((0, self.dim))
        return np.stack([self.lookup(w) for w in words])


def features_for(doc, table: EmbeddingTable):
    """Feature matrix over a document's unique words, plus alignment info.

    Returns (n_unique x D matrix, words in first-occurrence order, node index
    -> token positions map); the map is what later scatters node states back
    to token order.
    """
    from .corpus import first_occurrence_order

    words, positions = first_occurrence_order(doc.tokens)
    return table.features_for(words), tuple(words), positions


def load_pretrained(path, dim: int | None = None, vocabulary=None, oov_seed: int = 0) -> EmbeddingTable:
    """Parse a text embedding file, keeping only vocabulary words when given.

    Lines whose vector width disagrees with the first valid line (or the
    explicit dim) are skipped and counted in a single warning.  A file with
    no valid entries raises FormatError.
    """
    path = Path(path)
    vectors: dict[str, np.ndarray] = {}
    skipped = 0
    keep = None if vocabulary is None else set(vocabulary)
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            parts = line.rstrip("\n").split(" ")
            if len(parts) < 2:
                skipped += 1
                continue
            word, values = parts[0], parts[1:]
            if dim is None:
                dim = len(values)
            if len(values) != dim:
                skipped += 1
                continue
            if keep is not None and word not in keep:
                continue
            try:
                vectors[word] = np.asarray([float(v) for v in values])
            except ValueError:
                skipped += 1
    if skipped:
        log.warning("%s: skipped %d malformed or wrong-width lines", path, skipped)
    if not vectors or dim is None:
        raise FormatError(f"{path}: no usable embedding entries")
    return EmbeddingTable(dim=dim, vectors=vectors, oov_seed=oov_seed)


def random_table(words, dim: int, seed: int = 0, scale: float = 0.5) -> EmbeddingTable:
    """Synthetic table for tests and offline smoke runs: every word seeded-random."""
    rng = np.random.default_rng(seed)
    vectors = {w: rng.uniform(-scale, scale, size=dim) for w in sorted(set(words))}
    return EmbeddingTable(dim=dim, vectors=vectors, oov_seed=seed)
