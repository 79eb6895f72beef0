"""Corpus loading, preprocessing, vocabulary construction, and split handling.

Corpus file format: UTF-8, one document per line, `split<TAB>label<TAB>text`
with split in {train, test}.  Labels may instead live in a separate file of
`split<TAB>label` (or `id<TAB>split<TAB>label`) lines paired with a corpus
file of raw text lines.
"""

from __future__ import annotations

import json
import logging
import math
import random
import re
from collections import Counter
from dataclasses import dataclass, replace
from importlib import resources
from pathlib import Path

log = logging.getLogger(__name__)

SPLITS = ("train", "val", "test")

# maximal runs of ascii alphanumerics, joined by single intra-word
# apostrophes or hyphens
_TOKEN_RE = re.compile(r"[a-z0-9]+(?:['-][a-z0-9]+)*")
_WORD_OK_RE = re.compile(r"^[a-z0-9]+(?:['-][a-z0-9]+)*$")


class IngestError(ValueError):
    """A corpus or label file line violates the expected format."""


class ConfigError(ValueError):
    """A configuration value is out of its legal range."""


@dataclass(frozen=True)
class Document:
    """One labeled text as an ordered token sequence with a split tag."""

    id: str
    label: str
    tokens: tuple[str, ...]
    split: str


@dataclass(frozen=True)
class Vocabulary:
    """Contiguously indexed word set with corpus frequency counts."""

    word_to_index: dict[str, int]
    index_to_word: tuple[str, ...]
    frequencies: dict[str, int]

    def __len__(self) -> int:
        return len(self.index_to_word)

    def __contains__(self, word: str) -> bool:
        return word in self.word_to_index


@dataclass(frozen=True)
class LabelSpace:
    """Class names mapped to contiguous indices 0..C-1."""

    label_to_index: dict[str, int]
    labels: tuple[str, ...]

    @classmethod
    def from_labels(cls, labels) -> "LabelSpace":
        ordered = tuple(sorted(set(labels)))
        return cls({name: i for i, name in enumerate(ordered)}, ordered)

    @property
    def num_classes(self) -> int:
        return len(self.labels)

    def index(self, label: str) -> int:
        return self.label_to_index[label]


def tokenize(text: str) -> list[str]:
    """Lowercase, strip non-alphanumerics except intra-word '/-, split on whitespace."""
    return _TOKEN_RE.findall(text.lower())


def first_occurrence_order(tokens) -> tuple[list[str], dict[int, list[int]]]:
    """Unique words in first-occurrence order plus node index -> token positions."""
    words: list[str] = []
    seen: dict[str, int] = {}
    positions: dict[int, list[int]] = {}
    for pos, tok in enumerate(tokens):
        node = seen.get(tok)
        if node is None:
            node = len(words)
            seen[tok] = node
            words.append(tok)
            positions[node] = []
        positions[node].append(pos)
    return words, positions


def load_corpus(corpus_path, label_path=None) -> list[Document]:
    """Read documents from a corpus file, tokenizing each text.

    With label_path=None every corpus line is `split<TAB>label<TAB>text`;
    otherwise corpus lines are raw text and label lines carry the
    `[id<TAB>]split<TAB>label` pairing, matched by line number.
    """
    corpus_path = Path(corpus_path)
    lines = corpus_path.read_text(encoding="utf-8").splitlines()
    if label_path is None:
        records = []
        for lineno, line in enumerate(lines, start=1):
            if not line.strip():
                continue
            parts = line.split("\t", 2)
            if len(parts) != 3:
                raise IngestError(f"{corpus_path}:{lineno}: expected split<TAB>label<TAB>text")
            split, label, text = parts
            records.append((lineno, f"doc{lineno - 1:05d}", split, label, text))
    else:
        label_lines = Path(label_path).read_text(encoding="utf-8").splitlines()
        if len(label_lines) != len(lines):
            raise IngestError(
                f"{label_path}: {len(label_lines)} label lines for {len(lines)} corpus lines"
            )
        records = []
        for lineno, (line, label_line) in enumerate(zip(lines, label_lines), start=1):
            parts = label_line.split("\t")
            if len(parts) == 2:
                doc_id, (split, label) = f"doc{lineno - 1:05d}", parts
            elif len(parts) == 3:
                doc_id, split, label = parts
            else:
                raise IngestError(f"{label_path}:{lineno}: expected [id<TAB>]split<TAB>label")
            records.append((lineno, doc_id, split, label, line))

    docs = []
    for lineno, doc_id, split, label, text in records:
        split = split.strip()
        if split not in ("train", "test"):
            raise IngestError(f"{corpus_path}:{lineno}: unknown split tag {split!r}")
        tokens = tuple(tokenize(text))
        if not tokens:
            raise IngestError(f"{corpus_path}:{lineno}: document is empty after tokenization")
        docs.append(Document(id=doc_id, label=label.strip(), tokens=tokens, split=split))
    return docs


def load_stopwords(path=None) -> set[str]:
    """Stopword file is one lowercase word per line; None loads the bundled list."""
    if path is None:
        text = resources.files("textgsl.data").joinpath("stopwords_en.txt").read_text("utf-8")
    else:
        text = Path(path).read_text(encoding="utf-8")
    return {line.strip() for line in text.splitlines() if line.strip()}


def preprocess(
    docs: list[Document],
    stopword_path=None,
    min_freq: int = 1,
    stopwords: set[str] | None = None,
) -> tuple[list[Document], Vocabulary]:
    """Filter tokens, drop newly empty documents, and build the vocabulary.

    Removes stopwords (only when a list is supplied), tokens containing
    non-English characters, and words whose corpus-wide frequency is below
    min_freq.  The vocabulary covers surviving words of all splits, so
    inductive test-only words stay representable.
    """
    if min_freq < 1:
        raise ConfigError(f"min_freq must be >= 1, got {min_freq}")
    if stopwords is None:
        stopwords = load_stopwords(stopword_path) if stopword_path is not None else set()

    counts: Counter[str] = Counter()
    for doc in docs:
        counts.update(doc.tokens)

    def keep(word: str) -> bool:
        if word in stopwords:
            return False
        if not _WORD_OK_RE.match(word):
            return False
        return counts[word] >= min_freq

    survivors: list[Document] = []
    dropped = 0
    kept_counts: Counter[str] = Counter()
    for doc in docs:
        tokens = tuple(t for t in doc.tokens if keep(t))
        if not tokens:
            dropped += 1
            log.warning("dropping document %s: empty after preprocessing", doc.id)
            continue
        kept_counts.update(tokens)
        survivors.append(replace(doc, tokens=tokens))
    if dropped:
        log.warning("dropped %d empty documents during preprocessing", dropped)

    index_to_word: list[str] = []
    seen: set[str] = set()
    for doc in survivors:
        for tok in doc.tokens:
            if tok not in seen:
                seen.add(tok)
                index_to_word.append(tok)
    vocab = Vocabulary(
        word_to_index={w: i for i, w in enumerate(index_to_word)},
        index_to_word=tuple(index_to_word),
        frequencies={w: kept_counts[w] for w in index_to_word},
    )
    return survivors, vocab


def select_validation_ids(ids, ratio: float, seed: int) -> set[str]:
    """Pick round(ratio * n) ids by seeded shuffle; rounding is half-up.

    Uses the stdlib Mersenne Twister, which is stable across platforms, so
    membership is bit-identical for a fixed seed.
    """
    if not 0.0 < ratio < 1.0:
        raise ConfigError(f"validation ratio must be in (0, 1), got {ratio}")
    n_val = int(math.floor(ratio * len(ids) + 0.5))
    shuffled = list(ids)
    random.Random(seed).shuffle(shuffled)
    return set(shuffled[:n_val])


def make_validation_split(docs: list[Document], ratio: float, seed: int) -> list[Document]:
    """Re-tag round(ratio * |train|) training documents as val."""
    train_ids = [d.id for d in docs if d.split == "train"]
    val_ids = select_validation_ids(train_ids, ratio, seed)
    return [replace(d, split="val") if d.id in val_ids else d for d in docs]


# ---------------------------------------------------------------------------
# manifest I/O: JSON lines, one object per document


def save_documents(path, docs: list[Document]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for doc in docs:
            record = {"id": doc.id, "label": doc.label, "split": doc.split, "tokens": list(doc.tokens)}
            f.write(json.dumps(record, sort_keys=True) + "\n")


def load_documents(path) -> list[Document]:
    docs = []
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as err:
                raise IngestError(f"{path}:{lineno}: invalid JSON: {err}") from None
            for field in ("id", "label", "split", "tokens"):
                if field not in record:
                    raise IngestError(f"{path}:{lineno}: missing field {field!r}")
            if record["split"] not in SPLITS:
                raise IngestError(f"{path}:{lineno}: unknown split tag {record['split']!r}")
            docs.append(
                Document(
                    id=record["id"],
                    label=record["label"],
                    tokens=tuple(record["tokens"]),
                    split=record["split"],
                )
            )
    return docs


def save_vocabulary(path, vocab: Vocabulary) -> None:
    record = {
        "words": list(vocab.index_to_word),
        "frequencies": [vocab.frequencies[w] for w in vocab.index_to_word],
    }
    Path(path).write_text(json.dumps(record, sort_keys=True) + "\n", encoding="utf-8")


def load_vocabulary(path) -> Vocabulary:
    record = json.loads(Path(path).read_text(encoding="utf-8"))
    words = record["words"]
    freqs = record["frequencies"]
    return Vocabulary(
        word_to_index={w: i for i, w in enumerate(words)},
        index_to_word=tuple(words),
        frequencies=dict(zip(words, freqs)),
    )
