"""Multi-relation text graph construction.

Each document becomes a graph whose nodes are its unique words (first
occurrence order).  Three edge relations connect them:

  co    words sharing a fixed-width sliding window over the token sequence
  syn   words linked by a dependency arc in a supplied parse
  sem   words whose static embedding cosine similarity clears a threshold

All relations are undirected and stored as symmetric directed pairs; the
same pair may carry several relations (kept as distinct typed edges).
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus import Document, first_occurrence_order, tokenize

log = logging.getLogger(__name__)

REL_COOC = "co"
REL_SYN = "syn"
REL_SEM = "sem"
RELATIONS = (REL_COOC, REL_SYN, REL_SEM)

DEFAULT_WINDOW = 3
DEFAULT_SEM_THRESHOLD = 0.9


class GraphFormatError(ValueError):
    """A serialized graph record is missing fields or malformed."""


@dataclass(frozen=True, order=True)
class TypedEdge:
    """Directed edge src -> dst carrying one relation tag."""

    src: int
    dst: int
    rel: str


@dataclass(frozen=True)
class TextGraph:
    """One document as nodes (unique words) plus typed edges.

    positions[i] lists the token offsets where nodes[i] occurs, so the
    sequence view of the document can be rebuilt from the graph.
    """

    doc_id: str
    label: str
    nodes: tuple[str, ...]
    positions: tuple[tuple[int, ...], ...]
    edges: tuple[TypedEdge, ...]

    def num_nodes(self) -> int:
        return len(self.nodes)

    def edges_for(self, rel: str) -> list[TypedEdge]:
        return [e for e in self.edges if e.rel == rel]

    def token_sequence(self) -> list[int]:
        """Node index per token position, in document order."""
        order: list[tuple[int, int]] = []
        for node, offsets in enumerate(self.positions):
            for pos in offsets:
                order.append((pos, node))
        order.sort()
        return [node for _, node in order]


def _symmetric(pairs, rel: str) -> set[TypedEdge]:
    edges: set[TypedEdge] = set()
    for a, b in pairs:
        if a == b:
            continue
        edges.add(TypedEdge(a, b, rel))
        edges.add(TypedEdge(b, a, rel))
    return edges


def build_cooccurrence_edges(tokens, word_to_node: dict[str, int], window: int = DEFAULT_WINDOW) -> set[TypedEdge]:
    """Connect words sharing any width-`window` sliding window.

    Documents shorter than the window produce a single window spanning the
    whole document, so no document is left without co-occurrence edges.
    """
    if window < 2:
        raise ValueError(f"window must be >= 2, got {window}")
    n = len(tokens)
    pairs: set[tuple[int, int]] = set()
    span = min(window, n)
    for start in range(max(1, n - span + 1)):
        chunk = tokens[start:start + span]
        for i in range(len(chunk)):
            for j in range(i + 1, len(chunk)):
                a, b = word_to_node[chunk[i]], word_to_node[chunk[j]]
                if a != b:
                    pairs.add((a, b))
    return _symmetric(pairs, REL_COOC)


def build_syntax_edges(parse_sentences, word_to_node: dict[str, int], doc_id: str = "?") -> set[TypedEdge]:
    """Project dependency arcs from a parse onto graph nodes.

    Each sentence is a list of (form, head) rows with 1-based sentence-local
    heads; head 0 is the root and yields no edge.  Forms are matched to nodes
    through the shared tokenizer, so casing and punctuation differences do
    not break alignment.  Arcs whose endpoint words were filtered out of the
    graph are dropped.  A parse that aligns to nothing at all logs a warning
    and contributes no edges.
    """
    pairs: set[tuple[int, int]] = set()
    aligned = 0
    total = 0
    for sentence in parse_sentences:
        node_of: list[int | None] = []
        for form, _head in sentence:
            total += 1
            toks = tokenize(form)
            node = word_to_node.get(toks[0]) if len(toks) == 1 else None
            node_of.append(node)
            if node is not None:
                aligned += 1
        for i, (_form, head) in enumerate(sentence):
            if head == 0:
                continue
            if not 1 <= head <= len(sentence):
                continue
            a, b = node_of[i], node_of[head - 1]
            if a is None or b is None or a == b:
                continue
            pairs.add((a, b))
    if total and not aligned:
        log.warning("parse for %s aligns to no graph nodes; no syntax edges", doc_id)
    return _symmetric(pairs, REL_SYN)


def build_semantic_edges(words, table, threshold: float = DEFAULT_SEM_THRESHOLD) -> set[TypedEdge]:
    """Connect word pairs whose embedding cosine similarity is >= threshold.

    Words with zero-norm vectors have no direction and are skipped (counted
    once in a debug message).
    """
    n = len(words)
    if n < 2:
        return set()
    vectors = table.features_for(list(words))
    norms = np.linalg.norm(vectors, axis=1)
    usable = norms > 0.0
    skipped = int(n - usable.sum())
    if skipped:
        log.debug("semantic edges: skipped %d zero-norm vectors", skipped)
    unit = np.zeros_like(vectors)
    unit[usable] = vectors[usable] / norms[usable, None]
    sims = unit @ unit.T
    pairs = set()
    for i in range(n):
        if not usable[i]:
            continue
        for j in range(i + 1, n):
            if usable[j] and sims[i, j] >= threshold:
                pairs.add((i, j))
    return _symmetric(pairs, REL_SEM)


def assemble_graph(
    doc: Document,
    table,
    parse_sentences=None,
    window: int = DEFAULT_WINDOW,
    sem_threshold: float = DEFAULT_SEM_THRESHOLD,
) -> TextGraph:
    """Build the full multi-relation graph for one preprocessed document."""
    words, positions = first_occurrence_order(doc.tokens)
    word_to_node = {w: i for i, w in enumerate(words)}
    edges: set[TypedEdge] = set()
    edges |= build_cooccurrence_edges(list(doc.tokens), word_to_node, window=window)
    if parse_sentences:
        edges |= build_syntax_edges(parse_sentences, word_to_node, doc_id=doc.id)
    edges |= build_semantic_edges(words, table, threshold=sem_threshold)
    return TextGraph(
        doc_id=doc.id,
        label=doc.label,
        nodes=tuple(words),
        positions=tuple(tuple(positions[i]) for i in range(len(words))),
        edges=tuple(sorted(edges)),
    )


# ---------------------------------------------------------------------------
# serialization: JSON lines, one graph per line

_GRAPH_FIELDS = ("doc_id", "label", "nodes", "positions", "edges")


def save_graphs(path, graphs) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for g in graphs:
            record = {
                "doc_id": g.doc_id,
                "label": g.label,
                "nodes": list(g.nodes),
                "positions": {str(i): list(p) for i, p in enumerate(g.positions)},
                "edges": [[e.src, e.dst, e.rel] for e in g.edges],
            }
            f.write(json.dumps(record, sort_keys=True) + "\n")


def load_graphs(path) -> list[TextGraph]:
    graphs = []
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as err:
                raise GraphFormatError(f"{path}:{lineno}: invalid JSON: {err}") from None
            missing = [k for k in _GRAPH_FIELDS if k not in record]
            if missing:
                raise GraphFormatError(f"{path}:{lineno}: missing fields {missing}")
            n = len(record["nodes"])
            edges = []
            for src, dst, rel in record["edges"]:
                if not (0 <= src < n and 0 <= dst < n):
                    raise GraphFormatError(f"{path}:{lineno}: edge [{src}, {dst}] out of range")
                if rel not in RELATIONS:
                    raise GraphFormatError(f"{path}:{lineno}: unknown relation {rel!r}")
                edges.append(TypedEdge(src, dst, rel))
            raw_positions = record["positions"]
            try:
                positions = tuple(tuple(raw_positions[str(i)]) for i in range(n))
            except KeyError as err:
                raise GraphFormatError(f"{path}:{lineno}: positions missing node {err}") from None
            graphs.append(
                TextGraph(
                    doc_id=record["doc_id"],
                    label=record["label"],
                    nodes=tuple(record["nodes"]),
                    positions=positions,
                    edges=tuple(edges),
                )
            )
    return graphs


def read_conllu(path) -> dict[str, list[list[tuple[str, int]]]]:
    """Read dependency parses grouped by document.

    Sentences are blank-line separated blocks of tab-columned rows (10-column
    CoNLL-U; only FORM and HEAD are used).  A `# doc_id = <id>` comment tags
    every following sentence with that document until the next such comment.
    Several blocks under one id all attach to it, in order.  Rows with range
    ids (1-2) or empty-node ids (1.1) are ignored.
    """
    parses: dict[str, list[list[tuple[str, int]]]] = {}
    current_doc: str | None = None
    sentence: list[tuple[str, int]] = []

    def flush():
        nonlocal sentence
        if sentence:
            if current_doc is None:
                raise GraphFormatError(f"{path}: sentence before any doc_id comment")
            parses.setdefault(current_doc, []).append(sentence)
            sentence = []

    with open(path, "r", encoding="utf-8") as f:
        for raw in f:
            line = raw.rstrip("\n")
            if not line.strip():
                flush()
                continue
            if line.startswith("#"):
                comment = line[1:].strip()
                if comment.startswith("doc_id"):
                    _, _, value = comment.partition("=")
                    flush()
                    current_doc = value.strip()
                continue
            cols = line.split("\t")
            if len(cols) < 8:
                raise GraphFormatError(f"{path}: malformed row {line!r}")
            token_id, form, head = cols[0], cols[1], cols[6]
            if "-" in token_id or "." in token_id:
                continue
            try:
                head_index = int(head)
            except ValueError:
                raise GraphFormatError(f"{path}: non-integer head in row {line!r}") from None
            sentence.append((form, head_index))
    flush()
    return parses
