"""textgsl: inductive text classification over per-document word graphs.

Each document becomes a multi-relation graph (co-occurrence, syntax,
semantic edges over its unique words) processed by an adaptive gated
message-passing network, alongside a transformer encoder over the token
sequence; a bidirectional GRU fuses the branches before an attentive
readout and softmax classifier.  Everything runs on a small numpy
reverse-mode autodiff engine with seeded, reproducible training.
"""

from .autodiff import AdamState, Tape, Tensor, adam_step, backward, finite_diff_check
from .corpus import Document, LabelSpace, Vocabulary, load_corpus, make_validation_split, preprocess, tokenize
from .embeddings import EmbeddingTable, load_pretrained, random_table
from .estimator import TextGSLClassifier
from .graphs import TextGraph, TypedEdge, assemble_graph, load_graphs, read_conllu, save_graphs
from .model import EdgeIndex, ModelConfig, forward, init_params
from .training import RunReport, TrainConfig, evaluate, run_ablation, run_ratio_sweep, train

__version__ = "0.1.0"

__all__ = [
    "AdamState",
    "Tape",
    "Tensor",
    "adam_step",
    "backward",
    "finite_diff_check",
    "Document",
    "LabelSpace",
    "Vocabulary",
    "load_corpus",
    "make_validation_split",
    "preprocess",
    "tokenize",
    "EmbeddingTable",
    "load_pretrained",
    "random_table",
    "TextGSLClassifier",
    "TextGraph",
    "TypedEdge",
    "assemble_graph",
    "load_graphs",
    "read_conllu",
    "save_graphs",
    "EdgeIndex",
    "ModelConfig",
    "forward",
    "init_params",
    "RunReport",
    "TrainConfig",
    "evaluate",
    "run_ablation",
    "run_ratio_sweep",
    "train",
    "__version__",
]
