"""The textgsl network.

Two branches read each document: a transformer encoder over the token
sequence, and a gated message-passing network over the multi-relation word
graph with adaptive edge weights.  Token-aligned branch outputs are fused by
a bidirectional GRU, pooled through an elementwise soft-attention readout,
and classified with a softmax head.

Edge direction convention: a TypedEdge(src, dst) means src receives from
dst, so its weight is computed from concat(X_src, X_dst) and its message is
summed into row src.  Graphs store both directions of every undirected edge,
so each endpoint receives once per direction.

Parameter names follow a stable `branch.layer.name` scheme (seq.*, str.*,
fuse.*, read.*, out.*); checkpoints key payloads by these names.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .corpus import ConfigError
from .graphs import REL_COOC, REL_SEM, REL_SYN, RELATIONS, TextGraph

MODE_FULL = "full"
MODE_NO_SEQ = "no-lsl"
MODE_NO_STRUCT = "no-dsl"
MODES = (MODE_FULL, MODE_NO_SEQ, MODE_NO_STRUCT)

_MESSAGE_ACTIVATIONS = {"relu": ad.relu, "tanh": ad.tanh, "sigmoid": ad.sigmoid}

_GAMMA_NAMES = {REL_COOC: "str.gamma.co", REL_SYN: "str.gamma.syn", REL_SEM: "str.gamma.sem"}


@dataclass(frozen=True)
class ModelConfig:
    """Shapes, depths, and rates for one model instance."""

    num_classes: int
    embedding_dim: int = 300
    hidden_dim: int = 96
    num_heads: int = 1
    encoder_layers: int = 1
    ff_dim: int | None = None
    mpnn_steps: int = 2
    message_activation: str = "relu"
    dropout_seq: float = 0.65
    dropout_str: float = 0.5
    mode: str = MODE_FULL

    def __post_init__(self):
        if self.num_classes < 2:
            raise ConfigError(f"num_classes must be >= 2, got {self.num_classes}")
        if self.hidden_dim < 2 or self.hidden_dim % 2 != 0:
            raise ConfigError(f"hidden_dim must be even and positive, got {self.hidden_dim}")
        if self.num_heads < 1 or self.hidden_dim % self.num_heads != 0:
            raise ConfigError(
                f"num_heads must divide hidden_dim, got {self.num_heads} for {self.hidden_dim}"
            )
        if self.encoder_layers < 1:
            raise ConfigError(f"encoder_layers must be >= 1, got {self.encoder_layers}")
        if self.mpnn_steps < 0:
            raise ConfigError(f"mpnn_steps must be >= 0, got {self.mpnn_steps}")
        if self.message_activation not in _MESSAGE_ACTIVATIONS:
            raise ConfigError(f"unknown message activation {self.message_activation!r}")
        for name in ("dropout_seq", "dropout_str"):
            rate = getattr(self, name)
            if not 0.0 <= rate < 1.0:
                raise ConfigError(f"{name} must be in [0, 1), got {rate}")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")

    @property
    def feed_forward_dim(self) -> int:
        return self.ff_dim if self.ff_dim is not None else 2 * self.hidden_dim

    @property
    def head_dim(self) -> int:
        return self.hidden_dim // self.num_heads

    @property
    def fusion_input_dim(self) -> int:
        return 2 * self.hidden_dim if self.mode == MODE_FULL else self.hidden_dim

    def to_dict(self) -> dict:
        return {
            "num_classes": self.num_classes,
            "embedding_dim": self.embedding_dim,
            "hidden_dim": self.hidden_dim,
            "num_heads": self.num_heads,
            "encoder_layers": self.encoder_layers,
            "ff_dim": self.ff_dim,
            "mpnn_steps": self.mpnn_steps,
            "message_activation": self.message_activation,
            "dropout_seq": self.dropout_seq,
            "dropout_str": self.dropout_str,
            "mode": self.mode,
        }

    @classmethod
    def from_dict(cls, record: dict) -> "ModelConfig":
        return cls(**record)


@dataclass(frozen=True)
class EdgeIndex:
    """Index arrays for one graph, ready for gather/scatter message passing.

    Unique directed (src, dst) pairs get one weight each; rel_pairs maps each
    relation to the pair rows its typed edges use.
    """

    num_nodes: int
    src: np.ndarray
    dst: np.ndarray
    rel_pairs: dict[str, np.ndarray]
    token_nodes: np.ndarray

    @classmethod
    def from_graph(cls, graph: TextGraph) -> "EdgeIndex":
        pairs = sorted({(e.src, e.dst) for e in graph.edges})
        pair_row = {p: i for i, p in enumerate(pairs)}
        rel_pairs = {}
        for rel in RELATIONS:
            rows = sorted(pair_row[(e.src, e.dst)] for e in graph.edges if e.rel == rel)
            rel_pairs[rel] = np.asarray(rows, dtype=np.intp)
        src = np.asarray([p[0] for p in pairs], dtype=np.intp)
        dst = np.asarray([p[1] for p in pairs], dtype=np.intp)
        token_nodes = np.asarray(graph.token_sequence(), dtype=np.intp)
        return cls(
            num_nodes=graph.num_nodes(),
            src=src,
            dst=dst,
            rel_pairs=rel_pairs,
            token_nodes=token_nodes,
        )

    @property
    def num_pairs(self) -> int:
        return int(self.src.size)


@dataclass
class ForwardTrace:
    """Intermediate activations of one document's forward pass."""

    x_seq: Tensor | None
    x_str: Tensor | None
    x_out: Tensor
    edge_weights_per_step: list[np.ndarray]
    attention: np.ndarray
    logits: Tensor
    probabilities: Tensor


# ---------------------------------------------------------------------------
# initialization


def _xavier(rng: np.random.Generator, fan_in: int, fan_out: int, shape=None) -> Tensor:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return ad.parameter(rng.uniform(-limit, limit, size=shape or (fan_in, fan_out)))


def _zeros(*shape) -> Tensor:
    return ad.parameter(np.zeros(shape))


def _gru_params(rng, prefix: str, input_dim: int, hidden: int) -> dict[str, Tensor]:
    params = {}
    for gate in ("z", "r", "h"):
        params[f"{prefix}.W{gate}"] = _xavier(rng, input_dim, hidden)
        params[f"{prefix}.U{gate}"] = _xavier(rng, hidden, hidden)
        params[f"{prefix}.b{gate}"] = _zeros(hidden)
    return params


def init_params(config: ModelConfig, rng: np.random.Generator) -> dict[str, Tensor]:
    """Fresh parameter set: Xavier-uniform matrices, zero biases and alpha,
    layer-norm gain 1, beta and every gamma starting at 1."""
    d, m, f, c = config.embedding_dim, config.hidden_dim, config.feed_forward_dim, config.num_classes
    params: dict[str, Tensor] = {}

    params["seq.proj.W"] = _xavier(rng, d, m)
    params["seq.proj.b"] = _zeros(m)
    for layer in range(config.encoder_layers):
        p = f"seq.layer{layer}"
        for name in ("Wq", "Wk", "Wv"):
            params[f"{p}.attn.{name}"] = _xavier(rng, m, m)
        params[f"{p}.ln1.gain"] = ad.parameter(np.ones(m))
        params[f"{p}.ln1.shift"] = _zeros(m)
        params[f"{p}.ff.W1"] = _xavier(rng, m, f)
        params[f"{p}.ff.b1"] = _zeros(f)
        params[f"{p}.ff.W2"] = _xavier(rng, f, m)
        params[f"{p}.ff.b2"] = _zeros(m)
        params[f"{p}.ln2.gain"] = ad.parameter(np.ones(m))
        params[f"{p}.ln2.shift"] = _zeros(m)
    params["seq.out.W"] = _xavier(rng, m, m)
    params["seq.out.b"] = _zeros(m)

    params["str.proj.W"] = _xavier(rng, d, m)
    params["str.proj.b"] = _zeros(m)
    params["str.alpha"] = _zeros(2 * m, 1)
    params["str.beta"] = ad.parameter(np.asarray(1.0))
    for rel in RELATIONS:
        params[_GAMMA_NAMES[rel]] = ad.parameter(np.asarray(1.0))
    params.update(_gru_params(rng, "str.gru", m, m))

    params.update(_gru_params(rng, "fuse.fwd", config.fusion_input_dim, m))
    params.update(_gru_params(rng, "fuse.bwd", config.fusion_input_dim, m))
    params["fuse.out.W"] = _xavier(rng, 2 * m, m)
    params["fuse.out.b"] = _zeros(m)

    for head in ("read.f1", "read.f2"):
        params[f"{head}.W1"] = _xavier(rng, m, m)
        params[f"{head}.b1"] = _zeros(m)
        params[f"{head}.W2"] = _xavier(rng, m, m)
        params[f"{head}.b2"] = _zeros(m)

    params["out.W"] = _xavier(rng, m, c)
    params["out.b"] = _zeros(c)
    return params


# ---------------------------------------------------------------------------
# sequence branch


def positional_encoding(n_positions: int, width: int) -> np.ndarray:
    """Sinusoidal position table: sin at even columns, cos at odd, sharing
    the wavelength 10000^(2i/width) of the even column to their left."""
    if width % 2 != 0:
        raise ConfigError(f"positional encoding width must be even, got {width}")
    pe = np.zeros((n_positions, width))
    positions = np.arange(n_positions)[:, None]
    rates = 1.0 / np.power(10000.0, 2.0 * np.arange(width // 2) / width)
    angles = positions * rates[None, :]
    pe[:, 0::2] = np.sin(angles)
    pe[:, 1::2] = np.cos(angles)
    return pe


def _linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    return x @ w + b


def transformer_encode(
    token_features: Tensor,
    params: dict[str, Tensor],
    config: ModelConfig,
    rng: np.random.Generator | None = None,
    train: bool = False,
    add_positions: bool = True,
) -> Tensor:
    """Token features (n, D) -> contextual token states (n, M)."""
    n_tok = token_features.shape[0]
    x = _linear(token_features, params["seq.proj.W"], params["seq.proj.b"])
    if add_positions:
        x = x + ad.constant(positional_encoding(n_tok, config.hidden_dim))
    dk = config.head_dim
    inv_sqrt_dk = 1.0 / np.sqrt(dk)
    for layer in range(config.encoder_layers):
        p = f"seq.layer{layer}"
        q = x @ params[f"{p}.attn.Wq"]
        k = x @ params[f"{p}.attn.Wk"]
        v = x @ params[f"{p}.attn.Wv"]
        heads = []
        for h in range(config.num_heads):
            lo, hi = h * dk, (h + 1) * dk
            qh, kh, vh = ad.slice_cols(q, lo, hi), ad.slice_cols(k, lo, hi), ad.slice_cols(v, lo, hi)
            scores = (qh @ ad.transpose(kh)) * inv_sqrt_dk
            heads.append(ad.row_softmax(scores) @ vh)
        z = heads[0] if len(heads) == 1 else ad.concat(heads, axis=1)
        z = ad.dropout(z, config.dropout_seq, rng, train)
        h1 = ad.layer_norm(x + z, params[f"{p}.ln1.gain"], params[f"{p}.ln1.shift"])
        ff = _linear(ad.relu(_linear(h1, params[f"{p}.ff.W1"], params[f"{p}.ff.b1"])),
                     params[f"{p}.ff.W2"], params[f"{p}.ff.b2"])
        ff = ad.dropout(ff, config.dropout_seq, rng, train)
        x = ad.layer_norm(h1 + ff, params[f"{p}.ln2.gain"], params[f"{p}.ln2.shift"])
    return _linear(x, params["seq.out.W"], params["seq.out.b"])


# ---------------------------------------------------------------------------
# structural branch


def edge_weights(x: Tensor, edge_index: EdgeIndex, alpha: Tensor, beta: Tensor) -> Tensor:
    """Per-pair weights E = exp(alpha . concat(X_src, X_dst) - beta * ||X_src - X_dst||^2).

    One row per unique directed pair, in edge_index order; always positive.
    """
    x_src = ad.gather_rows(x, edge_index.src)
    x_dst = ad.gather_rows(x, edge_index.dst)
    s = ad.concat([x_src, x_dst], axis=1) @ alpha
    d = ad.row_sqdist(x_src, x_dst)
    return ad.exp(s - ad.scale(d, beta))


def mpnn_step(
    x: Tensor,
    edge_index: EdgeIndex,
    e: Tensor,
    params: dict[str, Tensor],
    config: ModelConfig,
    rng: np.random.Generator | None = None,
    train: bool = False,
) -> Tensor:
    """One gated update: aggregate weighted typed-neighbor messages, then GRU."""
    n = edge_index.num_nodes
    activation = _MESSAGE_ACTIVATIONS[config.message_activation]
    a: Tensor | None = None
    for rel in RELATIONS:
        rows = edge_index.rel_pairs[rel]
        if rows.size == 0:
            continue
        e_rel = ad.gather_rows(e, rows)
        x_neighbors = ad.gather_rows(x, edge_index.dst[rows])
        messages = ad.scale(e_rel * x_neighbors, params[_GAMMA_NAMES[rel]])
        summed = ad.scatter_sum(messages, edge_index.src[rows], n)
        a = summed if a is None else a + summed
    if a is None:
        a = ad.constant(np.zeros((n, config.hidden_dim)))
    a = activation(a)
    a = ad.dropout(a, config.dropout_str, rng, train)

    z = ad.sigmoid(a @ params["str.gru.Wz"] + x @ params["str.gru.Uz"] + params["str.gru.bz"])
    r = ad.sigmoid(a @ params["str.gru.Wr"] + x @ params["str.gru.Ur"] + params["str.gru.br"])
    x_tilde = ad.tanh(a @ params["str.gru.Wh"] + (r * x) @ params["str.gru.Uh"] + params["str.gru.bh"])
    return (1.0 - z) * x + z * x_tilde


def structural_branch(
    node_features: Tensor,
    edge_index: EdgeIndex,
    params: dict[str, Tensor],
    config: ModelConfig,
    rng: np.random.Generator | None = None,
    train: bool = False,
) -> tuple[Tensor, list[np.ndarray]]:
    """Node features (n, D) -> node states (n, M) after T gated message rounds.

    Edge weights are recomputed from the current states before every round;
    the returned list holds each round's weights for inspection.
    """
    x = _linear(node_features, params["str.proj.W"], params["str.proj.b"])
    weights_per_step: list[np.ndarray] = []
    for _ in range(config.mpnn_steps):
        e = edge_weights(x, edge_index, params["str.alpha"], params["str.beta"])
        weights_per_step.append(e.values.copy())
        x = mpnn_step(x, edge_index, e, params, config, rng=rng, train=train)
    return x, weights_per_step


def scatter_to_tokens(x_nodes: Tensor, token_nodes: np.ndarray, n_tok: int) -> Tensor:
    """Copy each word's node state to all its token positions."""
    if token_nodes.size != n_tok:
        raise ValueError(f"node positions cover {token_nodes.size} tokens, expected {n_tok}")
    return ad.gather_rows(x_nodes, token_nodes)


# ---------------------------------------------------------------------------
# fusion, readout, classifier


def _gru_sequence(x: Tensor, params: dict[str, Tensor], prefix: str, hidden: int, reverse: bool) -> list[Tensor]:
    """Single-direction GRU over the rows of x; returns per-step states in input order."""
    wz, uz, bz = params[f"{prefix}.Wz"], params[f"{prefix}.Uz"], params[f"{prefix}.bz"]
    wr, ur, br = params[f"{prefix}.Wr"], params[f"{prefix}.Ur"], params[f"{prefix}.br"]
    wh, uh, bh = params[f"{prefix}.Wh"], params[f"{prefix}.Uh"], params[f"{prefix}.bh"]
    n = x.shape[0]
    order = range(n - 1, -1, -1) if reverse else range(n)
    h = ad.constant(np.zeros((1, hidden)))
    states: list[Tensor] = []
    for t in order:
        x_t = ad.gather_rows(x, np.asarray([t], dtype=np.intp))
        z = ad.sigmoid(x_t @ wz + h @ uz + bz)
        r = ad.sigmoid(x_t @ wr + h @ ur + br)
        h_tilde = ad.tanh(x_t @ wh + (r * h) @ uh + bh)
        h = (1.0 - z) * h + z * h_tilde
        states.append(h)
    if reverse:
        states.reverse()
    return states


def fuse(x_in: Tensor, params: dict[str, Tensor], config: ModelConfig) -> Tensor:
    """Bidirectional GRU over token order; concat directions, project to M."""
    m = config.hidden_dim
    forward_states = _gru_sequence(x_in, params, "fuse.fwd", m, reverse=False)
    backward_states = _gru_sequence(x_in, params, "fuse.bwd", m, reverse=True)
    h_fwd = forward_states[0] if len(forward_states) == 1 else ad.concat(forward_states, axis=0)
    h_bwd = backward_states[0] if len(backward_states) == 1 else ad.concat(backward_states, axis=0)
    both = ad.concat([h_fwd, h_bwd], axis=1)
    return _linear(both, params["fuse.out.W"], params["fuse.out.b"])


def readout(x_out: Tensor, params: dict[str, Tensor]) -> tuple[Tensor, np.ndarray]:
    """Elementwise soft attention over token states, then max+mean pooling.

    Returns the (1, M) graph vector and the attention weights for inspection.
    """
    gate_scores = _linear(ad.relu(_linear(x_out, params["read.f1.W1"], params["read.f1.b1"])),
                          params["read.f1.W2"], params["read.f1.b2"])
    attn = ad.sigmoid(gate_scores)
    value = _linear(ad.relu(_linear(x_out, params["read.f2.W1"], params["read.f2.b1"])),
                    params["read.f2.W2"], params["read.f2.b2"])
    x_v = attn * ad.tanh(value)
    pooled = ad.reduce_max(x_v) + ad.reduce_mean(x_v)
    return ad.reshape(pooled, (1, pooled.shape[0])), attn.values.copy()


def classify(x_g: Tensor, params: dict[str, Tensor]) -> tuple[Tensor, Tensor]:
    """Graph vector (1, M) -> (logits, softmax probabilities), each (1, C)."""
    logits = _linear(x_g, params["out.W"], params["out.b"])
    return logits, ad.row_softmax(logits)


def cross_entropy(probabilities: Tensor, label_index: int) -> Tensor:
    """Negative log-likelihood of the true class, log clamped at 1e-12."""
    c = probabilities.shape[-1]
    if not 0 <= label_index < c:
        raise ValueError(f"label index {label_index} out of range for {c} classes")
    one_hot = np.zeros((1, c))
    one_hot[0, label_index] = 1.0
    return ad.neg(ad.reduce_sum(ad.constant(one_hot) * ad.log(probabilities)))


# ---------------------------------------------------------------------------
# whole-model forward


def forward(
    token_features: Tensor,
    node_features: Tensor,
    edge_index: EdgeIndex,
    params: dict[str, Tensor],
    config: ModelConfig,
    rng: np.random.Generator | None = None,
    train: bool = False,
) -> ForwardTrace:
    """Run one document through the branches selected by config.mode."""
    n_tok = token_features.shape[0]
    x_seq = x_str = None
    weights_per_step: list[np.ndarray] = []
    if config.mode != MODE_NO_SEQ:
        x_seq = transformer_encode(token_features, params, config, rng=rng, train=train)
    if config.mode != MODE_NO_STRUCT:
        x_nodes, weights_per_step = structural_branch(
            node_features, edge_index, params, config, rng=rng, train=train
        )
        x_str = scatter_to_tokens(x_nodes, edge_index.token_nodes, n_tok)

    if config.mode == MODE_FULL:
        fusion_input = ad.concat([x_seq, x_str], axis=1)
    elif config.mode == MODE_NO_SEQ:
        fusion_input = x_str
    else:
        fusion_input = x_seq

    x_out = fuse(fusion_input, params, config)
    x_g, attention = readout(x_out, params)
    logits, probabilities = classify(x_g, params)
    return ForwardTrace(
        x_seq=x_seq,
        x_str=x_str,
        x_out=x_out,
        edge_weights_per_step=weights_per_step,
        attention=attention,
        logits=logits,
        probabilities=probabilities,
    )


def graph_features(graph: TextGraph, table) -> tuple[Tensor, Tensor]:
    """Static embedding matrices for a graph: (token features, node features)."""
    node_words = list(graph.nodes)
    token_words = [node_words[i] for i in graph.token_sequence()]
    return (
        ad.constant(table.features_for(token_words)),
        ad.constant(table.features_for(node_words)),
    )
