"""Dual-branch multi-label coder: text segments and patient graph, each with
its own label-wise attention head, joined per label before a sigmoid scorer.

Shapes follow a rows-are-items convention: a hidden matrix ``H`` is
``items x dim`` (tokens or nodes), attention ``alpha`` is ``labels x items``
and label-specific representations ``Z = alpha @ H`` are ``labels x dim``.
"""

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ConfigError, ShapeError, ValidationError
from .ingest import segment_document
from .numerics import Tape

UNK = "<unk>"
MAX_NODES = 1024


def parse_layer_plan(plan):
    """``"384-384"`` -> ``(384, 384)``. Integers and sequences pass through."""
    if isinstance(plan, int):
        sizes = (plan,)
    elif isinstance(plan, str):
        try:
            sizes = tuple(int(p) for p in plan.replace(" ", "").split("-")) if plan.strip() else ()
        except ValueError:
            raise ConfigError(f"bad DGCNN layer plan {plan!r}") from None
    else:
        sizes = tuple(int(p) for p in plan)
    if not sizes or any(s < 1 for s in sizes):
        raise ConfigError(f"DGCNN layer plan must be non-empty positive sizes, got {plan!r}")
    return sizes


@dataclass(frozen=True)
class EncoderConfig:
    label_count: int
    segment_length: int = 512
    max_len: int = 5120
    text_hidden_dim: int = 32
    node_feature_dim: int | None = None
    dgcnn_layer_sizes: tuple = (768,)
    attention_dim: int = 32
    self_loops: bool = True
    use_graph: bool = True

    def __post_init__(self):
        object.__setattr__(self, "dgcnn_layer_sizes", parse_layer_plan(self.dgcnn_layer_sizes))
        if self.node_feature_dim is None:
            object.__setattr__(self, "node_feature_dim", self.text_hidden_dim)
        for name in ("label_count", "segment_length", "max_len", "text_hidden_dim", "attention_dim"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.node_feature_dim != self.text_hidden_dim:
            # node features are pooled from the same token encoder as the text branch
            raise ConfigError(
                f"node_feature_dim ({self.node_feature_dim}) must equal text_hidden_dim ({self.text_hidden_dim})"
            )

    @property
    def graph_dim(self):
        return sum(self.dgcnn_layer_sizes)

    @property
    def joint_dim(self):
        return self.text_hidden_dim + self.graph_dim

    def to_dict(self):
        d = asdict(self)
        d["dgcnn_layer_sizes"] = list(self.dgcnn_layer_sizes)
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


class Vocabulary:
    """Token to row index; row 0 is reserved for unknown tokens."""

    def __init__(self, tokens=()):
        self.tokens = [UNK] + sorted(set(tokens) - {UNK})
        self.index = {t: i for i, t in enumerate(self.tokens)}

    def __len__(self):
        return len(self.tokens)

    def ids(self, tokens):
        return [self.index.get(t, 0) for t in tokens]

    @classmethod
    def from_list(cls, tokens):
        if not tokens or tokens[0] != UNK:
            raise ValidationError("vocabulary list must start with the unknown token")
        vocab = cls.__new__(cls)
        vocab.tokens = list(tokens)
        vocab.index = {t: i for i, t in enumerate(vocab.tokens)}
        return vocab


# -- parameters ----------------------------------------------------------------


def param_shapes(config, vocab_size=None):
    shapes = {}
    if vocab_size is not None:
        shapes["token_embedding"] = (vocab_size, config.text_hidden_dim)
    d_in = config.node_feature_dim
    for m, d_out in enumerate(config.dgcnn_layer_sizes):
        shapes[f"dgcnn_{m}"] = (d_in, d_out)
        d_in = d_out
    shapes["text_attn_proj"] = (config.attention_dim, config.text_hidden_dim)
    shapes["text_attn_query"] = (config.label_count, config.attention_dim)
    shapes["graph_attn_proj"] = (config.attention_dim, config.graph_dim)
    shapes["graph_attn_query"] = (config.label_count, config.attention_dim)
    shapes["label_embedding"] = (config.label_count, config.joint_dim)
    return shapes


def init_params(config, vocab_size, rng):
    """Glorot-uniform initialisation, drawn in a fixed name order from ``rng``."""
    params = {}
    for name, (fan_a, fan_b) in param_shapes(config, vocab_size).items():
        bound = np.sqrt(6.0 / (fan_a + fan_b))
        params[name] = rng.uniform(-bound, bound, size=(fan_a, fan_b))
    return params


def check_params(params, config, vocab_size=None):
    expected = param_shapes(config, vocab_size)
    for name, shape in expected.items():
        if name not in params:
            raise ShapeError(f"missing parameter {name!r}")
        if tuple(params[name].shape) != shape:
            raise ShapeError(f"parameter {name!r} has shape {params[name].shape}, expected {shape}")
        if not np.all(np.isfinite(params[name])):
            raise ValidationError(f"parameter {name!r} has non-finite entries")


# -- segment encoders ------------------------------------------------------------


class EmbeddingEncoder:
    """Trainable token-embedding table: one output row per token, no positional context."""

    trainable = True

    def __init__(self, vocab):
        self.vocab = vocab

    def prepare_tokens(self, tokens):
        return np.asarray(self.vocab.ids(tokens), dtype=np.int64)

    def encode(self, tape, leaves, prepared):
        return tape.gather_rows(leaves["token_embedding"], prepared)


class PrecomputedEncoder:
    """Fixed per-token vectors (e.g. exported from an external language model).

    Unknown tokens map to the zero vector.
    """

    trainable = False

    def __init__(self, vectors, dim=None):
        self.vectors = {t: np.asarray(v, dtype=np.float64) for t, v in vectors.items()}
        if dim is None:
            if not self.vectors:
                raise ValidationError("cannot infer dimension from an empty vector table")
            dim = next(iter(self.vectors.values())).shape[0]
        self.dim = dim
        for t, v in self.vectors.items():
            if v.shape != (dim,):
                raise ShapeError(f"vector for {t!r} has shape {v.shape}, expected ({dim},)")

    @classmethod
    def from_json_lines(cls, path):
        vectors = {}
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    rec = json.loads(line)
                    vectors[str(rec["token"])] = rec["vector"]
        return cls(vectors)

    def prepare_tokens(self, tokens):
        zero = np.zeros(self.dim)
        return np.stack([self.vectors.get(t, zero) for t in tokens]) if tokens else np.zeros((0, self.dim))

    def encode(self, tape, leaves, prepared):
        return tape.const(prepared)


# -- prepared inputs -------------------------------------------------------------------


@dataclass
class TextInput:
    segments: list
    prepared: list  # per-segment encoder payloads
    num_tokens: int


@dataclass
class GraphInput:
    num_nodes: int
    adjacency: np.ndarray  # row-normalised, n x n
    pool: np.ndarray  # n x (tokens over all nodes), rows average a node's tokens
    prepared: object  # encoder payload for the concatenated node tokens
    empty: bool


def normalized_adjacency(num_nodes, edges, self_loops=True):
    """Symmetrised adjacency, optionally with self-loops, divided by row degree."""
    a = np.zeros((num_nodes, num_nodes))
    for head, tail in edges:
        a[head, tail] = 1.0
        a[tail, head] = 1.0
    if self_loops:
        a += np.eye(num_nodes)
    deg = a.sum(axis=1)
    # only possible without self-loops: an isolated row stays zero
    inv = np.divide(1.0, deg, out=np.zeros_like(deg), where=deg > 0)
    return a * inv[:, None]


def prepare_text(tokens, config, encoder):
    segments = segment_document(tokens, config.segment_length, config.max_len)
    return TextInput(
        segments=segments,
        prepared=[encoder.prepare_tokens(list(s.tokens)) for s in segments],
        num_tokens=sum(len(s.tokens) for s in segments),
    )


def prepare_graph(graph, config, encoder):
    n = graph.num_nodes
    if n > MAX_NODES:
        raise ValidationError(f"graph {graph.doc_id!r} has {n} nodes; the limit is {MAX_NODES}")
    if n == 0:
        return GraphInput(1, normalized_adjacency(1, [], config.self_loops), None, None, True)
    node_tokens = [node.tokens or [node.text] for node in graph.nodes]
    total = sum(len(t) for t in node_tokens)
    pool = np.zeros((n, total))
    col = 0
    for i, toks in enumerate(node_tokens):
        pool[i, col : col + len(toks)] = 1.0 / len(toks)
        col += len(toks)
    flat = [t for toks in node_tokens for t in toks]
    return GraphInput(
        num_nodes=n,
        adjacency=normalized_adjacency(n, [(e.head, e.tail) for e in graph.edges], config.self_loops),
        pool=pool,
        prepared=encoder.prepare_tokens(flat),
        empty=False,
    )


# -- building blocks (all operate on a Tape) ------------------------------------------------


def encode_text(tape, leaves, text, encoder, dim):
    """Concatenate per-segment encoder outputs into ``tokens x dim``.

    An empty document becomes a single zero row.
    """
    parts = [encoder.encode(tape, leaves, p) for s, p in zip(text.segments, text.prepared) if s.tokens]
    if not parts:
        return tape.const(np.zeros((1, dim)))
    return parts[0] if len(parts) == 1 else tape.concat(parts, axis=0)


def node_features(tape, leaves, graph_input, encoder, dim):
    if graph_input.empty:
        return tape.const(np.zeros((1, dim)))
    tokens = encoder.encode(tape, leaves, graph_input.prepared)
    return tape.matmul(tape.const(graph_input.pool), tokens)


def graph_conv_layer(tape, adjacency, h, weight):
    """``tanh(adjacency @ h @ weight)`` with a pre-normalised adjacency."""
    return tape.tanh(tape.matmul(tape.matmul(adjacency, h), weight))


def dgcnn_encode(tape, adjacency, x, weights):
    """Stack graph convolutions and concatenate every layer's output column-wise."""
    outputs = []
    h = x
    for w in weights:
        h = graph_conv_layer(tape, adjacency, h, w)
        outputs.append(h)
    return outputs[0] if len(outputs) == 1 else tape.concat(outputs, axis=1)


def label_attention(tape, h, query, proj):
    """Label-wise attention over the rows of ``h``; returns ``(alpha, Z)``."""
    hidden = tape.tanh(tape.matmul(h, tape.transpose(proj)))  # items x attn
    alpha = tape.row_softmax(tape.matmul(query, tape.transpose(hidden)))  # labels x items
    return alpha, tape.matmul(alpha, h)


def predict(tape, z, label_embedding):
    """Per-label sigmoid of the dot product between label row i and Z row i; ``labels x 1``."""
    return tape.sigmoid(tape.row_sum(tape.mul(label_embedding, z)))


def bce_loss(y, p, clamp=1e-12):
    """Mean binary cross-entropy (natural log) for plain arrays."""
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    p = np.asarray(p, dtype=np.float64).reshape(-1)
    if y.shape != p.shape:
        raise ShapeError(f"label vector has {y.size} entries, probabilities {p.size}")
    q = np.clip(p, clamp, 1.0 - clamp)
    return float(-np.mean(y * np.log(q) + (1.0 - y) * np.log(1.0 - q)))


@dataclass
class PatientRepresentation:
    text_hidden: np.ndarray
    graph_hidden: np.ndarray
    text_attention: np.ndarray
    graph_attention: np.ndarray
    text_z: np.ndarray
    graph_z: np.ndarray
    z: np.ndarray = field(repr=False)


class Classifier:
    """Configured model: parameters, vocabulary and segment encoder together."""

    def __init__(self, config, params, vocab=None, encoder=None):
        self.config = config
        self.vocab = vocab
        self.encoder = encoder if encoder is not None else EmbeddingEncoder(vocab)
        self.params = params
        if not self.encoder.trainable and self.encoder.dim != config.text_hidden_dim:
            raise ConfigError(
                f"precomputed vectors have dimension {self.encoder.dim}, config expects {config.text_hidden_dim}"
            )
        check_params(params, config, len(vocab) if self.encoder.trainable else None)

    @classmethod
    def initialize(cls, config, vocab, rng, encoder=None):
        encoder = encoder if encoder is not None else EmbeddingEncoder(vocab)
        params = init_params(config, len(vocab), rng)
        if not encoder.trainable:
            del params["token_embedding"]
        return cls(config, params, vocab, encoder)

    def prepare(self, tokens, graph):
        return prepare_text(tokens, self.config, self.encoder), prepare_graph(graph, self.config, self.encoder)

    def _build(self, tape, leaves, example):
        text, graph = example
        cfg = self.config
        h_t = encode_text(tape, leaves, text, self.encoder, cfg.text_hidden_dim)
        alpha_t, z_t = label_attention(tape, h_t, leaves["text_attn_query"], leaves["text_attn_proj"])

        x = node_features(tape, leaves, graph, self.encoder, cfg.node_feature_dim)
        weights = [leaves[f"dgcnn_{m}"] for m in range(len(cfg.dgcnn_layer_sizes))]
        h_g = dgcnn_encode(tape, tape.const(graph.adjacency), x, weights)
        alpha_g, z_g = label_attention(tape, h_g, leaves["graph_attn_query"], leaves["graph_attn_proj"])
        if not cfg.use_graph:
            z_g = tape.const(np.zeros((cfg.label_count, cfg.graph_dim)))

        z = tape.concat([z_t, z_g], axis=1)
        p = predict(tape, z, leaves["label_embedding"])
        rep = (h_t, h_g, alpha_t, alpha_g, z_t, z_g, z)
        return p, rep

    def forward(self, example):
        """Label probabilities (1-D) and the intermediate representation."""
        tape = Tape()
        leaves = {k: tape.const(v, name=k) for k, v in self.params.items()}
        p, rep = self._build(tape, leaves, example)
        return p.value[:, 0].copy(), PatientRepresentation(*(r.value for r in rep))

    def loss_fn(self, example, y):
        """Closure usable by :func:`numerics.grad_check`."""
        y = np.asarray(y, dtype=np.float64).reshape(-1, 1)
        if y.shape[0] != self.config.label_count:
            raise ShapeError(f"label vector has {y.shape[0]} entries, model has {self.config.label_count} labels")

        def fn(tape, leaves):
            p, _ = self._build(tape, leaves, example)
            return tape.bce(p, tape.const(y))

        return fn

    def loss_and_grads(self, example, y):
        tape = Tape()
        leaves = {k: tape.param(v, name=k) for k, v in self.params.items()}
        loss = self.loss_fn(example, y)(tape, leaves)
        grads = tape.backward(loss)
        return float(loss.value[0, 0]), grads

    def predict_proba(self, example):
        return self.forward(example)[0]

