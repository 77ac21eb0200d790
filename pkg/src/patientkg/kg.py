"""Patient-level knowledge graphs built from relation-extraction triples."""

import json
import statistics
from dataclasses import dataclass, field

from .errors import ParseError
from .ingest import Triple, _iter_json_lines, preprocess_text
from .tables import format_table
from .taxonomy import CANONICAL_ENTITY_TYPES, RelationFamily, normalize_entity_type


@dataclass(frozen=True)
class Node:
    node_id: int
    text: str
    entity_type: str

    @property
    def tokens(self):
        return self.text.split()


@dataclass(frozen=True)
class Edge:
    head: int
    tail: int
    relation: str
    family: RelationFamily


@dataclass(frozen=True)
class PatientGraph:
    doc_id: str
    nodes: tuple = ()
    edges: tuple = ()

    def __post_init__(self):
        n = len(self.nodes)
        for i, node in enumerate(self.nodes):
            if node.node_id != i:
                raise ValueError(f"node ids must be contiguous from 0, got {node.node_id} at {i}")
            if not node.text:
                raise ValueError(f"node {i} of {self.doc_id!r} has empty text")
        for e in self.edges:
            if not (0 <= e.head < n and 0 <= e.tail < n):
                raise ValueError(f"edge {e} of {self.doc_id!r} has an endpoint out of range")

    @property
    def num_nodes(self):
        return len(self.nodes)

    @property
    def num_edges(self):
        return len(self.edges)

    def to_triples(self):
        out = []
        for e in self.edges:
            h, t = self.nodes[e.head], self.nodes[e.tail]
            out.append(Triple(self.doc_id, h.text, h.entity_type, e.relation, e.family, t.text, t.entity_type))
        return out

    def to_record(self):
        return {
            "doc_id": self.doc_id,
            "nodes": [{"text": n.text, "type": n.entity_type} for n in self.nodes],
            "edges": [
                {"head": e.head, "tail": e.tail, "relation": e.relation, "family": e.family.value}
                for e in self.edges
            ],
        }

    @classmethod
    def from_record(cls, record):
        nodes = tuple(
            Node(i, str(n["text"]), normalize_entity_type(n["type"])) for i, n in enumerate(record["nodes"])
        )
        edges = tuple(
            Edge(int(e["head"]), int(e["tail"]), str(e["relation"]), RelationFamily.parse(e["family"]))
            for e in record["edges"]
        )
        return cls(str(record["doc_id"]), nodes, edges)


@dataclass(frozen=True)
class AblationFilter:
    removed_families: frozenset = frozenset()
    removed_entity_types: frozenset = frozenset()

    def __post_init__(self):
        object.__setattr__(
            self, "removed_families", frozenset(RelationFamily.parse(f) for f in self.removed_families)
        )
        object.__setattr__(
            self, "removed_entity_types", frozenset(normalize_entity_type(t) for t in self.removed_entity_types)
        )

    @property
    def is_empty(self):
        return not self.removed_families and not self.removed_entity_types

    def keeps(self, triple):
        return (
            triple.relation_family not in self.removed_families
            and triple.head_type not in self.removed_entity_types
            and triple.tail_type not in self.removed_entity_types
        )

    def describe(self):
        """Row label in the style of the ablation tables (long family names, entity tags)."""
        parts = [f.long_name for f in sorted(self.removed_families, key=lambda f: f.value)]
        parts += sorted(self.removed_entity_types)
        return ", ".join(parts) if parts else "Full"

    @classmethod
    def parse(cls, specs):
        """Build a filter from CLI strings like ``remove-family=PR`` or ``remove-entity=problem``."""
        families, entity_types = set(), set()
        for spec in specs:
            key, sep, value = spec.partition("=")
            if not sep or not value:
                raise ValueError(f"bad filter {spec!r}; expected remove-family=X or remove-entity=Y")
            if key == "remove-family":
                families.add(RelationFamily.parse(value))
            elif key == "remove-entity":
                entity_types.add(normalize_entity_type(value))
            else:
                raise ValueError(f"unknown filter key {key!r}")
        return cls(frozenset(families), frozenset(entity_types))


def normalize_entity_text(text):
    """Node identity text: the entity string run through document preprocessing.

    Entity strings with no alphabetic token (e.g. a bare "40") fall back to their
    lowercased, whitespace-collapsed form so the node is not lost.
    """
    tokens = preprocess_text(text)
    if tokens:
        return " ".join(tokens)
    return " ".join(text.lower().split())


def build_graph(doc_id, triples):
    """Deduplicate triple endpoints into nodes and triples into edges.

    Nodes are keyed on (normalized text, entity type) and numbered in order of
    first appearance. Repeated (head, tail, relation) edges are collapsed, and
    a triple whose two endpoints merge into the same node is skipped, so
    every node has at least one edge.
    """
    index = {}
    nodes = []
    edges = []
    seen_edges = set()

    def node_for(key):
        if key not in index:
            index[key] = len(nodes)
            nodes.append(Node(len(nodes), key[0], key[1]))
        return index[key]

    for t in triples:
        if t.doc_id != doc_id:
            raise ValueError(f"triple for {t.doc_id!r} passed to build_graph({doc_id!r})")
        head_key = (normalize_entity_text(t.head_text), t.head_type)
        tail_key = (normalize_entity_text(t.tail_text), t.tail_type)
        if head_key == tail_key:
            continue
        head = node_for(head_key)
        tail = node_for(tail_key)
        key = (head, tail, t.relation)
        if key in seen_edges:
            continue
        seen_edges.add(key)
        edges.append(Edge(head, tail, t.relation, t.relation_family))
    return PatientGraph(doc_id, tuple(nodes), tuple(edges))


def filter_triples(triples, flt):
    return [t for t in triples if flt.keeps(t)]


def filter_graph(graph_or_triples, flt):
    """Apply an ablation filter to a graph or to a list of triples.

    Graphs are rebuilt from their surviving edges, so nodes left without
    any edge disappear.
    """
    if isinstance(graph_or_triples, PatientGraph):
        if flt.is_empty:
            return graph_or_triples
        kept = filter_triples(graph_or_triples.to_triples(), flt)
        return build_graph(graph_or_triples.doc_id, kept)
    return filter_triples(graph_or_triples, flt)


def relation_token(relation):
    return relation.strip().lower().replace(" ", "-")


def serialize_graph(graph):
    """Flatten a graph to tokens: head tokens, relation token, tail tokens, per edge."""
    out = []
    for e in graph.edges:
        out.extend(graph.nodes[e.head].tokens)
        out.append(relation_token(e.relation))
        out.extend(graph.nodes[e.tail].tokens)
    return out


def build_graphs(corpus, flt=None):
    graphs = {}
    for doc in corpus.documents:
        triples = corpus.triples.get(doc.doc_id, [])
        if flt is not None:
            triples = filter_triples(triples, flt)
        graphs[doc.doc_id] = build_graph(doc.doc_id, triples)
    return graphs


def read_graph_archive(path):
    graphs = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, record in _iter_json_lines(fh, path):
            try:
                graph = PatientGraph.from_record(record)
            except (KeyError, TypeError, ValueError) as exc:
                raise ParseError(f"bad graph record ({exc})", path=path, line=lineno) from None
            if graph.doc_id in graphs:
                raise ParseError(f"duplicate graph for {graph.doc_id!r}", path=path, line=lineno)
            graphs[graph.doc_id] = graph
    return graphs


def write_graph_archive(path, graphs):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for graph in graphs.values():
            fh.write(json.dumps(graph.to_record(), ensure_ascii=False, sort_keys=True))
            fh.write("\n")


# -- statistics -------------------------------------------------------------


@dataclass
class SplitStats:
    documents: int
    avg_tokens: float
    avg_nodes: float
    avg_tokens_in_nodes: float
    min_tokens: int
    max_tokens: int
    min_nodes: int
    max_nodes: int


@dataclass
class GraphStatsReport:
    splits: dict = field(default_factory=dict)

    def to_dict(self):
        return {name: vars(s).copy() for name, s in self.splits.items()}

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_table(self):
        header = ["Split", "Avg |T|", "Avg |N|", "Avg T in N", "Min/Max T", "Min/Max N"]
        rows = [
            [
                name,
                f"{s.avg_tokens:.1f}",
                f"{s.avg_nodes:.1f}",
                f"{s.avg_tokens_in_nodes:.1f}",
                f"{s.min_tokens}/{s.max_tokens}",
                f"{s.min_nodes}/{s.max_nodes}",
            ]
            for name, s in self.splits.items()
        ]
        return format_table(header, rows)


def _split_stats(token_counts, node_counts, node_token_counts):
    return SplitStats(
        documents=len(token_counts),
        avg_tokens=statistics.fmean(token_counts),
        avg_nodes=statistics.fmean(node_counts),
        avg_tokens_in_nodes=statistics.fmean(node_token_counts),
        min_tokens=min(token_counts),
        max_tokens=max(token_counts),
        min_nodes=min(node_counts),
        max_nodes=max(node_counts),
    )


def graph_stats(corpus, graphs):
    """Per-split token and node statistics; documents without a split go under "all"."""
    groups = {}
    for doc in corpus.documents:
        graph = graphs[doc.doc_id]
        entry = groups.setdefault(doc.split or "all", ([], [], []))
        entry[0].append(len(corpus.token_sequences[doc.doc_id]))
        entry[1].append(graph.num_nodes)
        entry[2].append(sum(len(n.tokens) for n in graph.nodes))
    order = ["train", "dev", "test", "all"]
    return GraphStatsReport(
        {name: _split_stats(*groups[name]) for name in sorted(groups, key=order.index)}
    )


# -- DOT export -------------------------------------------------------------

_PALETTE = (
    "#e6194b", "#3cb44b", "#4363d8", "#f58231", "#911eb4", "#42d4f4", "#f032e6",
    "#bfef45", "#fabed4", "#469990", "#dcbeff", "#9a6324", "#fffac8", "#800000",
)
_EXTRA_PALETTE = ("#aaffc3", "#808000", "#ffd8b1", "#000075", "#a9a9a9")


def entity_color(entity_type):
    if entity_type in CANONICAL_ENTITY_TYPES:
        return _PALETTE[CANONICAL_ENTITY_TYPES.index(entity_type)]
    # extension tags: stable but not collision-free
    return _EXTRA_PALETTE[sum(entity_type.encode("utf-8")) % len(_EXTRA_PALETTE)]


def _quote(text):
    return '"' + text.replace("\\", "\\\\").replace('"', '\\"').replace("\n", "\\n") + '"'


def export_dot(graph):
    """Render a graph as a Graphviz digraph; node fill colour encodes entity type."""
    lines = ["digraph {"]
    if graph.nodes:
        lines.append("  node [shape=box style=filled fontname=Helvetica];")
    for node in graph.nodes:
        label = _quote(node.text)[:-1] + "\\n[" + node.entity_type + ']"'
        lines.append(
            f"  n{node.node_id} [label={label} "
            f"fillcolor={_quote(entity_color(node.entity_type))} class={_quote(node.entity_type)}];"
        )
    for e in graph.edges:
        lines.append(f"  n{e.head} -> n{e.tail} [label={_quote(e.relation)}];")
    lines.append("}")
    return "\n".join(lines) + "\n"
