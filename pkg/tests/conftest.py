import json

import numpy as np
import pytest

from patientkg.ingest import Triple
from patientkg.taxonomy import RelationFamily

DOCS = [
    {"doc_id": "docA", "text": "Patient on Lisinopril 40mg QD for hypertension ###"},
    {"doc_id": "docB", "text": "Chest pain with left chest tenderness ; troponin test ordered"},
    {"doc_id": "docC", "text": "No acute findings"},
]
LABELS = [
    {"doc_id": "docA", "codes": ["401.9"]},
    {"doc_id": "docB", "codes": ["410.71", "401.9"]},
    {"doc_id": "docC", "codes": ["V70.0", "250.00"]},
]
SPLITS = [
    {"doc_id": "docA", "split": "train"},
    {"doc_id": "docB", "split": "dev"},
    {"doc_id": "docC", "split": "test"},
]


def _t(doc, head, htype, rel, fam, tail, ttype):
    return {
        "doc_id": doc,
        "head": head,
        "head_type": htype,
        "relation": rel,
        "relation_family": fam,
        "tail": tail,
        "tail_type": ttype,
    }


TRIPLES = [
    _t("docA", "lisinopril", "drug", "DRUG-STRENGTH", "PR", "40mg", "strength"),
    _t("docA", "Lisinopril", "drug", "DRUG-FREQUENCY", "PR", "QD", "frequency"),
    _t("docA", "lisinopril", "treatment", "TrAP", "CR", "hypertension", "problem"),
    _t("docB", "troponin", "test", "TeRP", "CR", "chest pain", "problem"),
    _t("docB", "left", "direction", "O", "BD", "chest", "external_body_part_or_region"),
    _t("docB", "left", "direction", "1", "BD", "chest", "external_body_part_or_region"),
]


def write_jsonl(path, records):
    path.write_text("".join(json.dumps(r) + "\n" for r in records), encoding="utf-8")
    return path


@pytest.fixture
def corpus_files(tmp_path):
    return {
        "docs": write_jsonl(tmp_path / "docs.jsonl", DOCS),
        "labels": write_jsonl(tmp_path / "labels.jsonl", LABELS),
        "splits": write_jsonl(tmp_path / "splits.jsonl", SPLITS),
        "triples": write_jsonl(tmp_path / "triples.jsonl", TRIPLES),
    }


@pytest.fixture
def lisinopril_triple():
    return Triple("docA", "lisinopril", "drug", "DRUG-STRENGTH", RelationFamily.PR, "40mg", "strength")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# -- model fixtures ----------------------------------------------------------

from patientkg.kg import Edge, Node, PatientGraph  # noqa: E402
from patientkg.model import Classifier, EncoderConfig, Vocabulary  # noqa: E402

# every DGCNN layer plan listed in the two configuration tables
LAYER_PLANS = [
    "768", "256-512", "384-384", "128-256-384", "256-256-256", "128-128-256-256", "192-192-192-192",
    "384", "384-384-384", "384-384-384-384", "128", "128-256", "128-256-384-512",
]

WORDS = ["pain", "fever", "aspirin", "chest", "left", "daily", "ecg", "stent", "cough", "rash", "mild", "oral"]
TYPES = ["problem", "drug", "test", "treatment", "direction"]
FAMILY_LIST = list(RelationFamily)


def random_graph(rng, n_nodes, n_edges=None, doc_id="d"):
    """Random typed graph with distinct node keys; texts have one or two words."""
    nodes, seen = [], set()
    while len(nodes) < n_nodes:
        k = int(rng.integers(1, 3))
        text = " ".join(rng.choice(WORDS, size=k))
        etype = str(rng.choice(TYPES))
        if (text, etype) in seen:
            continue
        seen.add((text, etype))
        nodes.append(Node(len(nodes), text, etype))
    if n_edges is None:
        n_edges = int(rng.integers(0, 2 * n_nodes + 1)) if n_nodes > 1 else 0
    edges = []
    for _ in range(n_edges):
        h, t = (int(x) for x in rng.choice(n_nodes, size=2, replace=False))
        edges.append(Edge(h, t, "REL", FAMILY_LIST[int(rng.integers(len(FAMILY_LIST)))]))
    return PatientGraph(doc_id, tuple(nodes), tuple(edges))


def relabel(graph, perm, edge_order=None):
    """New graph whose node i is old node ``perm[i]``; edges follow their endpoints."""
    inv = {int(old): new for new, old in enumerate(perm)}
    nodes = tuple(Node(i, graph.nodes[int(old)].text, graph.nodes[int(old)].entity_type) for i, old in enumerate(perm))
    edges = [Edge(inv[e.head], inv[e.tail], e.relation, e.family) for e in graph.edges]
    if edge_order is not None:
        edges = [edges[int(i)] for i in edge_order]
    return PatientGraph(graph.doc_id, nodes, tuple(edges))


def tiny_classifier(rng, labels=3, dim=4, layers=(3, 2), segment_length=4, attention_dim=3, **kw):
    config = EncoderConfig(
        label_count=labels, segment_length=segment_length, max_len=64, text_hidden_dim=dim,
        dgcnn_layer_sizes=layers, attention_dim=attention_dim, **kw,
    )
    vocab = Vocabulary(WORDS)
    return Classifier.initialize(config, vocab, rng)


# settings that fit the planted synthetic corpus in seconds
PLANTED_MODEL = dict(segment_length=16, max_len=64, text_hidden_dim=16, dgcnn_layer_sizes=(16,), attention_dim=16)
PLANTED_TRAIN = dict(learning_rate=0.01, warmup_steps=24, seed=42)


def dump_corpus(corpus, directory):
    """Write a corpus back out as the four JSON-lines input files."""
    directory.mkdir(parents=True, exist_ok=True)
    docs = [{"doc_id": d.doc_id, "text": d.text} for d in corpus.documents]
    labels = [{"doc_id": d.doc_id, "codes": sorted(d.labels)} for d in corpus.documents]
    splits = [{"doc_id": d.doc_id, "split": d.split} for d in corpus.documents if d.split]
    triples = [t.to_record() for d in corpus.documents for t in corpus.triples[d.doc_id]]
    return {
        "docs": write_jsonl(directory / "docs.jsonl", docs),
        "labels": write_jsonl(directory / "labels.jsonl", labels),
        "splits": write_jsonl(directory / "splits.jsonl", splits),
        "triples": write_jsonl(directory / "triples.jsonl", triples),
    }
