"""Reading documents, labels, splits and relation-extraction triples.

All input files are UTF-8 JSON-lines:

* documents: ``{"doc_id": ..., "text": ...}``
* labels:    ``{"doc_id": ..., "codes": [...]}``
* splits:    ``{"doc_id": ..., "split": "train" | "dev" | "test"}``
* triples:   ``{"doc_id", "head", "head_type", "relation", "relation_family",
  "tail", "tail_type"}``
"""

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ParseError, ValidationError
from .taxonomy import NO_RELATION_LABELS, RelationFamily, normalize_entity_type

SPLITS = ("train", "dev", "test")

TRIPLE_FIELDS = ("doc_id", "head", "head_type", "relation", "relation_family", "tail", "tail_type")


@dataclass(frozen=True)
class RawDocument:
    doc_id: str
    text: str
    labels: frozenset = frozenset()
    split: str | None = None


@dataclass(frozen=True)
class Triple:
    doc_id: str
    head_text: str
    head_type: str
    relation: str
    relation_family: RelationFamily
    tail_text: str
    tail_type: str

    def __post_init__(self):
        if not self.head_text.strip() or not self.tail_text.strip():
            raise ValidationError(f"triple in {self.doc_id!r} has an empty entity text")
        if not isinstance(self.relation_family, RelationFamily):
            object.__setattr__(self, "relation_family", RelationFamily.parse(self.relation_family))
        object.__setattr__(self, "head_type", normalize_entity_type(self.head_type))
        object.__setattr__(self, "tail_type", normalize_entity_type(self.tail_type))

    def to_record(self):
        return {
            "doc_id": self.doc_id,
            "head": self.head_text,
            "head_type": self.head_type,
            "relation": self.relation,
            "relation_family": self.relation_family.value,
            "tail": self.tail_text,
            "tail_type": self.tail_type,
        }


@dataclass(frozen=True)
class Segment:
    index: int
    tokens: tuple


@dataclass
class Corpus:
    documents: list
    token_sequences: dict
    triples: dict
    label_space: list = field(default_factory=list)

    @property
    def label_count(self):
        return len(self.label_space)

    def split_ids(self, split):
        return [d.doc_id for d in self.documents if d.split == split]

    def document(self, doc_id):
        for doc in self.documents:
            if doc.doc_id == doc_id:
                return doc
        raise KeyError(doc_id)


def preprocess_text(raw):
    """Lowercase, split on whitespace and keep tokens with at least one letter.

    >>> preprocess_text("Lisinopril 40mg QD ###")
    ['lisinopril', '40mg', 'qd']
    """
    return [tok for tok in raw.lower().split() if any(c.isalpha() for c in tok)]


def segment_document(tokens, l, max_len):
    """Truncate ``tokens`` to ``max_len`` and cut it into consecutive chunks of ``l``.

    An empty sequence gives a single empty segment.
    """
    if l < 1:
        raise ValueError(f"segment length must be >= 1, got {l}")
    if max_len < 1:
        raise ValueError(f"max_len must be >= 1, got {max_len}")
    kept = list(tokens[:max_len])
    if not kept:
        return [Segment(0, ())]
    count = math.ceil(len(kept) / l)
    return [Segment(i, tuple(kept[l * i : l * (i + 1)])) for i in range(count)]


def _iter_json_lines(stream, path=None):
    for lineno, line in enumerate(stream, start=1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid JSON ({exc.msg})", path=path, line=lineno) from None
        if not isinstance(record, dict):
            raise ParseError("expected a JSON object", path=path, line=lineno)
        yield lineno, record


def _require(record, keys, path, lineno):
    missing = [k for k in keys if k not in record]
    if missing:
        raise ParseError(f"missing field(s) {', '.join(missing)}", path=path, line=lineno)


def parse_triples_file(stream, path=None):
    """Parse a JSON-lines stream of RE outputs into :class:`Triple` objects.

    Lines whose relation is a no-relationship marker ("O" or "0") are skipped.
    """
    triples = []
    for lineno, record in _iter_json_lines(stream, path):
        _require(record, TRIPLE_FIELDS, path, lineno)
        relation = str(record["relation"]).strip()
        if relation in NO_RELATION_LABELS:
            continue
        try:
            family = RelationFamily.parse(record["relation_family"])
        except ValueError as exc:
            raise ValidationError(f"{path or '<stream>'}:line {lineno}: {exc}") from None
        try:
            triples.append(
                Triple(
                    doc_id=str(record["doc_id"]),
                    head_text=str(record["head"]),
                    head_type=record["head_type"],
                    relation=relation,
                    relation_family=family,
                    tail_text=str(record["tail"]),
                    tail_type=record["tail_type"],
                )
            )
        except ValueError as exc:
            raise ValidationError(f"{path or '<stream>'}:line {lineno}: {exc}") from None
    return triples


def read_documents(path):
    docs = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, record in _iter_json_lines(fh, path):
            _require(record, ("doc_id", "text"), path, lineno)
            doc_id = str(record["doc_id"])
            if doc_id in docs:
                raise ValidationError(f"{path}:line {lineno}: duplicate doc_id {doc_id!r}")
            docs[doc_id] = str(record["text"])
    return docs


def read_labels(path):
    labels = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, record in _iter_json_lines(fh, path):
            _require(record, ("doc_id", "codes"), path, lineno)
            codes = record["codes"]
            if not isinstance(codes, list):
                raise ParseError("'codes' must be a list", path=path, line=lineno)
            doc_id = str(record["doc_id"])
            if doc_id in labels:
                raise ValidationError(f"{path}:line {lineno}: duplicate labels for {doc_id!r}")
            labels[doc_id] = frozenset(str(c) for c in codes)
    return labels


def read_splits(path):
    splits = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, record in _iter_json_lines(fh, path):
            _require(record, ("doc_id", "split"), path, lineno)
            doc_id = str(record["doc_id"])
            split = str(record["split"])
            if split not in SPLITS:
                raise ValidationError(f"{path}:line {lineno}: unknown split {split!r}")
            if doc_id in splits:
                raise ValidationError(f"{path}:line {lineno}: split assigned twice for {doc_id!r}")
            splits[doc_id] = split
    return splits


def read_triples(path):
    with open(path, encoding="utf-8") as fh:
        return parse_triples_file(fh, path=path)


def build_corpus(texts, triples, labels=None, splits=None):
    """Assemble and cross-validate a :class:`Corpus` from already-parsed parts.

    ``texts`` maps doc_id to raw text and fixes the document order.
    """
    labels = labels or {}
    if splits is not None:
        unassigned = sorted(set(texts) - set(splits))
        if unassigned:
            raise ValidationError(f"documents without a split: {', '.join(unassigned)}")
        extra = sorted(set(splits) - set(texts))
        if extra:
            raise ValidationError(f"splits reference unknown documents: {', '.join(extra)}")
    unknown_labelled = sorted(set(labels) - set(texts))
    if unknown_labelled:
        raise ValidationError(f"labels reference unknown documents: {', '.join(unknown_labelled)}")

    per_doc = {doc_id: [] for doc_id in texts}
    dangling = []
    for t in triples:
        if t.doc_id in per_doc:
            per_doc[t.doc_id].append(t)
        elif t.doc_id not in dangling:
            dangling.append(t.doc_id)
    if dangling:
        raise ValidationError(f"triples reference unknown doc_id(s): {', '.join(sorted(dangling))}")

    documents = [
        RawDocument(
            doc_id=doc_id,
            text=text,
            labels=labels.get(doc_id, frozenset()),
            split=None if splits is None else splits[doc_id],
        )
        for doc_id, text in texts.items()
    ]
    label_space = sorted(set().union(*(d.labels for d in documents))) if documents else []
    return Corpus(
        documents=documents,
        token_sequences={d.doc_id: preprocess_text(d.text) for d in documents},
        triples=per_doc,
        label_space=label_space,
    )


def load_corpus(doc_path, label_path=None, triples_path=None, splits_path=None):
    """Load and validate a corpus from its JSON-lines files.

    ``label_path``, ``triples_path`` and ``splits_path`` are optional so that
    graph-only workflows need just documents and triples.
    """
    texts = read_documents(doc_path)
    triples = read_triples(triples_path) if triples_path is not None else []
    labels = read_labels(label_path) if label_path is not None else None
    splits = read_splits(splits_path) if splits_path is not None else None
    return build_corpus(texts, triples, labels=labels, splits=splits)


def write_json_lines(path, records):
    path = Path(path)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for record in records:
            fh.write(json.dumps(record, ensure_ascii=False, sort_keys=True))
            fh.write("\n")
