"""Shannon entropy of processed text versus serialized graphs."""

import json
import math
import statistics
from collections import Counter
from dataclasses import dataclass, field

from .errors import UndefinedDistributionError, ValidationError
from .kg import AblationFilter, filter_graph, serialize_graph
from .tables import format_table
from .taxonomy import ABLATION_ENTITY_TYPES, RelationFamily


@dataclass(frozen=True)
class Distribution:
    support: tuple
    probabilities: tuple

    def as_dict(self):
        return dict(zip(self.support, self.probabilities))


def _distribution_from_counts(counts):
    total = sum(counts.values())
    if total == 0:
        raise UndefinedDistributionError("cannot build a distribution from an empty token sequence")
    support = tuple(sorted(counts))
    return Distribution(support, tuple(counts[tok] / total for tok in support))


def unigram_distribution(tokens):
    """Relative token frequencies, support sorted lexicographically."""
    return _distribution_from_counts(Counter(tokens))


def shannon_entropy(dist):
    """Entropy in bits. ``math.fsum`` keeps the result independent of support order."""
    return 0.0 - math.fsum(p * math.log2(p) for p in dist.probabilities)


def token_entropy(tokens):
    return shannon_entropy(unigram_distribution(tokens))


def retention_and_loss(h_text, h_graph):
    """Return (retained %, lost %) of text entropy carried by the graph."""
    if not h_text > 0:
        raise ValidationError(f"text entropy must be positive, got {h_text}")
    loss = (h_text - h_graph) / h_text * 100.0
    return 100.0 - loss, loss


@dataclass
class AblationRow:
    removed: str
    graph_entropy: float
    retention_ratio: float
    empty_graphs: bool = False


@dataclass
class EntropyReport:
    text_entropy: float
    graph_entropy: float
    retention_ratio: float
    loss_ratio: float
    mode: str = "pooled"
    empty_graphs: bool = False
    ablation_rows: list = field(default_factory=list)

    def to_dict(self):
        return {
            "mode": self.mode,
            "text_entropy": self.text_entropy,
            "graph_entropy": self.graph_entropy,
            "retention_ratio": self.retention_ratio,
            "loss_ratio": self.loss_ratio,
            "empty_graphs": self.empty_graphs,
            "ablation_rows": [vars(r).copy() for r in self.ablation_rows],
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_table(self):
        rows = [["Full", f"{self.text_entropy:.2f}", f"{self.graph_entropy:.2f}", f"{self.retention_ratio:.2f}"]]
        for r in self.ablation_rows:
            rows.append([r.removed, f"{self.text_entropy:.2f}", f"{r.graph_entropy:.2f}", f"{r.retention_ratio:.2f}"])
        return format_table(["Remove", "Text Entropy", "Graph Entropy", "Ratio (%)"], rows)


def standard_ablation_filters():
    """The nine single-type removals: each relation family, then the four commonest entity types."""
    filters = [AblationFilter(removed_families=frozenset({f})) for f in RelationFamily]
    filters += [AblationFilter(removed_entity_types=frozenset({t})) for t in ABLATION_ENTITY_TYPES]
    return filters


def _entropy_of(token_lists, mode):
    """Entropy of a collection of token lists; returns (bits, all_empty)."""
    if mode == "pooled":
        counts = Counter()
        for toks in token_lists:
            counts.update(toks)
        if not counts:
            return 0.0, True
        return shannon_entropy(_distribution_from_counts(counts)), False
    if mode == "per-document":
        # empty sequences have no distribution; they are left out of the mean
        values = [token_entropy(t) for t in token_lists if t]
        if not values:
            return 0.0, True
        return statistics.fmean(values), False
    raise ValueError(f"unknown entropy mode {mode!r}")


def corpus_entropy_report(corpus, graphs, ablation_filters=(), mode="pooled"):
    """Text vs serialized-graph entropy for a corpus, plus one row per ablation filter.

    ``mode="pooled"`` builds one unigram distribution over the whole corpus;
    ``mode="per-document"`` averages per-document entropies instead.
    """
    if not corpus.documents:
        raise ValidationError("corpus is empty")
    doc_ids = [d.doc_id for d in corpus.documents]
    h_text, text_empty = _entropy_of([corpus.token_sequences[i] for i in doc_ids], mode)
    if text_empty:
        raise ValidationError("corpus has no tokens; text entropy is undefined")

    def graph_row(gs):
        h, empty = _entropy_of([serialize_graph(gs[i]) for i in doc_ids], mode)
        return h, empty, retention_and_loss(h_text, h)

    h_graph, empty, (retention, loss) = graph_row(graphs)
    report = EntropyReport(h_text, h_graph, retention, loss, mode=mode, empty_graphs=empty)
    for flt in ablation_filters:
        filtered = {i: filter_graph(graphs[i], flt) for i in doc_ids}
        h, row_empty, (row_retention, _) = graph_row(filtered)
        report.ablation_rows.append(AblationRow(flt.describe(), h, row_retention, row_empty))
    return report
