import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from patientkg.entropy import (
    Distribution,
    corpus_entropy_report,
    retention_and_loss,
    shannon_entropy,
    standard_ablation_filters,
    token_entropy,
    unigram_distribution,
)
from patientkg.errors import UndefinedDistributionError, ValidationError
from patientkg.ingest import Triple, build_corpus, load_corpus, preprocess_text
from patientkg.kg import AblationFilter, build_graphs, serialize_graph
from patientkg.taxonomy import RelationFamily

from oracles import entropy as brute_entropy


class TestDistribution:
    def test_counts(self):
        d = unigram_distribution(["a", "a", "b"])
        assert d.support == ("a", "b")
        assert d.probabilities == (2 / 3, 1 / 3)

    def test_singleton(self):
        assert unigram_distribution(["x"]).as_dict() == {"x": 1.0}

    def test_uniform(self):
        assert unigram_distribution(["d", "c", "b", "a"]).probabilities == (0.25,) * 4

    def test_empty_raises(self):
        with pytest.raises(UndefinedDistributionError):
            unigram_distribution([])

    @given(st.lists(st.sampled_from("abcdefg"), min_size=1))
    def test_sums_to_one(self, tokens):
        d = unigram_distribution(tokens)
        assert abs(math.fsum(d.probabilities) - 1.0) < 1e-12
        assert all(p > 0 for p in d.probabilities)
        assert list(d.support) == sorted(d.support)


class TestShannon:
    def test_uniform_four(self):
        assert shannon_entropy(unigram_distribution(list("abcd"))) == 2.0

    def test_two_thirds(self):
        # -(2/3 log2 2/3 + 1/3 log2 1/3)
        assert shannon_entropy(unigram_distribution(["a", "a", "b"])) == pytest.approx(0.918296, abs=1e-6)

    def test_singleton_zero(self):
        h = shannon_entropy(unigram_distribution(["x", "x"]))
        assert h == 0.0 and math.copysign(1.0, h) == 1.0

    @pytest.mark.parametrize("n", [1, 2, 4, 8, 1024])
    def test_uniform_closed_form(self, n):
        assert abs(token_entropy([f"t{i}" for i in range(n)]) - math.log2(n)) < 1e-12

    @given(st.lists(st.sampled_from("abcdefghij"), min_size=1, max_size=60), st.randoms())
    def test_support_order_invariant(self, tokens, random):
        d = unigram_distribution(tokens)
        pairs = list(zip(d.support, d.probabilities))
        random.shuffle(pairs)
        shuffled = Distribution(tuple(s for s, _ in pairs), tuple(p for _, p in pairs))
        assert shannon_entropy(shuffled) == shannon_entropy(d)

    @given(st.lists(st.sampled_from("abcdefghij"), min_size=1, max_size=60))
    def test_bounds_and_oracle(self, tokens):
        d = unigram_distribution(tokens)
        h = shannon_entropy(d)
        assert 0.0 <= h <= math.log2(len(d.support)) + 1e-12
        assert abs(h - brute_entropy(tokens)) < 1e-12


class TestRetention:
    def test_simple(self):
        r, l = retention_and_loss(8.0, 7.2)
        assert r == pytest.approx(90.0, abs=1e-9) and l == pytest.approx(10.0, abs=1e-9)

    def test_reported_rounded_entropies(self):
        r, l = retention_and_loss(8.33, 7.48)
        assert round(r, 2) == 89.80 and round(l, 2) == 10.20

    def test_identity(self):
        assert retention_and_loss(5.0, 5.0) == (100.0, 0.0)

    @pytest.mark.parametrize("h", [0.0, -1.0])
    def test_guard(self, h):
        with pytest.raises(ValidationError):
            retention_and_loss(h, 1.0)

    @given(st.floats(0.01, 20), st.floats(0, 20))
    def test_sum_is_hundred(self, ht, hg):
        r, l = retention_and_loss(ht, hg)
        assert abs(r + l - 100.0) < 1e-9
        assert abs(r - hg / ht * 100.0) < 1e-9


def _single_doc(text, triples):
    return build_corpus({"d": text}, triples)


class TestCorpusReport:
    def test_worked_example(self):
        # graph serializes to ["a", "b"] when the relation label is one of the entity tokens
        corpus = _single_doc("a a b", [Triple("d", "a", "problem", "b", "CR", "b", "test")])
        graphs = build_graphs(corpus)
        assert serialize_graph(graphs["d"]) == ["a", "b", "b"]
        report = corpus_entropy_report(corpus, graphs)
        assert report.text_entropy == pytest.approx(0.9183, abs=1e-4)
        assert report.graph_entropy == pytest.approx(brute_entropy(["a", "b", "b"]), abs=1e-12)

    def test_text_vs_two_token_graph(self):
        h_text = token_entropy(preprocess_text("a a b"))
        h_graph = token_entropy(["a", "b"])
        assert h_text == pytest.approx(0.9183, abs=1e-4) and h_graph == 1.0
        r, _ = retention_and_loss(h_text, h_graph)
        assert r > 100.0

    def test_no_filters_no_rows(self, corpus_files):
        corpus = load_corpus(corpus_files["docs"], triples_path=corpus_files["triples"])
        assert corpus_entropy_report(corpus, build_graphs(corpus)).ablation_rows == []

    def test_remove_every_family(self, corpus_files):
        corpus = load_corpus(corpus_files["docs"], triples_path=corpus_files["triples"])
        flt = AblationFilter(removed_families=frozenset(RelationFamily))
        report = corpus_entropy_report(corpus, build_graphs(corpus), [flt])
        (row,) = report.ablation_rows
        assert row.graph_entropy == 0.0 and row.retention_ratio == 0.0 and row.empty_graphs

    def test_all_empty_graphs_flagged(self):
        corpus = build_corpus({"d": "some words here"}, [])
        report = corpus_entropy_report(corpus, build_graphs(corpus))
        assert report.graph_entropy == 0.0 and report.empty_graphs

    def test_text_entropy_constant_across_rows(self, corpus_files):
        corpus = load_corpus(corpus_files["docs"], triples_path=corpus_files["triples"])
        report = corpus_entropy_report(corpus, build_graphs(corpus), standard_ablation_filters())
        assert len(report.ablation_rows) == 9
        assert abs(report.retention_ratio + report.loss_ratio - 100.0) < 1e-9
        pooled = [t for d in corpus.documents for t in corpus.token_sequences[d.doc_id]]
        assert report.text_entropy == brute_entropy(pooled)
        table = report.to_table()
        assert "Graph Entropy" in table and "posology relationship" in table

    def test_pooled_graph_entropy_matches_oracle(self, corpus_files):
        corpus = load_corpus(corpus_files["docs"], triples_path=corpus_files["triples"])
        graphs = build_graphs(corpus)
        pooled = [t for d in corpus.documents for t in serialize_graph(graphs[d.doc_id])]
        assert corpus_entropy_report(corpus, graphs).graph_entropy == brute_entropy(pooled)

    def test_per_document_mode(self, corpus_files):
        corpus = load_corpus(corpus_files["docs"], triples_path=corpus_files["triples"])
        graphs = build_graphs(corpus)
        report = corpus_entropy_report(corpus, graphs, mode="per-document")
        expected = [brute_entropy(corpus.token_sequences[d.doc_id]) for d in corpus.documents]
        assert report.text_entropy == pytest.approx(sum(expected) / len(expected), abs=1e-12)
        with pytest.raises(ValueError):
            corpus_entropy_report(corpus, graphs, mode="bogus")

    def test_empty_corpus(self):
        with pytest.raises(ValidationError):
            corpus_entropy_report(build_corpus({}, []), {})

    def test_filtered_support_never_grows(self, corpus_files):
        corpus = load_corpus(corpus_files["docs"], triples_path=corpus_files["triples"])
        graphs = build_graphs(corpus)
        full = {t for g in graphs.values() for t in serialize_graph(g)}
        from patientkg.kg import filter_graph

        for flt in standard_ablation_filters():
            sub = {t for g in graphs.values() for t in serialize_graph(filter_graph(g, flt))}
            assert sub <= full
