"""Synthetic corpora with planted, learnable label structure.

Each document gets two kinds of labels:

* keyword labels ``kw<j>``: present iff the token ``keyword<j>`` occurs in the text;
* motif labels ``motif<j>``: present iff entity ``anchor<j>`` is linked to
  ``target<j>`` rather than to ``decoy<j>``. Both candidates appear in every
  text and every graph, so only the graph structure separates the classes.

With ``noise=0`` every document shares the same filler words and filler
triples, so nothing but the planted signal distinguishes documents.
"""

import numpy as np

from .ingest import Corpus, RawDocument, Triple, build_corpus
from .taxonomy import RelationFamily

FILLER_WORDS = (
    "patient", "admitted", "history", "denies", "stable", "noted", "chest", "pain",
    "daily", "given", "normal", "exam", "follow", "clinic", "discharged", "home",
    "mild", "without", "acute", "review",
)
FILLER_ENTITIES = ("fatigue", "nausea", "cough", "edema", "fever", "rash")


def _pick(rng, n, fraction):
    count = max(1, round(fraction * n))
    mask = np.zeros(n, dtype=bool)
    mask[rng.choice(n, size=count, replace=False)] = True
    return mask


def make_planted_corpus(
    n_docs=32,
    n_keyword_labels=4,
    n_motif_labels=4,
    dev_docs=8,
    prevalence=0.3,
    seed=0,
    noise=0,
):
    """Build a corpus whose labels are deterministic functions of tokens and graph motifs.

    ``noise`` adds that many random filler words and up to that many random
    filler triples per document. Returns ``(corpus, info)`` where ``info``
    lists the keyword and motif codes.
    """
    rng = np.random.default_rng(seed)
    split = ["train"] * (n_docs - dev_docs) + ["dev"] * dev_docs
    train_idx = [i for i, s in enumerate(split) if s == "train"]
    dev_idx = [i for i, s in enumerate(split) if s == "dev"]

    def assign(n_labels):
        # prevalence is enforced per split so every label has dev positives
        out = np.zeros((n_docs, n_labels), dtype=bool)
        for idx in (train_idx, dev_idx):
            for j in range(n_labels):
                out[idx, j] = _pick(rng, len(idx), prevalence)
        return out

    kw = assign(n_keyword_labels)
    motif = assign(n_motif_labels)

    texts, labels, splits, triples = {}, {}, {}, []
    for i in range(n_docs):
        doc_id = f"doc{i:03d}"
        words = list(FILLER_WORDS)
        if noise:
            words += [str(w) for w in rng.choice(FILLER_WORDS, size=noise)]
        words += [f"keyword{j}" for j in range(n_keyword_labels) if kw[i, j]]
        for j in range(n_motif_labels):
            words += [f"anchor{j}", f"target{j}", f"decoy{j}"]
        rng.shuffle(words)
        texts[doc_id] = " ".join(words)
        codes = [f"kw{j}" for j in range(n_keyword_labels) if kw[i, j]]
        codes += [f"motif{j}" for j in range(n_motif_labels) if motif[i, j]]
        labels[doc_id] = frozenset(codes)
        splits[doc_id] = split[i]

        for j in range(n_motif_labels):
            linked, spare = (f"target{j}", f"decoy{j}") if motif[i, j] else (f"decoy{j}", f"target{j}")
            triples.append(
                Triple(doc_id, f"anchor{j}", "problem", "TrAP", RelationFamily.CR, linked, "treatment")
            )
            triples.append(
                Triple(doc_id, spare, "treatment", "TrAP", RelationFamily.CR, FILLER_ENTITIES[j % 2], "symptom")
            )
        triples.append(Triple(doc_id, "fever", "symptom", "OVERLAP", RelationFamily.TE, "cough", "symptom"))
        for _ in range(int(rng.integers(0, noise + 1)) if noise else 0):
            a, b = rng.choice(FILLER_ENTITIES, size=2, replace=False)
            triples.append(Triple(doc_id, str(a), "symptom", "OVERLAP", RelationFamily.TE, str(b), "symptom"))

    corpus = build_corpus(texts, triples, labels=labels, splits=splits)
    info = {
        "keyword_codes": [f"kw{j}" for j in range(n_keyword_labels)],
        "motif_codes": [f"motif{j}" for j in range(n_motif_labels)],
    }
    return corpus, info


def restrict_labels(corpus, codes):
    """Copy of ``corpus`` keeping only the given label codes."""
    keep = set(codes)
    docs = [RawDocument(d.doc_id, d.text, d.labels & keep, d.split) for d in corpus.documents]
    return Corpus(docs, dict(corpus.token_sequences), dict(corpus.triples), sorted(keep))
