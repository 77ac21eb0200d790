import json
import time

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from patientkg.errors import CheckpointError, ConfigError, DivergenceError, ValidationError
from patientkg.ingest import build_corpus
from patientkg.kg import build_graphs
from patientkg.model import Classifier, EncoderConfig
from patientkg.synthetic import make_planted_corpus, restrict_labels
from patientkg.train import (
    Checkpoint,
    TrainConfig,
    assign_codes,
    evaluate,
    label_matrix,
    load_config,
    parse_config,
    train,
)

from conftest import PLANTED_MODEL, PLANTED_TRAIN, WORDS


@pytest.fixture(scope="module")
def planted():
    corpus, info = make_planted_corpus(seed=0)
    return corpus, build_graphs(corpus), info


@pytest.fixture(scope="module")
def trained(planted):
    corpus, graphs, _ = planted
    return train(corpus, graphs, PLANTED_MODEL, TrainConfig(epochs=60, **PLANTED_TRAIN))


class TestConfig:
    def test_zero_epochs_rejected(self):
        with pytest.raises(ConfigError):
            TrainConfig(epochs=0)

    @pytest.mark.parametrize("tau", [0.0, 1.0, 1.5])
    def test_threshold_range(self, tau):
        with pytest.raises(ConfigError):
            TrainConfig(threshold=tau)

    def test_warmup_schedule(self):
        cfg = TrainConfig(learning_rate=0.1, warmup_steps=4)
        assert [cfg.learning_rate_at(s) for s in (1, 2, 4, 10)] == [0.025, 0.05, 0.1, 0.1]
        assert TrainConfig(learning_rate=0.1, warmup_steps=0).learning_rate_at(1) == 0.1

    def test_table_style_keys(self):
        raw = {
            "common": {"random seed": 7, "train/evaluation batch size": 1, "number of processes": 4},
            "text": {"max length": 256, "chunk size": 32},
            "graph": {"DGCNN": "384-384"},
            "train epochs": 3,
            "warmup steps": 10,
        }
        model, cfg = parse_config(raw)
        assert model == {"max_len": 256, "segment_length": 32, "dgcnn_layer_sizes": "384-384"}
        assert (cfg.seed, cfg.epochs, cfg.warmup_steps, cfg.batch_size) == (7, 3, 10, 1)

    def test_unknown_key(self):
        with pytest.raises(ConfigError, match="dropout"):
            parse_config({"dropout": 0.1})

    def test_toml_and_json_agree(self, tmp_path):
        (tmp_path / "c.toml").write_text('"train epochs" = 5\nlearning_rate = 0.01\n[graph]\nDGCNN = "128-256"\n')
        (tmp_path / "c.json").write_text(json.dumps({"train epochs": 5, "learning_rate": 0.01, "graph": {"DGCNN": "128-256"}}))
        assert load_config(tmp_path / "c.toml") == load_config(tmp_path / "c.json")

    def test_unreadable_config(self, tmp_path):
        (tmp_path / "c.json").write_text("{nope")
        with pytest.raises(ConfigError):
            load_config(tmp_path / "c.json")


class TestAssignCodes:
    def test_strict(self):
        assert assign_codes([0.7, 0.2, 0.5], 0.5) == {0}

    def test_boundary(self):
        assert assign_codes([0.5, 0.5], 0.5) == set()

    def test_single(self):
        assert assign_codes([0.99], 0.5) == {0}

    @given(st.lists(st.floats(0, 1), max_size=12), st.floats(0.01, 0.98), st.floats(0.0, 0.5))
    def test_monotone_in_threshold(self, p, t1, delta):
        t2 = min(t1 + delta, 0.99)
        assert assign_codes(p, t2) <= assign_codes(p, t1)


class TestTrain:
    def test_learns_planted_labels(self, trained, planted):
        corpus, graphs, _ = planted
        report, probs = evaluate(trained.best, corpus, graphs, "dev", k=4)
        assert report.micro_f1 == 1.0 and report.macro_f1 == 1.0
        y = label_matrix(corpus, corpus.split_ids("dev"))
        assert report.macro_auc == 1.0 and report.micro_auc == 1.0
        # ideal P@k for this truth matrix is the mean of min(|truth|, k) / k
        ideal = np.mean(np.minimum(y.sum(axis=1), 4) / 4)
        assert report.p_at_k == pytest.approx(ideal, abs=1e-15)
        assert report.r_at_k == 1.0

    def test_loss_decreases(self, trained):
        losses = trained.log.losses
        assert losses[-1] < losses[0] / 10
        upticks = [b / a - 1 for a, b in zip(losses, losses[1:]) if b > a]
        assert max(upticks, default=0.0) < 0.05 or losses[-1] < losses[0] / 100

    def test_log_contiguous(self, trained):
        assert [e.epoch for e in trained.log.epochs] == list(range(1, 61))
        assert all(e.dev is not None and e.seconds >= 0 for e in trained.log.epochs)
        line = json.loads(trained.log.to_json_lines().splitlines()[0])
        assert set(line) == {"epoch", "loss", "dev"}

    def test_best_is_best_dev_macro_f1(self, trained):
        scores = [e.dev["macro_f1"] for e in trained.log.epochs]
        assert trained.best.epoch == 1 + scores.index(max(scores))
        assert trained.final.epoch == 60

    def test_deterministic(self, planted):
        corpus, graphs, _ = planted
        cfg = TrainConfig(epochs=3, **PLANTED_TRAIN)
        a = train(corpus, graphs, PLANTED_MODEL, cfg)
        b = train(corpus, graphs, PLANTED_MODEL, cfg)
        assert a.log.to_json_lines() == b.log.to_json_lines()
        for name in a.final.params:
            assert a.final.params[name].tobytes() == b.final.params[name].tobytes()

    def test_accumulation_changes_update_count(self, planted):
        corpus, graphs, _ = planted
        one = train(corpus, graphs, PLANTED_MODEL, TrainConfig(epochs=1, **PLANTED_TRAIN))
        acc = train(corpus, graphs, PLANTED_MODEL, TrainConfig(epochs=1, gradient_accumulation_steps=4, **PLANTED_TRAIN))
        assert one.log.losses[0] != acc.log.losses[0]

    def test_no_train_split(self):
        corpus = build_corpus({"a": "x"}, [], labels={"a": frozenset({"c"})}, splits={"a": "test"})
        with pytest.raises(ValidationError, match="training"):
            train(corpus, build_graphs(corpus), {}, TrainConfig(epochs=1))

    def test_divergence_reported(self, planted):
        corpus, graphs, _ = planted
        with pytest.raises(DivergenceError) as err:
            train(corpus, graphs, PLANTED_MODEL, TrainConfig(epochs=2, learning_rate=1e300, warmup_steps=0))
        assert err.value.doc_id in corpus.split_ids("train")

    def test_without_dev_split_best_is_final(self, planted):
        corpus, graphs, _ = planted
        docs = [d for d in corpus.documents if d.split == "train"]
        small = build_corpus(
            {d.doc_id: d.text for d in docs},
            [t for d in docs for t in corpus.triples[d.doc_id]],
            labels={d.doc_id: d.labels for d in docs},
            splits={d.doc_id: "train" for d in docs},
        )
        result = train(small, build_graphs(small), PLANTED_MODEL, TrainConfig(epochs=2, **PLANTED_TRAIN))
        assert result.best is result.final and result.log.epochs[0].dev is None


class TestEvaluate:
    def test_checkpoint_roundtrip(self, trained, planted, tmp_path):
        corpus, graphs, _ = planted
        trained.best.save(tmp_path / "best.ckpt")
        back = Checkpoint.load(tmp_path / "best.ckpt")
        assert back.config == trained.best.config and back.label_space == corpus.label_space
        r1, p1 = evaluate(trained.best, corpus, graphs, "dev", k=3)
        r2, p2 = evaluate(back, corpus, graphs, "dev", k=3)
        assert p1.tobytes() == p2.tobytes() and r1 == r2

    def test_k_too_large(self, trained, planted):
        corpus, graphs, _ = planted
        with pytest.raises(ValidationError):
            evaluate(trained.best, corpus, graphs, "dev", k=corpus.label_count + 1)

    def test_label_space_mismatch(self, trained, planted):
        corpus, graphs, info = planted
        narrow = restrict_labels(corpus, info["motif_codes"])
        with pytest.raises(CheckpointError):
            evaluate(trained.best, narrow, graphs, "dev", k=2)

    def test_random_checkpoint_is_chance(self):
        rng = np.random.default_rng(5)
        n, codes = 500, [f"c{j}" for j in range(8)]
        texts = {f"d{i}": " ".join(rng.choice(WORDS, size=int(rng.integers(3, 12)))) for i in range(n)}
        labels = {d: frozenset(c for c in codes if rng.random() < 0.5) for d in texts}
        corpus = build_corpus(texts, [], labels=labels, splits={d: "test" for d in texts})
        config = EncoderConfig(label_count=8, segment_length=8, max_len=32, text_hidden_dim=8, dgcnn_layer_sizes=(8,), attention_dim=8)
        train_like = build_corpus(texts, [], labels=labels, splits={d: "train" for d in texts})
        from patientkg.train import build_vocabulary

        vocab = build_vocabulary(train_like, build_graphs(train_like), list(texts))
        clf = Classifier.initialize(config, vocab, rng)
        ckpt = Checkpoint(config, clf.params, vocab, corpus.label_space)
        started = time.perf_counter()
        report, _ = evaluate(ckpt, corpus, build_graphs(corpus), "test", k=8)
        assert abs(report.macro_auc - 0.5) <= 0.05
        assert time.perf_counter() - started < 30
