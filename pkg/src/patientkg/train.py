"""Training loop, checkpoints and split evaluation for the dual-branch coder."""

import json
import logging
import math
import re
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import CheckpointError, ConfigError, DivergenceError, NonFiniteError, ValidationError
from .metrics import evaluate_predictions
from .model import Classifier, EncoderConfig, Vocabulary
from .numerics import load_tensors, save_tensors

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

log = logging.getLogger(__name__)

ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    learning_rate: float = 1e-3
    warmup_steps: int = 2000
    batch_size: int = 1
    gradient_accumulation_steps: int = 1
    seed: int = 42
    threshold: float = 0.5
    k: int = 8

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if not self.learning_rate > 0:
            raise ConfigError(f"learning rate must be positive, got {self.learning_rate}")
        if self.warmup_steps < 0:
            raise ConfigError("warmup_steps must be >= 0")
        if self.batch_size < 1 or self.gradient_accumulation_steps < 1:
            raise ConfigError("batch size and gradient accumulation steps must be >= 1")
        if not 0.0 < self.threshold < 1.0:
            raise ConfigError(f"threshold must lie in (0, 1), got {self.threshold}")
        if self.k < 1:
            raise ConfigError(f"k must be >= 1, got {self.k}")

    def learning_rate_at(self, step):
        """Linear warmup over ``warmup_steps`` updates, then constant. ``step`` counts from 1."""
        if self.warmup_steps == 0:
            return self.learning_rate
        return self.learning_rate * min(1.0, step / self.warmup_steps)


# Config-file keys follow the hyperparameter table names, e.g. "max length",
# "chunk size", "DGCNN", "warmup steps", "random seed".
_MODEL_KEYS = {
    "max_length": "max_len",
    "max_len": "max_len",
    "chunk_size": "segment_length",
    "segment_length": "segment_length",
    "dgcnn": "dgcnn_layer_sizes",
    "dgcnn_layer_sizes": "dgcnn_layer_sizes",
    "text_hidden_dim": "text_hidden_dim",
    "node_feature_dim": "node_feature_dim",
    "attention_dim": "attention_dim",
    "self_loops": "self_loops",
    "use_graph": "use_graph",
}
_TRAIN_KEYS = {
    "train_epochs": "epochs",
    "epochs": "epochs",
    "learning_rate": "learning_rate",
    "warmup_steps": "warmup_steps",
    "random_seed": "seed",
    "seed": "seed",
    "train_evaluation_batch_size": "batch_size",
    "batch_size": "batch_size",
    "gradient_accumulation_steps": "gradient_accumulation_steps",
    "threshold": "threshold",
    "k": "k",
}
# descriptive rows of the table that carry no setting here
_IGNORED_KEYS = {"number_of_processes", "model_mode", "pretrained_model_text", "pretrained_model_node"}


def _key(name):
    return re.sub(r"[^a-z0-9]+", "_", name.lower()).strip("_")


def _flatten(d):
    for k, v in d.items():
        if isinstance(v, dict):
            yield from _flatten(v)
        else:
            yield k, v


def parse_config(raw):
    """Split a config mapping into (model kwargs, TrainConfig).

    Nested tables (``[common]``, ``[text]``, ``[graph]``) are flattened.
    """
    model_kwargs, train_kwargs = {}, {}
    for name, value in _flatten(raw):
        key = _key(name)
        if key in _MODEL_KEYS:
            model_kwargs[_MODEL_KEYS[key]] = value
        elif key in _TRAIN_KEYS:
            train_kwargs[_TRAIN_KEYS[key]] = value
        elif key not in _IGNORED_KEYS:
            raise ConfigError(f"unknown config key {name!r}")
    try:
        return model_kwargs, TrainConfig(**train_kwargs)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def load_config(path):
    path = str(path)
    try:
        if path.endswith(".toml"):
            with open(path, "rb") as fh:
                raw = tomllib.load(fh)
        else:
            with open(path, encoding="utf-8") as fh:
                raw = json.load(fh)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(raw)


# -- checkpoints ---------------------------------------------------------------------


@dataclass
class Checkpoint:
    config: EncoderConfig
    params: dict
    vocab: Vocabulary
    label_space: list
    threshold: float = 0.5
    epoch: int = 0

    def classifier(self, encoder=None):
        return Classifier(self.config, self.params, self.vocab, encoder)

    def save(self, path):
        meta = {
            "config": self.config.to_dict(),
            "epoch": self.epoch,
            "label_space": list(self.label_space),
            "threshold": self.threshold,
            "vocab": list(self.vocab.tokens),
        }
        save_tensors(path, dict(sorted(self.params.items())), meta)

    @classmethod
    def load(cls, path):
        tensors, meta = load_tensors(path)
        try:
            config = EncoderConfig.from_dict(meta["config"])
            vocab = Vocabulary.from_list(meta["vocab"])
            return cls(config, tensors, vocab, list(meta["label_space"]), float(meta["threshold"]), int(meta["epoch"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise CheckpointError(f"{path}: bad checkpoint metadata ({exc})") from None


# -- logs ------------------------------------------------------------------------------------


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    dev: dict | None
    seconds: float = 0.0

    def to_record(self, timing=False):
        rec = {"epoch": self.epoch, "loss": self.loss, "dev": self.dev}
        if timing:
            rec["seconds"] = self.seconds
        return rec


@dataclass
class TrainLog:
    epochs: list = field(default_factory=list)

    @property
    def losses(self):
        return [e.loss for e in self.epochs]

    def to_json_lines(self, timing=False):
        """One JSON object per epoch. Timings are off by default so reruns are byte-identical."""
        return "".join(json.dumps(e.to_record(timing), sort_keys=True) + "\n" for e in self.epochs)


@dataclass
class TrainResult:
    best: Checkpoint
    final: Checkpoint
    log: TrainLog


# -- helpers --------------------------------------------------------------------------------


def assign_codes(p, threshold=0.5):
    """Indices whose probability strictly exceeds ``threshold``."""
    if not 0.0 < threshold < 1.0:
        raise ValidationError(f"threshold must lie in (0, 1), got {threshold}")
    return {int(i) for i in np.flatnonzero(np.asarray(p) > threshold)}


def label_matrix(corpus, doc_ids, label_space=None):
    label_space = corpus.label_space if label_space is None else label_space
    index = {code: j for j, code in enumerate(label_space)}
    docs = {d.doc_id: d for d in corpus.documents}
    y = np.zeros((len(doc_ids), len(label_space)))
    for i, doc_id in enumerate(doc_ids):
        for code in docs[doc_id].labels:
            if code in index:
                y[i, index[code]] = 1.0
    return y


def build_vocabulary(corpus, graphs, doc_ids):
    tokens = set()
    for doc_id in doc_ids:
        tokens.update(corpus.token_sequences[doc_id])
        for node in graphs[doc_id].nodes:
            tokens.update(node.tokens)
    return Vocabulary(tokens)


def predict_split(classifier, examples):
    if not examples:
        return np.zeros((0, classifier.config.label_count))
    return np.stack([classifier.predict_proba(ex) for ex in examples])


def _snapshot(classifier, label_space, threshold, epoch):
    params = {k: v.copy() for k, v in classifier.params.items()}
    return Checkpoint(classifier.config, params, classifier.vocab, list(label_space), threshold, epoch)


class Adam:
    def __init__(self, params):
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params, grads, lr):
        self.t += 1
        b1, b2 = ADAM_BETAS
        c1 = 1.0 - b1**self.t
        c2 = 1.0 - b2**self.t
        for name in sorted(params):
            g = grads[name]
            self.m[name] = b1 * self.m[name] + (1.0 - b1) * g
            self.v[name] = b2 * self.v[name] + (1.0 - b2) * (g * g)
            params[name] -= lr * (self.m[name] / c1) / (np.sqrt(self.v[name] / c2) + ADAM_EPS)


# -- training ----------------------------------------------------------------------------------


def train(corpus, graphs, model_config, train_config, encoder=None):
    """Fit a classifier on the train split, scoring the dev split after every epoch.

    ``model_config`` is an :class:`EncoderConfig` or a dict of its fields
    without ``label_count`` (taken from the corpus). Returns a
    :class:`TrainResult` whose ``best`` checkpoint has the highest dev macro-F1
    (the final epoch when there is no dev split).
    """
    train_ids = corpus.split_ids("train")
    if not train_ids:
        raise ValidationError("corpus has no training documents")
    if not corpus.label_space:
        raise ValidationError("corpus has an empty label space")
    dev_ids = corpus.split_ids("dev")
    if isinstance(model_config, dict):
        model_config = EncoderConfig(label_count=len(corpus.label_space), **model_config)
    if model_config.label_count != len(corpus.label_space):
        raise ConfigError(
            f"model has {model_config.label_count} labels, corpus has {len(corpus.label_space)}"
        )

    rng = np.random.default_rng(train_config.seed)
    vocab = build_vocabulary(corpus, graphs, train_ids)
    model = Classifier.initialize(model_config, vocab, rng, encoder)
    optimizer = Adam(model.params)

    def examples(ids):
        return [model.prepare(corpus.token_sequences[i], graphs[i]) for i in ids]

    train_examples = examples(train_ids)
    y_train = label_matrix(corpus, train_ids)
    dev_examples = examples(dev_ids)
    y_dev = label_matrix(corpus, dev_ids)
    k = min(train_config.k, model_config.label_count)
    per_update = train_config.batch_size * train_config.gradient_accumulation_steps

    result_log = TrainLog()
    best, best_score = None, -math.inf
    for epoch in range(1, train_config.epochs + 1):
        started = time.perf_counter()
        order = rng.permutation(len(train_ids))
        losses = []
        acc = None
        pending = 0
        for pos, i in enumerate(order):
            try:
                with np.errstate(over="ignore", invalid="ignore"):
                    loss, grads = model.loss_and_grads(train_examples[i], y_train[i])
                finite = math.isfinite(loss) and all(np.all(np.isfinite(g)) for g in grads.values())
            except NonFiniteError:
                loss, finite = float("nan"), False
            if not finite:
                raise DivergenceError(
                    f"non-finite loss/gradient at epoch {epoch} on document {train_ids[i]!r} (loss={loss})",
                    epoch=epoch,
                    doc_id=train_ids[i],
                )
            losses.append(loss)
            acc = grads if acc is None else {n: acc[n] + grads[n] for n in acc}
            pending += 1
            if pending == per_update or pos == len(order) - 1:
                lr = train_config.learning_rate_at(optimizer.t + 1)
                optimizer.step(model.params, {n: g / pending for n, g in acc.items()}, lr)
                acc, pending = None, 0

        dev_report = None
        if dev_ids:
            dev_report = evaluate_predictions(y_dev, predict_split(model, dev_examples), k, train_config.threshold)
        record = EpochRecord(epoch, math.fsum(losses) / len(losses), dev_report.to_dict() if dev_report else None)
        record.seconds = time.perf_counter() - started
        result_log.epochs.append(record)
        log.info("epoch %d loss %.6f%s", epoch, record.loss, f" dev {dev_report.to_dict()}" if dev_report else "")

        score = dev_report.macro_f1 if dev_report else -epoch
        if dev_report is None or score > best_score:
            best_score = score
            best = _snapshot(model, corpus.label_space, train_config.threshold, epoch)

    final = _snapshot(model, corpus.label_space, train_config.threshold, train_config.epochs)
    if dev_ids:
        return TrainResult(best, final, result_log)
    return TrainResult(final, final, result_log)


def evaluate(checkpoint, corpus, graphs, split, k, encoder=None):
    """Run the checkpoint over one split and score it; returns (MetricsReport, probabilities)."""
    if list(checkpoint.label_space) != list(corpus.label_space):
        raise CheckpointError(
            f"checkpoint label space ({len(checkpoint.label_space)} codes) does not match "
            f"the corpus ({len(corpus.label_space)} codes)"
        )
    if not 1 <= k <= len(corpus.label_space):
        raise ValidationError(f"k must be in [1, {len(corpus.label_space)}], got {k}")
    ids = corpus.split_ids(split)
    if not ids:
        raise ValidationError(f"split {split!r} has no documents")
    model = checkpoint.classifier(encoder)
    examples = [model.prepare(corpus.token_sequences[i], graphs[i]) for i in ids]
    probs = predict_split(model, examples)
    report = evaluate_predictions(label_matrix(corpus, ids), probs, k, checkpoint.threshold)
    return report, probs
