"""Training loop, evaluation metrics and checkpoint files."""

from __future__ import annotations

import csv
import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .dataset import LabeledInstance
from .model import (
    PARAM_NAMES, Adam, EncodedGraph, GraphBatch, ModelConfig, ModelParameters, NonFiniteLoss,
    ShapeError,
    check_shapes, encode_graph, init_params, loss_and_grads, predict_proba,
)
from .vocab import Vocabulary

CHECKPOINT_VERSION = 1
LOG_COLUMNS = ("checkpoint", "graphs_seen", "loss", "val_precision", "val_recall", "val_f1")


@dataclass
class Metrics:
    precision: float
    recall: float
    f1: float
    accuracy: float
    tp: int
    fp: int
    tn: int
    fn: int
    zero_division: bool = False

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    def confusion_ratios(self) -> dict[str, float]:
        """Each confusion cell as a fraction of all predictions."""
        n = self.total or 1
        return {"tp": self.tp / n, "fp": self.fp / n, "tn": self.tn / n, "fn": self.fn / n}

    def to_dict(self) -> dict:
        d = asdict(self)
        d["confusion"] = self.confusion_ratios()
        return d


def binary_metrics(y_true: np.ndarray, y_pred: np.ndarray) -> Metrics:
    """Positive-class precision, recall and F1.  Undefined ratios are 0 and
    set ``zero_division``."""
    y_true = np.asarray(y_true, dtype=bool)
    y_pred = np.asarray(y_pred, dtype=bool)
    tp = int(np.sum(y_true & y_pred))
    fp = int(np.sum(~y_true & y_pred))
    fn = int(np.sum(y_true & ~y_pred))
    tn = int(np.sum(~y_true & ~y_pred))
    zero = False
    if tp + fp:
        precision = tp / (tp + fp)
    else:
        precision, zero = 0.0, True
    if tp + fn:
        recall = tp / (tp + fn)
    else:
        recall, zero = 0.0, True
    if precision + recall:
        f1 = 2 * precision * recall / (precision + recall)
    else:
        f1, zero = 0.0, True
    n = tp + fp + fn + tn
    accuracy = (tp + tn) / n if n else 0.0
    return Metrics(precision, recall, f1, accuracy, tp, fp, tn, fn, zero)


@dataclass
class Checkpoint:
    config: ModelConfig
    params: ModelParameters
    vocab_tokens: list[str]
    graphs_seen: int = 0
    metadata: dict = field(default_factory=dict)

    def save(self, path: str | Path) -> None:
        header = {
            "version": CHECKPOINT_VERSION,
            "config": json.loads(self.config.to_json()),
            "vocab": self.vocab_tokens,
            "graphs_seen": self.graphs_seen,
            "metadata": self.metadata,
        }
        arrays = {f"param_{k}": v for k, v in self.params.items()}
        with open(path, "wb") as f:
            np.savez(f, header=np.array(json.dumps(header, sort_keys=True)), **arrays)

    @classmethod
    def load(cls, path: str | Path) -> Checkpoint:
        with np.load(path, allow_pickle=False) as data:
            header = json.loads(str(data["header"]))
            if header.get("version") != CHECKPOINT_VERSION:
                raise ValueError(f"unsupported checkpoint version {header.get('version')}")
            params = ModelParameters({k: data[f"param_{k}"].copy() for k in PARAM_NAMES})
        config = ModelConfig(**header["config"])
        check_shapes(params, config)
        if params.vocab_size != len(header["vocab"]):
            raise ShapeError("embedding rows do not match the stored vocabulary")
        return cls(config, params, header["vocab"], header["graphs_seen"], header["metadata"])


class _Encoder:
    """Encodes each distinct graph once."""

    def __init__(self, vocab: Vocabulary):
        self.vocab = vocab
        self.cache: dict[int, EncodedGraph] = {}

    def part(self, inst: LabeledInstance):
        key = id(inst.graph)
        enc = self.cache.get(key)
        if enc is None:
            enc = self.cache[key] = encode_graph(inst.graph, self.vocab)
        mask = inst.__dict__.get("_eligible")
        if mask is None:
            mask = inst.__dict__["_eligible"] = inst.eligible()
        return enc, inst.root, inst.labels, mask


def make_batches(instances: Sequence[LabeledInstance], order: Sequence[int], batch_vertices: int,
                 encoder: _Encoder) -> list[tuple[GraphBatch, int]]:
    """Pack instances in ``order`` into batches of at most ``batch_vertices``
    vertices (a single larger graph gets a batch of its own)."""
    batches = []
    parts: list = []
    size = 0
    for i in order:
        part = encoder.part(instances[i])
        n = part[0].num_vertices
        if parts and size + n > batch_vertices:
            batches.append((GraphBatch.from_parts(parts), len(parts)))
            parts, size = [], 0
        parts.append(part)
        size += n
    if parts:
        batches.append((GraphBatch.from_parts(parts), len(parts)))
    return batches


def evaluate(params: ModelParameters, config: ModelConfig, instances: Sequence[LabeledInstance],
             vocab: Vocabulary, encoder: _Encoder | None = None) -> Metrics:
    encoder = encoder or _Encoder(vocab)
    y_true, y_pred = [], []
    for batch, _ in make_batches(instances, range(len(instances)), config.batch_vertices, encoder):
        proba = predict_proba(batch, params, config)
        mask = batch.eligible
        y_true.append(batch.labels[mask] == 1)
        y_pred.append(proba[mask, 1] > proba[mask, 0])
    if not y_true:
        return binary_metrics(np.zeros(0, bool), np.zeros(0, bool))
    return binary_metrics(np.concatenate(y_true), np.concatenate(y_pred))


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    best_val: Metrics | None
    log: list[dict]
    graphs_seen: int
    stopped: str


def train(train_set: Sequence[LabeledInstance], val_set: Sequence[LabeledInstance], vocab: Vocabulary,
          config: ModelConfig, log_path: str | Path | None = None,
          progress: Callable[[dict], None] | None = None) -> TrainResult:
    """Adam on mean per-vertex cross-entropy.  Every ``checkpoint_graphs``
    training graphs the model is scored on (up to ``val_graphs``) validation
    instances; the parameters with the best validation accuracy are kept."""
    if not train_set:
        raise ValueError("empty training set")
    rng = np.random.default_rng(config.seed)
    params = init_params(config, vocab.size)
    opt = Adam(params, lr=config.learning_rate)
    encoder = _Encoder(vocab)
    val = list(val_set)
    if len(val) > config.val_graphs:
        val = [val[i] for i in sorted(rng.choice(len(val), config.val_graphs, replace=False))]

    start = time.monotonic()
    log: list[dict] = []
    best: tuple[float, ModelParameters, Metrics, int] | None = None
    graphs_seen = 0
    next_checkpoint = config.checkpoint_graphs
    losses: list[float] = []
    stopped = "epochs"

    def checkpoint() -> bool:
        nonlocal best, losses
        metrics = evaluate(params, config, val, vocab, encoder) if val else None
        row = {
            "checkpoint": len(log),
            "graphs_seen": graphs_seen,
            "loss": float(np.mean(losses)) if losses else float("nan"),
            "val_precision": metrics.precision if metrics else float("nan"),
            "val_recall": metrics.recall if metrics else float("nan"),
            "val_f1": metrics.f1 if metrics else float("nan"),
        }
        log.append(row)
        if progress:
            progress(row)
        losses = []
        acc = metrics.accuracy if metrics else -row["loss"]
        if best is None or acc > best[0]:
            best = (acc, params.copy(), metrics, graphs_seen)
        return metrics is not None and metrics.accuracy >= config.target_accuracy

    def out_of_time() -> bool:
        return config.max_seconds > 0 and time.monotonic() - start > config.max_seconds

    done = False
    for _ in range(config.epochs):
        order = rng.permutation(len(train_set))
        if config.max_epoch_graphs:
            order = order[:config.max_epoch_graphs]
        for batch, count in make_batches(train_set, order, config.batch_vertices, encoder):
            try:
                loss, grads = loss_and_grads(batch, params, config)
            except NonFiniteLoss as err:
                good = best[1] if best else init_params(config, vocab.size)
                err.checkpoint = Checkpoint(config, good, vocab.tokens(), best[3] if best else 0,
                                            {"stopped": "diverged", "graphs_trained": graphs_seen})
                err.graphs_seen = graphs_seen
                raise
            opt.step(params, grads)
            losses.append(loss)
            graphs_seen += count
            if graphs_seen >= next_checkpoint:
                next_checkpoint += config.checkpoint_graphs
                if checkpoint():
                    done, stopped = True, "target_accuracy"
            if not done and out_of_time():
                done, stopped = True, "max_seconds"
            if done:
                break
        if done:
            break
    if losses or not log:
        checkpoint()

    _, best_params, best_metrics, best_seen = best
    if log_path is not None:
        write_log(log_path, log)
    ckpt = Checkpoint(config, best_params, vocab.tokens(), best_seen,
                      {"stopped": stopped, "graphs_trained": graphs_seen})
    return TrainResult(ckpt, best_metrics, log, graphs_seen, stopped)


def write_log(path: str | Path, rows: Sequence[dict]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(f, fieldnames=LOG_COLUMNS)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: (f"{v:.6f}" if isinstance(v, float) else v) for k, v in row.items()})
