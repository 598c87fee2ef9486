import json

import numpy as np
import pytest

from programl.analysis import AnalysisTask
from programl.dataset import generate_dataset, make_instances
from programl.graph import build_graph
from programl.ir import parse_ir
from programl.model import ModelConfig, NonFiniteLoss, ShapeError, init_params
from programl.synth import structured_program
from programl.training import (
    CHECKPOINT_VERSION, Checkpoint, binary_metrics, evaluate, train, write_log,
)
from programl.vocab import build_vocab

FAST = ModelConfig(embed_dim=8, timesteps=6, learning_rate=0.01, checkpoint_graphs=25,
                   batch_vertices=512, epochs=2)


def small_dataset(n=25, seed=0, task=AnalysisTask.REACHABILITY):
    rng = np.random.default_rng(seed)
    graphs = [build_graph(parse_ir(structured_program(rng), path=f"p{i}.ll")) for i in range(n)]
    manifest, instances, _ = generate_dataset(graphs, [task], seed=seed, T=30)
    split = manifest.split_of()
    vocab = build_vocab([g for g in graphs if split[g.source_path] == "train"])
    by = {s: [i for i in instances if i.split == s] for s in ("train", "val", "test")}
    return vocab, by


def test_binary_metrics_examples():
    m = binary_metrics(np.array([1, 1, 0, 0, 1]), np.array([1, 0, 1, 0, 1]))
    assert (m.tp, m.fp, m.tn, m.fn) == (2, 1, 1, 1)
    assert m.precision == pytest.approx(2 / 3) and m.recall == pytest.approx(2 / 3)
    assert m.f1 == pytest.approx(2 / 3) and m.accuracy == pytest.approx(3 / 5)
    assert sum(m.confusion_ratios().values()) == pytest.approx(1.0)
    none = binary_metrics(np.zeros(4), np.zeros(4))
    assert none.f1 == 0.0 and none.zero_division and none.accuracy == 1.0


def test_evaluate_counts_eligible_vertices():
    vocab, by = small_dataset()
    params = init_params(FAST, vocab.size)
    params["i_b2"][:] = 50.0
    params["j_W2"][:] = 0
    params["j_b2"][:] = [-1.0, 1.0]  # always predict positive
    m = evaluate(params, FAST, by["test"], vocab)
    positives = sum(int(i.labels[i.eligible()].sum()) for i in by["test"])
    eligible = sum(int(i.eligible().sum()) for i in by["test"])
    assert (m.tp, m.fn, m.tn) == (positives, 0, 0)
    assert m.total == eligible
    assert m.recall == 1.0


def test_memorises_single_instance():
    rng = np.random.default_rng(1)
    g = build_graph(parse_ir(structured_program(rng), path="one.ll"))
    inst = make_instances(g, AnalysisTask.REACHABILITY, seed=0)[0]
    vocab = build_vocab([g])
    cfg = ModelConfig(embed_dim=16, timesteps=8, learning_rate=0.01, checkpoint_graphs=50,
                      batch_vertices=50 * len(g.vertices), epochs=100, dtype="float64")
    res = train([inst] * 50, [inst], vocab, cfg)
    assert res.best_val.f1 == 1.0
    assert res.stopped == "target_accuracy"
    assert res.graphs_seen <= 100 * 50  # one step per 50 copies


def test_training_is_deterministic(tmp_path):
    vocab, by = small_dataset()
    a = train(by["train"], by["val"], vocab, FAST, log_path=tmp_path / "a.csv")
    b = train(by["train"], by["val"], vocab, FAST, log_path=tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    for k in a.checkpoint.params.arrays:
        assert np.array_equal(a.checkpoint.params[k], b.checkpoint.params[k])
    header = (tmp_path / "a.csv").read_text().splitlines()[0]
    assert header == "checkpoint,graphs_seen,loss,val_precision,val_recall,val_f1"


def test_best_checkpoint_has_best_validation_accuracy():
    vocab, by = small_dataset()
    res = train(by["train"], by["val"], vocab, FAST)
    again = evaluate(res.checkpoint.params, FAST, by["val"], vocab)
    assert again.accuracy == pytest.approx(res.best_val.accuracy)
    assert len(res.log) >= 2


def test_max_seconds_stops_early():
    vocab, by = small_dataset()
    cfg = ModelConfig(embed_dim=8, timesteps=6, epochs=1000, max_seconds=0.5, checkpoint_graphs=25,
                      batch_vertices=512)
    res = train(by["train"], by["val"], vocab, cfg)
    assert res.stopped == "max_seconds"


def test_divergence_reports_last_good_checkpoint():
    vocab, by = small_dataset()
    cfg = ModelConfig(embed_dim=8, timesteps=2, learning_rate=float("nan"), checkpoint_graphs=5,
                      batch_vertices=64)
    with pytest.raises(NonFiniteLoss) as info:
        train(by["train"], by["val"], vocab, cfg)
    assert info.value.checkpoint.metadata["stopped"] == "diverged"
    assert all(np.all(np.isfinite(a)) for a in info.value.checkpoint.params.arrays.values())


def test_checkpoint_round_trip(tmp_path):
    vocab, _ = small_dataset(10)
    cfg = ModelConfig(embed_dim=8, timesteps=3)
    ckpt = Checkpoint(cfg, init_params(cfg, vocab.size), vocab.tokens(), 42, {"note": "x"})
    path = tmp_path / "c.npz"
    ckpt.save(path)
    back = Checkpoint.load(path)
    assert back.config == cfg and back.vocab_tokens == vocab.tokens() and back.graphs_seen == 42
    for k in ckpt.params.arrays:
        assert np.array_equal(back.params[k], ckpt.params[k])


def test_checkpoint_version_and_shape_errors(tmp_path):
    cfg = ModelConfig(embed_dim=8, timesteps=3)
    params = init_params(cfg, 6)
    Checkpoint(cfg, params, ["t"] * 6).save(tmp_path / "ok.npz")
    with np.load(tmp_path / "ok.npz") as data:
        arrays = {k: data[k] for k in data.files}
    header = json.loads(str(arrays["header"]))
    header["version"] = CHECKPOINT_VERSION + 1
    arrays["header"] = np.array(json.dumps(header))
    np.savez(tmp_path / "new.npz", **arrays)
    with pytest.raises(ValueError, match="version"):
        Checkpoint.load(tmp_path / "new.npz")
    Checkpoint(cfg, params, ["t"] * 5).save(tmp_path / "short.npz")
    with pytest.raises(ShapeError):
        Checkpoint.load(tmp_path / "short.npz")


def test_write_log(tmp_path):
    write_log(tmp_path / "l.csv", [{"checkpoint": 0, "graphs_seen": 3, "loss": 0.5,
                                    "val_precision": 1, "val_recall": 0, "val_f1": 0}])
    assert (tmp_path / "l.csv").read_text().splitlines()[1].startswith("0,3,0.5")
