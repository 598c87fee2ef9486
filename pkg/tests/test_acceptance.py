"""Acceptance suite.  Each test checks one criterion at its stated
tolerance and prints a single PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -v`` (the learning
criterion dominates the runtime, roughly half an hour on one core).
Set ``PROGRAML_ACCEPTANCE_QUICK=1`` to shorten the training budgets for a
smoke run; the thresholds are unchanged, so a quick run may fail
criterion 4.
"""

from __future__ import annotations

import os
import statistics
import time
from pathlib import Path

import numpy as np
import pytest

import oracles
from invariants import check_invariants
from programl.analysis import AnalysisTask, eligible_roots, liveness, run_analysis
from programl.dataset import (
    LabeledInstance, ManifestEntry, filter_by_steps, generate_dataset, root_count, split_corpus,
)
from programl.graph import INSTRUCTION, build_graph
from programl.ir import parse_ir
from programl.model import ModelConfig, init_params, propagate
from programl.synth import loop_nest_program, structured_program
from programl.training import evaluate, train
from programl.vocab import build_vocab
from reference_model import dense_states, finite_difference_errors, permute_batch, random_batch

CORPUS_SIZE = 5000
CORPUS_SEED = 0
QUICK = os.environ.get("PROGRAML_ACCEPTANCE_QUICK") == "1"

# Minimum test F1 and training wall-clock budget (seconds) per task.  The
# budgets stay well inside the 60 CPU-minute limit.
LEARNING = {
    AnalysisTask.REACHABILITY: (0.95, 300),
    AnalysisTask.DATADEP: (0.90, 400),
    AnalysisTask.LIVENESS: (0.90, 400),
    AnalysisTask.SUBEXPRESSIONS: (0.80, 420),
    AnalysisTask.DOMTREE: (0.60, 400),
}
CPU_LIMIT = 60 * 60


def report(capsys, number: int, ok: bool, detail: str) -> None:
    with capsys.disabled():
        print(f"\ncriterion {number}: {'PASS' if ok else 'FAIL'}  {detail}", flush=True)


@pytest.fixture(scope="module")
def desk_corpus():
    """(source, module build time in ms, graph) for every generated program."""
    rng = np.random.default_rng(CORPUS_SEED)
    out = []
    for i in range(CORPUS_SIZE):
        src = structured_program(rng)
        t = time.perf_counter()
        g = build_graph(parse_ir(src, path=f"desk{i:05d}.ll"))
        out.append((src, (time.perf_counter() - t) * 1000, g))
    return out


def test_1_oracle_equivalence(capsys):
    start = time.perf_counter()
    oracle_of = {
        AnalysisTask.REACHABILITY: lambda m, g, r: oracles.reachability(g, r),
        AnalysisTask.DOMTREE: lambda m, g, r: oracles.dominators(g, r),
        AnalysisTask.DATADEP: lambda m, g, r: oracles.datadep(g, r),
        AnalysisTask.LIVENESS: lambda m, g, r: oracles.liveness(g, r),
        AnalysisTask.SUBEXPRESSIONS: oracles.subexpressions,
    }
    mismatches = []
    checked = {t.value: 0 for t in AnalysisTask}
    graphs_with_roots = {t.value: 0 for t in AnalysisTask}
    # draw batches of graphs until every task has been checked on 1000
    # graphs with at least one eligible root
    graphs = []
    while min(graphs_with_roots.values()) < 1000:
        batch = oracles.small_random_graphs(1000, max_vertices=30, seed=1234 + len(graphs))
        graphs.extend(batch)
        _check_oracles(batch, oracle_of, checked, graphs_with_roots, mismatches)
    elapsed = time.perf_counter() - start
    ok = not mismatches and elapsed < 300
    report(capsys, 1, ok, f"{len(graphs)} graphs; graphs with roots {graphs_with_roots}; roots checked "
                          f"{checked}; {len(mismatches)} mismatches; {elapsed:.0f}s")
    assert ok, mismatches[:10]


def _check_oracles(graphs, oracle_of, checked, graphs_with_roots, mismatches):
    for module, g in graphs:
        for task, oracle in oracle_of.items():
            roots = eligible_roots(g, task)
            graphs_with_roots[task.value] += bool(roots)
            for root in roots:
                got = set(run_analysis(task, g, root).positives)
                if got != oracle(module, g, root):
                    mismatches.append((task.value, g.source_path, root))
                checked[task.value] += 1
        # no root the oracle would accept is missing
        keyed = [v.id for v in g.vertices if v.kind == INSTRUCTION and v.function not in g.dummy_functions
                 and len(oracles.subexpressions(module, g, v.id)) >= 2]
        if keyed != eligible_roots(g, AnalysisTask.SUBEXPRESSIONS):
            mismatches.append(("Subexpressions roots", g.source_path, None))


def test_2_graph_invariants(capsys, desk_corpus):
    data_dir = Path(__file__).parent / "data"
    corpus = [(src, g) for src, _, g in desk_corpus]
    for path in sorted(data_dir.glob("*.ll")):
        src = path.read_text()
        try:
            corpus.append((src, build_graph(parse_ir(src, path=str(path)))))
        except ValueError:
            pass  # deliberately broken inputs
    violations = []
    for src, g in corpus:
        try:
            check_invariants(src, g)
        except AssertionError as err:
            violations.append((g.source_path, str(err)))
    ok = not violations
    report(capsys, 2, ok, f"{len(corpus)} graphs, {len(violations)} violations")
    assert ok, violations[:5]


def test_3_gradient_check(capsys):
    rng = np.random.default_rng(3)
    config = ModelConfig(embed_dim=8, timesteps=4, dtype="float64")
    worst: dict[str, float] = {}
    for k in range(10):
        vocab_size = 6
        params = init_params(config, vocab_size, seed=k)
        batch = random_batch(rng, 6, int(rng.integers(5, 13)), vocab_size)
        for name, err in finite_difference_errors(batch, params, config, step=1e-4).items():
            worst[name] = max(worst.get(name, 0.0), err)
    ok = max(worst.values()) <= 1e-4 and len(worst) == len(params.arrays)
    report(capsys, 3, ok, f"10 instances, every coordinate, worst group error {max(worst.values()):.2e} "
                          f"({max(worst, key=worst.get)})")
    assert ok, worst


def _task_run(task, graphs, budget):
    cpu0 = time.process_time()
    manifest, instances, rep = generate_dataset(graphs, [task], seed=CORPUS_SEED, T=30)
    split_of = manifest.split_of()
    by = {s: [i for i in instances if i.split == s] for s in ("train", "val", "test")}
    vocab = build_vocab([g for g in graphs if split_of[g.source_path] == "train"])
    config = ModelConfig(embed_dim=32, timesteps=30, dtype="float32", checkpoint_graphs=2000,
                         val_graphs=1000, epochs=1000, max_seconds=budget, seed=CORPUS_SEED)
    result = train(by["train"], by["val"], vocab, config)
    metrics = evaluate(result.checkpoint.params, config, by["test"], vocab)
    return metrics, time.process_time() - cpu0, result.graphs_seen, len(by["test"])


def test_4_learning_analyses(capsys, desk_corpus):
    graphs = [g for _, _, g in desk_corpus]
    rows, ok = [], True
    for task, (threshold, budget) in LEARNING.items():
        metrics, cpu, seen, n_test = _task_run(task, graphs, 60 if QUICK else budget)
        task_ok = metrics.f1 >= threshold and cpu <= CPU_LIMIT
        ok &= task_ok
        rows.append(f"{task.value} F1 {metrics.f1:.3f} (>= {threshold}, P {metrics.precision:.3f} "
                    f"R {metrics.recall:.3f}, {n_test} test instances, {seen} graphs, {cpu / 60:.1f} CPU min)"
                    f"{'' if task_ok else ' FAIL'}")
    report(capsys, 4, ok, f"{len(graphs)} programs; " + "; ".join(rows))
    assert ok, rows


def test_5_dataset_equations(capsys, desk_corpus):
    problems = []
    for n in range(1, 10_001):
        if root_count(n) != min(int(np.ceil(n / 10)), 10):
            problems.append(("root_count", n))
    for n in range(5, 1001):
        entries = [ManifestEntry(f"f{i}", 1, 0) for i in range(n)]
        train_n, val_n, test_n = split_corpus(entries, seed=n).sizes()
        if train_n + val_n + test_n != n or abs(train_n - 3 * n / 5) > 1 or abs(val_n - n / 5) > 1 \
                or abs(test_n - n / 5) > 1:
            problems.append(("split", n, (train_n, val_n, test_n)))
    graphs = [g for _, _, g in desk_corpus[:1000]]
    manifest, instances, _ = generate_dataset(graphs, list(AnalysisTask), seed=7, T=30)
    split_of = manifest.split_of()
    seen: dict[str, set[str]] = {}
    for inst in instances:
        seen.setdefault(inst.path, set()).add(inst.split)
        if inst.split != split_of[inst.path]:
            problems.append(("crossing", inst.path))
    crossing = [p for p, s in seen.items() if len(s) > 1]
    ok = not problems and not crossing
    report(capsys, 5, ok, f"root_count on 1..10000, splits for 5..1000 files, {len(instances)} instances "
                          f"from {len(seen)} files, {len(problems) + len(crossing)} problems")
    assert ok, problems[:10]


def test_6_step_filter(capsys):
    # every root of shallow nests; a seeded sample of roots for deep ones,
    # which are what push sweep counts past T
    rng = np.random.default_rng(6)
    shapes = [(d, s) for d in range(1, 13) for s in (1, 2, 3)] + [(d, 1) for d in range(13, 41)]
    over_bound = []
    instances = []
    for depth, sequential in shapes:
        g = build_graph(parse_ir(loop_nest_program(depth, sequential), path=f"nest{depth}_{sequential}.ll"))
        roots = [v.id for v in g.vertices if v.kind == INSTRUCTION]
        if depth > 12:
            roots = sorted(rng.choice(roots, size=20, replace=False).tolist())
        for root in roots:
            res = liveness(g, root)
            if res.steps > depth + 3:
                over_bound.append((depth, sequential, root, res.steps))
            instances.append(LabeledInstance(g.source_path, g.digest, AnalysisTask.LIVENESS, root,
                                             res.labels, res.steps))
    kept, excluded = filter_by_steps(instances, T=30)
    exact = {id(i) for i in excluded} == {id(i) for i in instances if i.steps > 30} and \
        len(kept) + len(excluded) == len(instances)
    ok = not over_bound and exact and excluded and kept
    report(capsys, 6, ok, f"{len(instances)} Liveness instances on {len(shapes)} nests of depth 1..40, "
                          f"max steps {max(i.steps for i in instances)}, {len(over_bound)} over d(G)+3, "
                          f"{len(excluded)} excluded at T=30 (exact: {exact})")
    assert ok, over_bound[:10]


def test_7_reference_equivalence(capsys):
    rng = np.random.default_rng(7)
    config = ModelConfig(embed_dim=32, timesteps=8, dtype="float64")
    worst_ref = worst_perm = 0.0
    for k in range(100):
        n = int(rng.integers(1, 31))
        vocab_size = 12
        params = init_params(config, vocab_size, seed=k)
        batch = random_batch(rng, n, int(rng.integers(0, 3 * n + 1)), vocab_size, max_position=4)
        fast = propagate(batch, params, config, return_all=True)
        slow = dense_states(batch, params, config)
        for a, r in zip(fast, slow):
            worst_ref = max(worst_ref, float(np.max(np.abs(a - r)) / max(np.max(np.abs(r)), 1e-300)))
        perm = rng.permutation(n)
        h = fast[-1]
        hp = propagate(permute_batch(batch, perm), params, config)
        worst_perm = max(worst_perm, float(np.max(np.abs(hp[perm] - h)) / max(np.max(np.abs(h)), 1e-300)))
    ok = worst_ref <= 1e-10 and worst_perm <= 1e-10
    report(capsys, 7, ok, f"100 graphs, max relative difference to dense reference {worst_ref:.1e}, "
                          f"under permutation {worst_perm:.1e}")
    assert ok


def test_8_build_throughput(capsys, desk_corpus):
    times = [ms for _, ms, _ in desk_corpus]
    median = statistics.median(times)
    ok = median <= 100.0
    report(capsys, 8, ok, f"median build time {median:.2f} ms over {len(times)} programs "
                          f"(max {max(times):.1f} ms)")
    assert ok
