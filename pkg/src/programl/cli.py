"""Command line front end.

Subcommands::

    build       IR files -> graphs.jsonl (+ .dot files with --format dot)
    dataset     graphs.jsonl -> labeled instances, manifest, report
    train       dataset dir -> checkpoint.npz, train_log.csv
    eval        checkpoint + dataset dir -> metrics table
    stats       graphs.jsonl -> corpus statistics
    export-dot  graphs.jsonl -> one .dot file per graph
    synth       write a generated corpus of IR files

Every run writes ``run.json`` (resolved flags, tool version, timings) into
``--out``; all other outputs are deterministic.  The default of
``--threads`` comes from the PROGRAML_THREADS environment variable.

Exit codes: 0 ok, 1 input error, 2 training divergence.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import shutil
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import AnalysisTask
from .dataset import CorpusTooSmall, SPLITS, generate_dataset, read_instances, write_instances
from .graph import BuildError, build_graph, corpus_stats, export_dot, graph_from_record, graph_to_json, read_graphs, stats
from .ir import IRSyntaxError, ValidationError, parse_ir
from .model import ModelConfig, NonFiniteLoss
from .training import Checkpoint, evaluate, train
from .vocab import Vocabulary, build_vocab

THREADS_ENV = "PROGRAML_THREADS"
EXIT_OK, EXIT_INPUT, EXIT_DIVERGED = 0, 1, 2


class InputError(Exception):
    pass


def _default_threads() -> int:
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


def _collect_ir_files(paths: list[str]) -> list[Path]:
    files = []
    for p in map(Path, paths):
        if p.is_dir():
            files.extend(sorted(q for q in p.rglob("*.ll") if q.is_file()))
        elif p.is_file():
            files.append(p)
        else:
            raise InputError(f"no such file or directory: {p}")
    return sorted(set(files), key=str)


def _build_one(path: str):
    """Worker: returns (path, graph json or None, error or None, seconds)."""
    start = time.perf_counter()
    try:
        source = Path(path).read_bytes()
        graph = build_graph(parse_ir(source, path=path))
        return path, graph_to_json(graph), None, time.perf_counter() - start
    except (IRSyntaxError, ValidationError, BuildError, OSError, UnicodeDecodeError) as err:
        return path, None, str(err), time.perf_counter() - start


def _load_graphs(path: Path) -> list:
    if not path.is_file():
        raise InputError(f"graph file not found: {path}")
    return list(read_graphs(path))


def _dot_name(source_path: str, index: int) -> str:
    stem = Path(source_path).stem or "graph"
    safe = "".join(c if c.isalnum() or c in "-_." else "_" for c in stem)
    return f"{index:05d}_{safe}.dot"


def _write_dots(graphs, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    for i, g in enumerate(graphs):
        (out_dir / _dot_name(g.source_path, i)).write_text(export_dot(g), encoding="utf-8")


# --------------------------------------------------------------------------
# Commands

def cmd_build(args, out: Path, timings: dict) -> int:
    files = [str(f) for f in _collect_ir_files(args.paths)]
    if not files:
        raise InputError("no IR files found")
    if args.threads > 1 and len(files) > 1:
        with ProcessPoolExecutor(max_workers=args.threads) as pool:
            results = list(pool.map(_build_one, files, chunksize=16))
    else:
        results = [_build_one(f) for f in files]
    ok = [(p, g) for p, g, err, _ in results if g is not None]
    failures = [{"path": p, "error": err} for p, _, err, _ in results if err is not None]
    with open(out / "graphs.jsonl", "w", encoding="utf-8") as f:
        for _, g in ok:
            f.write(g + "\n")
    graphs = [graph_from_record(json.loads(g)) for _, g in ok]
    summary = {
        "files": len(files),
        "built": len(ok),
        "failed": len(failures),
        "failures": failures,
        "corpus": corpus_stats(graphs),
        "graphs": [{"path": g.source_path, **stats(g).as_dict()} for g in graphs],
    }
    (out / "build_stats.json").write_text(json.dumps(summary, indent=1) + "\n", encoding="utf-8")
    per_file = {p: round(t * 1000, 3) for p, _, _, t in results}
    timings["build_ms_per_file"] = per_file
    if per_file:
        timings["build_ms_median"] = float(np.median(list(per_file.values())))
    if args.format == "dot":
        _write_dots(graphs, out / "dot")
    for fail in failures:
        print(f"error: {fail['error']}", file=sys.stderr)
    print(f"built {len(ok)} of {len(files)} files ({len(failures)} failed)")
    return EXIT_OK if ok else EXIT_INPUT


def _parse_tasks(text: str) -> list[AnalysisTask]:
    by_name = {t.value.lower(): t for t in AnalysisTask}
    tasks = []
    for name in filter(None, (s.strip() for s in text.split(","))):
        if name.lower() not in by_name:
            raise InputError(f"unknown task {name!r}; choose from {', '.join(t.value for t in AnalysisTask)}")
        tasks.append(by_name[name.lower()])
    if not tasks:
        raise InputError("no tasks given")
    return tasks


def cmd_dataset(args, out: Path, timings: dict) -> int:
    graph_file = Path(args.graphs)
    graphs = _load_graphs(graph_file)
    paths = [g.source_path for g in graphs]
    if len(set(paths)) != len(paths):
        raise InputError("graph file contains duplicate source paths")
    tasks = _parse_tasks(args.tasks)
    manifest, instances, report = generate_dataset(graphs, tasks, args.seed, args.timesteps,
                                                   args.filter_test_only)
    if graph_file.resolve() != (out / "graphs.jsonl").resolve():
        shutil.copyfile(graph_file, out / "graphs.jsonl")
    write_instances(out / "instances.jsonl", instances)
    manifest_data = json.loads(manifest.to_json())
    manifest_data.update({"graphs": "graphs.jsonl", "timesteps": args.timesteps,
                          "tasks": [t.value for t in tasks], "filter_test_only": args.filter_test_only})
    (out / "manifest.json").write_text(json.dumps(manifest_data, indent=1) + "\n", encoding="utf-8")
    (out / "report.json").write_text(json.dumps(report, indent=1) + "\n", encoding="utf-8")
    print(f"splits (train/val/test files): {'/'.join(map(str, manifest.sizes()))}")
    print(f"{'task':<16}{'instances':>10}{'excluded':>10}{'excl/inst':>11}{'excl/graph':>11}{'positive':>10}")
    for task, r in report.items():
        print(f"{task:<16}{r['instances']:>10}{r['excluded']:>10}{r['exclusion_per_instance']:>11.4f}"
              f"{r['exclusion_per_graph']:>11.4f}{r['class_balance']:>10.4f}")
    return EXIT_OK


def _load_dataset(directory: Path, task: AnalysisTask | None = None):
    manifest_path = directory / "manifest.json"
    if not manifest_path.is_file():
        raise InputError(f"no manifest.json in {directory}")
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    graphs = {g.source_path: g for g in _load_graphs(directory / manifest.get("graphs", "graphs.jsonl"))}
    instances = read_instances(directory / "instances.jsonl", graphs)
    if task is not None:
        instances = [i for i in instances if i.task is task]
    return manifest, graphs, instances


def _model_config(args) -> ModelConfig:
    return ModelConfig(
        embed_dim=args.embed_dim, timesteps=args.timesteps, learning_rate=args.lr,
        batch_vertices=args.batch_vertices, max_epoch_graphs=args.max_epoch_graphs, epochs=args.epochs,
        checkpoint_graphs=args.checkpoint_graphs, val_graphs=args.val_graphs, max_seconds=args.max_seconds,
        seed=args.seed, selector_scale=args.selector_scale, dtype=args.dtype,
    )


def cmd_train(args, out: Path, timings: dict) -> int:
    task = _parse_tasks(args.task)[0]
    _, graphs, instances = _load_dataset(Path(args.dataset), task)
    train_set = [i for i in instances if i.split == "train"]
    val_set = [i for i in instances if i.split == "val"]
    if not train_set:
        raise InputError(f"no training instances for {task.value}")
    train_graphs = {i.path: i.graph for i in train_set}
    vocab = build_vocab([train_graphs[p] for p in sorted(train_graphs)], args.min_count)
    vocab.save(out / "vocab.tsv")
    config = _model_config(args)
    try:
        result = train(train_set, val_set, vocab, config, log_path=out / "train_log.csv",
                       progress=None if args.quiet else lambda row: print(
                           f"checkpoint {row['checkpoint']}: graphs {row['graphs_seen']} loss {row['loss']:.4f} "
                           f"val P {row['val_precision']:.4f} R {row['val_recall']:.4f} F1 {row['val_f1']:.4f}"))
    except NonFiniteLoss as err:
        err.checkpoint.metadata["task"] = task.value
        err.checkpoint.save(out / "checkpoint.npz")
        print(f"error: training diverged after {getattr(err, 'graphs_seen', '?')} graphs: {err}", file=sys.stderr)
        return EXIT_DIVERGED
    result.checkpoint.metadata["task"] = task.value
    result.checkpoint.save(out / "checkpoint.npz")
    timings["train_graphs"] = result.graphs_seen
    best = result.best_val
    if best is not None:
        print(f"best val: P {best.precision:.4f} R {best.recall:.4f} F1 {best.f1:.4f} "
              f"({result.checkpoint.graphs_seen} graphs)")
    return EXIT_OK


def cmd_eval(args, out: Path, timings: dict) -> int:
    ckpt_path = Path(args.checkpoint)
    if not ckpt_path.is_file():
        raise InputError(f"checkpoint not found: {ckpt_path}")
    ckpt = Checkpoint.load(ckpt_path)
    task_name = args.task or ckpt.metadata.get("task")
    if not task_name:
        raise InputError("checkpoint has no task; pass --task")
    task = _parse_tasks(task_name)[0]
    _, _, instances = _load_dataset(Path(args.dataset), task)
    instances = [i for i in instances if i.split == args.split]
    vocab = Vocabulary.from_tokens(ckpt.vocab_tokens)
    metrics = evaluate(ckpt.params, ckpt.config, instances, vocab)
    conf = metrics.confusion_ratios()
    print(f"{task.value} on {args.split} ({len(instances)} instances, {metrics.total} vertices)")
    print(f"{'precision':>10}{'recall':>10}{'f1':>10}")
    print(f"{metrics.precision:>10.4f}{metrics.recall:>10.4f}{metrics.f1:>10.4f}")
    print(f"{'':>12}{'pred 0':>10}{'pred 1':>10}")
    print(f"{'true 0':>12}{conf['tn']:>10.4f}{conf['fp']:>10.4f}")
    print(f"{'true 1':>12}{conf['fn']:>10.4f}{conf['tp']:>10.4f}")
    if metrics.zero_division:
        print("note: a ratio had a zero denominator and was reported as 0")
    with open(out / "metrics.csv", "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["task", "split", "instances", "precision", "recall", "f1", "accuracy",
                    "tp", "fp", "tn", "fn", "zero_division"])
        w.writerow([task.value, args.split, len(instances), f"{metrics.precision:.6f}",
                    f"{metrics.recall:.6f}", f"{metrics.f1:.6f}", f"{metrics.accuracy:.6f}",
                    metrics.tp, metrics.fp, metrics.tn, metrics.fn, int(metrics.zero_division)])
    (out / "metrics.json").write_text(json.dumps({"task": task.value, "split": args.split,
                                                  **metrics.to_dict()}, indent=1) + "\n", encoding="utf-8")
    return EXIT_OK


def cmd_stats(args, out: Path, timings: dict) -> int:
    graphs = _load_graphs(Path(args.graphs))
    summary = corpus_stats(graphs)
    kinds: dict[str, int] = {}
    flows: dict[str, int] = {}
    for g in graphs:
        s = stats(g)
        for k, n in s.vertex_kinds.items():
            kinds[k] = kinds.get(k, 0) + n
        for k, n in s.edge_flows.items():
            flows[k] = flows.get(k, 0) + n
    summary.update({"vertex_kinds": kinds, "edge_flows": flows})
    (out / "stats.json").write_text(json.dumps(summary, indent=1) + "\n", encoding="utf-8")
    print(json.dumps(summary, indent=1))
    return EXIT_OK


def cmd_export_dot(args, out: Path, timings: dict) -> int:
    graphs = _load_graphs(Path(args.graphs))
    _write_dots(graphs, out)
    print(f"wrote {len(graphs)} dot files to {out}")
    return EXIT_OK


def cmd_synth(args, out: Path, timings: dict) -> int:
    from .synth import structured_program

    rng = np.random.default_rng(args.seed)
    width = len(str(max(args.count - 1, 1)))
    for i in range(args.count):
        (out / f"prog{i:0{width}d}.ll").write_text(structured_program(rng, size=args.size), encoding="utf-8")
    print(f"wrote {args.count} programs to {out}")
    return EXIT_OK


COMMANDS = {
    "build": cmd_build, "dataset": cmd_dataset, "train": cmd_train, "eval": cmd_eval,
    "stats": cmd_stats, "export-dot": cmd_export_dot, "synth": cmd_synth,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--threads", type=int, default=_default_threads(),
                        help=f"worker processes (default from ${THREADS_ENV}, else 1)")
    common.add_argument("--out", default=".", help="output directory")
    common.add_argument("--format", choices=("jsonl", "dot"), default="jsonl")

    parser = argparse.ArgumentParser(prog="programl", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build", parents=[common], help="parse IR files into graphs")
    p.add_argument("paths", nargs="+", help=".ll files or directories searched recursively")

    p = sub.add_parser("dataset", parents=[common], help="label graphs and split the corpus")
    p.add_argument("graphs", help="graphs.jsonl from build")
    p.add_argument("--tasks", default=",".join(t.value for t in AnalysisTask))
    p.add_argument("--timesteps", type=int, default=30, help="drop instances needing more steps")
    p.add_argument("--filter-test-only", action="store_true",
                   help="apply the step filter to the test split only")

    p = sub.add_parser("train", parents=[common], help="train a model on one task")
    p.add_argument("dataset", help="directory written by the dataset command")
    p.add_argument("--task", required=True)
    p.add_argument("--embed-dim", type=int, default=32)
    p.add_argument("--timesteps", type=int, default=30)
    p.add_argument("--lr", type=float, default=0.001)
    p.add_argument("--batch-vertices", type=int, default=4096)
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--max-epoch-graphs", type=int, default=0)
    p.add_argument("--checkpoint-graphs", type=int, default=10_000)
    p.add_argument("--val-graphs", type=int, default=20_000)
    p.add_argument("--max-seconds", type=float, default=0.0)
    p.add_argument("--selector-scale", type=float, default=50.0)
    p.add_argument("--min-count", type=int, default=1)
    p.add_argument("--dtype", choices=("float32", "float64"), default="float32")
    p.add_argument("--quiet", action="store_true")

    p = sub.add_parser("eval", parents=[common], help="score a checkpoint on a split")
    p.add_argument("checkpoint")
    p.add_argument("dataset")
    p.add_argument("--split", choices=SPLITS, default="test")
    p.add_argument("--task", default=None, help="defaults to the checkpoint's task")

    p = sub.add_parser("stats", parents=[common], help="corpus statistics")
    p.add_argument("graphs")

    p = sub.add_parser("export-dot", parents=[common], help="write Graphviz files")
    p.add_argument("graphs")

    p = sub.add_parser("synth", parents=[common], help="write generated IR programs")
    p.add_argument("--count", type=int, default=100)
    p.add_argument("--size", type=int, default=24, help="approximate instructions per program")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    timings: dict = {}
    started = datetime.now(timezone.utc)
    t0 = time.perf_counter()
    try:
        code = COMMANDS[args.command](args, out, timings)
    except (InputError, CorpusTooSmall, FileNotFoundError, IRSyntaxError, ValidationError,
            json.JSONDecodeError, KeyError, ValueError) as err:
        print(f"error: {err}", file=sys.stderr)
        code = EXIT_INPUT
    run = {
        "tool": "programl",
        "version": __version__,
        "command": args.command,
        "config": {k: v for k, v in sorted(vars(args).items())},
        "threads_env": THREADS_ENV,
        "exit_code": code,
        "started": started.isoformat(),
        "seconds": round(time.perf_counter() - t0, 3),
        "timings": timings,
    }
    (out / "run.json").write_text(json.dumps(run, indent=1, default=str) + "\n", encoding="utf-8")
    return code


if __name__ == "__main__":
    raise SystemExit(main())
