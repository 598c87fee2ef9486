"""Labeled per-vertex datasets: root sampling, splitting, step filtering."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .analysis import AnalysisTask, eligible_kind, eligible_roots, run_analysis
from .graph import ProgramGraph

SPLITS = ("train", "val", "test")
SPLIT_RATIOS = (3, 1, 1)


class CorpusTooSmall(ValueError):
    pass


@dataclass
class LabeledInstance:
    path: str
    graph_hash: str
    task: AnalysisTask
    root: int
    labels: np.ndarray  # bool per vertex
    steps: int
    split: str = "train"
    graph: ProgramGraph | None = field(default=None, repr=False, compare=False)

    @property
    def selector(self) -> np.ndarray:
        sel = np.zeros(len(self.labels), dtype=np.int8)
        sel[self.root] = 1
        return sel

    def eligible(self) -> np.ndarray:
        """Mask of vertices that carry a label for this task."""
        kind = eligible_kind(self.task)
        return np.array([v.kind == kind for v in self.graph.vertices], dtype=bool)

    def to_record(self) -> dict:
        return {
            "path": self.path,
            "task": self.task.value,
            "root": self.root,
            "selector_root": self.root,
            "labels": np.flatnonzero(self.labels).tolist(),
            "steps": self.steps,
            "split": self.split,
        }

    @classmethod
    def from_record(cls, record: dict, graph: ProgramGraph) -> LabeledInstance:
        labels = np.zeros(len(graph.vertices), dtype=bool)
        labels[record["labels"]] = True
        return cls(record["path"], graph.digest, AnalysisTask(record["task"]), record["root"],
                   labels, record["steps"], record["split"], graph)


@dataclass
class ManifestEntry:
    path: str
    num_vertices: int
    num_edges: int
    split: str = ""


@dataclass
class CorpusManifest:
    entries: list[ManifestEntry]
    seed: int
    ratios: tuple[int, int, int] = SPLIT_RATIOS

    def split_of(self) -> dict[str, str]:
        return {e.path: e.split for e in self.entries}

    def sizes(self) -> tuple[int, int, int]:
        return tuple(sum(e.split == s for e in self.entries) for s in SPLITS)

    def to_json(self) -> str:
        return json.dumps({
            "seed": self.seed,
            "ratios": list(self.ratios),
            "entries": [{"path": e.path, "num_vertices": e.num_vertices,
                         "num_edges": e.num_edges, "split": e.split} for e in self.entries],
        }, indent=1)

    @classmethod
    def from_json(cls, text: str) -> CorpusManifest:
        data = json.loads(text)
        entries = [ManifestEntry(**e) for e in data["entries"]]
        return cls(entries, data["seed"], tuple(data["ratios"]))


def root_count(num_vertices: int) -> int:
    """Number of labeled instances drawn from a graph of this size."""
    if num_vertices < 1:
        raise ValueError("num_vertices must be >= 1")
    return min(-(-num_vertices // 10), 10)


_TASK_INDEX = {t: i for i, t in enumerate(AnalysisTask)}


def _instance_rng(seed: int, graph: ProgramGraph, task: AnalysisTask) -> np.random.Generator:
    return np.random.default_rng([seed & 0xFFFFFFFF, int(graph.digest[:15], 16), _TASK_INDEX[task]])


def make_instances(graph: ProgramGraph, task: AnalysisTask | str, seed: int,
                   split: str = "train") -> list[LabeledInstance]:
    task = AnalysisTask(task)
    roots = eligible_roots(graph, task)
    k = min(root_count(len(graph.vertices)), len(roots))
    if k == 0:
        return []
    rng = _instance_rng(seed, graph, task)
    chosen = rng.choice(len(roots), size=k, replace=False)
    out = []
    for idx in chosen:
        res = run_analysis(task, graph, roots[int(idx)])
        out.append(LabeledInstance(graph.source_path, graph.digest, task, res.root,
                                   res.labels, res.steps, split, graph))
    return out


def split_corpus(entries: Sequence[ManifestEntry], seed: int) -> CorpusManifest:
    """Shuffle files and allocate them 3:1:1.  Rounding remainders go to
    train unless that would leave train more than one file over its share,
    so every split is within one file of its exact proportion."""
    n = len(entries)
    if n < 5:
        raise CorpusTooSmall(f"need at least 5 files to split, got {n}")
    order = np.random.default_rng(seed).permutation(n)
    n_val = (n + 2) // 5
    n_test = (n + 1) // 5
    n_train = n - n_val - n_test
    split_of = {}
    for rank, idx in enumerate(order):
        split_of[int(idx)] = "train" if rank < n_train else "val" if rank < n_train + n_val else "test"
    out = [ManifestEntry(e.path, e.num_vertices, e.num_edges, split_of[i]) for i, e in enumerate(entries)]
    return CorpusManifest(out, seed)


def filter_by_steps(instances: Iterable[LabeledInstance], T: int) -> tuple[list[LabeledInstance], list[LabeledInstance]]:
    if T < 1:
        raise ValueError("T must be >= 1")
    kept, excluded = [], []
    for inst in instances:
        (excluded if inst.steps > T else kept).append(inst)
    return kept, excluded


def exclusion_ratios(kept: Sequence[LabeledInstance], excluded: Sequence[LabeledInstance]) -> dict[str, float]:
    """Excluded fraction counted per instance and per graph (a graph counts
    as excluded if any of its instances is)."""
    total = len(kept) + len(excluded)
    graphs = {i.path for i in kept} | {i.path for i in excluded}
    bad = {i.path for i in excluded}
    return {
        "per_instance": len(excluded) / total if total else 0.0,
        "per_graph": len(bad) / len(graphs) if graphs else 0.0,
    }


def class_balance(instances: Sequence[LabeledInstance]) -> float:
    """Positive labels over all eligible-vertex labels."""
    if not instances:
        raise ValueError("class_balance of an empty instance list")
    pos = total = 0
    for inst in instances:
        mask = inst.eligible()
        pos += int(inst.labels[mask].sum())
        total += int(mask.sum())
    return pos / total if total else 0.0


def sort_key(inst: LabeledInstance) -> tuple:
    return (inst.path, _TASK_INDEX[inst.task], inst.root)


def write_instances(path: str | Path, instances: Iterable[LabeledInstance]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for inst in sorted(instances, key=sort_key):
            f.write(json.dumps(inst.to_record(), separators=(",", ":")) + "\n")


def read_instances(path: str | Path, graphs: dict[str, ProgramGraph]) -> list[LabeledInstance]:
    out = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            if line.strip():
                record = json.loads(line)
                out.append(LabeledInstance.from_record(record, graphs[record["path"]]))
    return out


def generate_dataset(graphs: Sequence[ProgramGraph], tasks: Iterable[AnalysisTask | str], seed: int,
                     T: int, filter_test_only: bool = False) -> tuple[CorpusManifest, list[LabeledInstance], dict]:
    """Split the corpus, label every task and drop instances needing more
    than ``T`` steps.  Returns the manifest, kept instances and a report."""
    entries = [ManifestEntry(g.source_path, len(g.vertices), len(g.edges)) for g in graphs]
    manifest = split_corpus(entries, seed)
    split_of = manifest.split_of()
    kept_all: list[LabeledInstance] = []
    report: dict = {}
    for task in tasks:
        task = AnalysisTask(task)
        instances = [inst for g in graphs for inst in make_instances(g, task, seed, split_of[g.source_path])]
        if filter_test_only:
            others = [i for i in instances if i.split != "test"]
            kept, excluded = filter_by_steps([i for i in instances if i.split == "test"], T)
            kept = others + kept
        else:
            kept, excluded = filter_by_steps(instances, T)
        ratios = exclusion_ratios(kept, excluded)
        report[task.value] = {
            "instances": len(kept),
            "excluded": len(excluded),
            "exclusion_per_instance": ratios["per_instance"],
            "exclusion_per_graph": ratios["per_graph"],
            "class_balance": class_balance(kept) if kept else math.nan,
        }
        kept_all.extend(kept)
    kept_all.sort(key=sort_key)
    return manifest, kept_all, report
