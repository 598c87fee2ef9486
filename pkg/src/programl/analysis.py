"""Exact dataflow analyses over program graphs, used as label oracles.

Every analysis takes a root instruction vertex and returns a per-vertex
bit vector plus ``steps``, the number of iterations that changed the
solution (so a root whose answer is immediate has ``steps == 0``).
"""

from __future__ import annotations

import enum
from collections import Counter
from dataclasses import dataclass

import numpy as np

from .graph import INSTRUCTION, VARIABLE, ProgramGraph


class AnalysisTask(str, enum.Enum):
    REACHABILITY = "Reachability"
    DOMTREE = "DomTree"
    DATADEP = "DataDep"
    LIVENESS = "Liveness"
    SUBEXPRESSIONS = "Subexpressions"


class RootKindError(ValueError):
    pass


class IneligibleRootError(ValueError):
    pass


@dataclass
class AnalysisResult:
    task: AnalysisTask
    root: int
    labels: np.ndarray  # bool, one entry per vertex
    steps: int

    @property
    def positives(self) -> list[int]:
        return np.flatnonzero(self.labels).tolist()


COMMUTATIVE = frozenset({"add", "mul", "and", "or", "xor", "fadd", "fmul"})
EQ_PREDICATES = frozenset({"eq", "ne", "oeq", "one", "ueq", "une", "ord", "uno"})
NON_EXPRESSION_OPS = frozenset({"load", "store", "call", "alloca", "phi"})
_CALL_PREFIXES = frozenset({"tail", "musttail", "notail"})
_FAST_MATH = frozenset({"fast", "nnan", "ninf", "nsz", "arcp", "contract", "afn", "reassoc"})


def eligible_kind(task: AnalysisTask) -> str:
    return VARIABLE if AnalysisTask(task) is AnalysisTask.LIVENESS else INSTRUCTION


def _check_root(graph: ProgramGraph, root: int) -> None:
    if not 0 <= root < len(graph.vertices) or graph.vertices[root].kind != INSTRUCTION:
        raise RootKindError(f"root {root} is not an instruction vertex")


def _mask(graph: ProgramGraph, ids) -> np.ndarray:
    labels = np.zeros(len(graph.vertices), dtype=bool)
    labels[list(ids)] = True
    return labels


def _bfs_levels(start: int, neighbours) -> tuple[set[int], int]:
    seen = {start}
    frontier = [start]
    levels = 0
    while True:
        nxt = []
        for v in frontier:
            for w in neighbours(v):
                if w not in seen:
                    seen.add(w)
                    nxt.append(w)
        if not nxt:
            return seen, levels
        levels += 1
        frontier = nxt


def reachability(graph: ProgramGraph, root: int) -> AnalysisResult:
    """Statements reachable from ``root`` along control edges."""
    _check_root(graph, root)
    succ = graph.successors
    seen, levels = _bfs_levels(root, succ.__getitem__)
    return AnalysisResult(AnalysisTask.REACHABILITY, root, _mask(graph, seen), levels)


def _postorder(entry: int, succ: list[list[int]]) -> list[int]:
    order: list[int] = []
    seen = {entry}
    stack = [(entry, iter(succ[entry]))]
    while stack:
        node, it = stack[-1]
        for w in it:
            if w not in seen:
                seen.add(w)
                stack.append((w, iter(succ[w])))
                break
        else:
            stack.pop()
            order.append(node)
    return order


def _function_order(graph: ProgramGraph, function: str) -> list[int]:
    """Postorder from the function entry, then any statements the entry
    cannot reach."""
    entry = graph.function_table[function][0]
    order = _postorder(entry, graph.successors)
    seen = set(order)
    for v in graph.function_vertices(function):
        if v not in seen:
            for w in _postorder(v, graph.successors):
                if w not in seen:
                    seen.add(w)
                    order.append(w)
    return order


def dominators(graph: ProgramGraph, root: int) -> AnalysisResult:
    """Statements that lie on every control path from the function entry
    to ``root``; iterative set intersection in reverse postorder."""
    _check_root(graph, root)
    function = graph.vertices[root].function
    entry = graph.function_table[function][0]
    rpo = _postorder(entry, graph.successors)[::-1]
    if root not in set(rpo):
        return AnalysisResult(AnalysisTask.DOMTREE, root, _mask(graph, [root]), 0)
    everything = frozenset(rpo)
    dom: dict[int, frozenset[int]] = {v: everything for v in rpo}
    dom[entry] = frozenset([entry])
    pred = graph.predecessors
    reachable = everything
    steps = 0
    changed = True
    while changed:
        changed = False
        for v in rpo:
            if v == entry:
                continue
            new = None
            for p in pred[v]:
                if p in reachable:
                    new = dom[p] if new is None else new & dom[p]
            new = (new or frozenset()) | {v}
            if new != dom[v]:
                dom[v] = new
                changed = True
        steps += changed
    return AnalysisResult(AnalysisTask.DOMTREE, root, _mask(graph, dom[root]), steps)


def datadep(graph: ProgramGraph, root: int) -> AnalysisResult:
    """Statements whose results flow, through def-use chains, into ``root``."""
    _check_root(graph, root)
    operands, definers = graph.operands, graph.definers

    def producers(v: int):
        for op in operands[v]:
            yield from definers[op]

    seen, levels = _bfs_levels(root, producers)
    return AnalysisResult(AnalysisTask.DATADEP, root, _mask(graph, seen), levels)


def local_uses(graph: ProgramGraph, v: int) -> set[int]:
    fn = graph.vertices[v].function
    return {w for w in graph.operands[v]
            if graph.vertices[w].kind == VARIABLE and graph.vertices[w].function == fn}


def local_defs(graph: ProgramGraph, v: int) -> set[int]:
    return set(graph.results[v])


def liveness(graph: ProgramGraph, root: int) -> AnalysisResult:
    """Variables live out of ``root``.

    Round-robin iteration over the root's function in postorder so that
    successors are visited before their predecessors.
    """
    _check_root(graph, root)
    function = graph.vertices[root].function
    order = _function_order(graph, function)
    succ = graph.successors
    uses = {v: local_uses(graph, v) for v in order}
    defs = {v: local_defs(graph, v) for v in order}
    live_out: dict[int, frozenset[int]] = {v: frozenset() for v in order}
    steps = 0
    changed = True
    while changed:
        changed = False
        for v in order:
            new: set[int] = set()
            for s in succ[v]:
                new |= uses[s]
                new |= live_out[s] - defs[s]
            if len(new) != len(live_out[v]):
                live_out[v] = frozenset(new)
                changed = True
        steps += changed
    return AnalysisResult(AnalysisTask.LIVENESS, root, _mask(graph, live_out[root]), steps)


def _opcode_and_predicate(text: str) -> tuple[str, str | None]:
    words = text.split("=", 1)[1].split() if " = " in text else text.split()
    words = [w for w in words if w not in _CALL_PREFIXES]
    if not words:
        return "", None
    opcode = words[0]
    if opcode in ("icmp", "fcmp"):
        rest = [w for w in words[1:] if w not in _FAST_MATH]
        return opcode, rest[0] if rest else None
    return opcode, None


def expression_keys(graph: ProgramGraph) -> dict[int, tuple]:
    """Expression key of every instruction that computes one (cached on the
    graph)."""
    cache = graph.__dict__.setdefault("_expression_keys", None)
    if cache is not None:
        return cache
    keys: dict[int, tuple] = {}
    for v in graph.vertices:
        if v.kind != INSTRUCTION:
            continue
        ops = graph.operands[v.id]
        res = graph.results[v.id]
        if not ops or not res:
            continue
        opcode, predicate = _opcode_and_predicate(v.text)
        if not opcode or opcode in NON_EXPRESSION_OPS:
            continue
        operand_ids = tuple(ops)
        if opcode in COMMUTATIVE or (predicate is not None and predicate in EQ_PREDICATES):
            operand_ids = tuple(sorted(operand_ids))
        result_type = graph.vertices[res[0]].text
        keys[v.id] = (opcode, predicate, result_type, operand_ids)
    graph.__dict__["_expression_keys"] = keys
    return keys


def _available_expression_steps(graph: ProgramGraph, root: int, keys: dict[int, tuple]) -> int:
    """Round-robin sweeps for available expressions over the root's function."""
    function = graph.vertices[root].function
    entry = graph.function_table[function][0]
    rpo = _postorder(entry, graph.successors)[::-1]
    gen = {v: ({keys[v]} if v in keys else set()) for v in rpo}
    universe = frozenset(k for s in gen.values() for k in s)
    kill: dict[int, set] = {}
    for v in rpo:
        produced = set(graph.results[v])
        kill[v] = {k for k in universe if produced & set(k[3])}
    avail = {v: universe for v in rpo}
    avail[entry] = frozenset((gen[entry]) - kill[entry])
    pred = graph.predecessors
    reachable = set(rpo)
    steps = 0
    changed = True
    while changed:
        changed = False
        for v in rpo:
            if v == entry:
                continue
            inflow = None
            for p in pred[v]:
                if p in reachable:
                    inflow = avail[p] if inflow is None else inflow & avail[p]
            new = frozenset((gen[v] | (inflow or frozenset())) - kill[v])
            if new != avail[v]:
                avail[v] = new
                changed = True
        steps += changed
    return steps


def subexpressions(graph: ProgramGraph, root: int) -> AnalysisResult:
    """Statements computing the same expression as ``root``."""
    _check_root(graph, root)
    keys = expression_keys(graph)
    if root not in keys:
        raise IneligibleRootError(f"vertex {root} has no expression key")
    key = keys[root]
    same = [v for v, k in keys.items() if k == key]
    steps = _available_expression_steps(graph, root, keys)
    return AnalysisResult(AnalysisTask.SUBEXPRESSIONS, root, _mask(graph, same), steps)


ANALYSES = {
    AnalysisTask.REACHABILITY: reachability,
    AnalysisTask.DOMTREE: dominators,
    AnalysisTask.DATADEP: datadep,
    AnalysisTask.LIVENESS: liveness,
    AnalysisTask.SUBEXPRESSIONS: subexpressions,
}


def run_analysis(task: AnalysisTask | str, graph: ProgramGraph, root: int) -> AnalysisResult:
    return ANALYSES[AnalysisTask(task)](graph, root)


def eligible_roots(graph: ProgramGraph, task: AnalysisTask | str) -> list[int]:
    task = AnalysisTask(task)
    dummies = graph.dummy_functions
    roots = [v.id for v in graph.vertices
             if v.kind == INSTRUCTION and v.function not in dummies]
    if task is AnalysisTask.DOMTREE:
        reachable: set[int] = set()
        for name, (entry, _) in graph.function_table.items():
            if name not in dummies:
                reachable.update(_postorder(entry, graph.successors))
        return [v for v in roots if v in reachable]
    if task is AnalysisTask.SUBEXPRESSIONS:
        keys = expression_keys(graph)
        counts = Counter(keys.values())
        return [v for v in roots if v in keys and counts[keys[v]] >= 2]
    return roots
