"""Brute-force reference implementations used as test oracles.

Each works directly from the edge list (and, for expression keys, the
parsed IR) and shares no code with ``programl.analysis``.
"""

from __future__ import annotations

import numpy as np

from programl.graph import CONTROL, DATA, INSTRUCTION, VARIABLE
from programl.synth import random_cfg_program, structured_program
from programl.ir import parse_ir
from programl.graph import build_graph

COMMUTATIVE = {"add", "mul", "and", "or", "xor", "fadd", "fmul"}
EQ_PREDICATES = {"eq", "ne", "oeq", "one", "ueq", "une", "ord", "uno"}
NOT_EXPRESSIONS = {"load", "store", "call", "alloca", "phi"}


def small_random_graphs(count: int, max_vertices: int = 30, seed: int = 0):
    """(module, graph) pairs with at most ``max_vertices`` vertices, mixing
    arbitrary control flow with structured programs."""
    rng = np.random.default_rng(seed)
    out = []
    k = 0
    while len(out) < count:
        k += 1
        if k % 2:
            src = random_cfg_program(rng, max_blocks=5, max_insts=2, n_functions=int(rng.integers(1, 3)))
        else:
            src = structured_program(rng, size=int(rng.integers(4, 10)), max_functions=2, max_depth=1)
        module = parse_ir(src, path=f"small{k}.ll")
        graph = build_graph(module)
        if len(graph.vertices) <= max_vertices:
            out.append((module, graph))
    return out


def _closure(adj: np.ndarray) -> np.ndarray:
    """Reflexive transitive closure by repeated boolean squaring."""
    r = adj.astype(bool) | np.eye(len(adj), dtype=bool)
    while True:
        nxt = (r.astype(np.int64) @ r.astype(np.int64)) > 0
        if np.array_equal(nxt, r):
            return r
        r = nxt


def control_matrix(graph) -> np.ndarray:
    n = len(graph.vertices)
    a = np.zeros((n, n), dtype=bool)
    for e in graph.edges:
        if e.flow == CONTROL:
            a[e.src, e.dst] = True
    return a


def reachability(graph, root: int) -> set[int]:
    return set(np.flatnonzero(_closure(control_matrix(graph))[root]).tolist())


def datadep(graph, root: int) -> set[int]:
    n = len(graph.vertices)
    kinds = [v.kind for v in graph.vertices]
    produces = [[] for _ in range(n)]
    for e in graph.edges:
        if e.flow == DATA and kinds[e.src] == INSTRUCTION:
            produces[e.src].append(e.dst)
    uses = np.zeros((n, n), dtype=bool)  # uses[p, c]: c reads a value p writes
    for e in graph.edges:
        if e.flow == DATA and kinds[e.dst] == INSTRUCTION:
            for p in range(n):
                if e.src in produces[p]:
                    uses[p, e.dst] = True
    return set(np.flatnonzero(_closure(uses)[:, root]).tolist())


def _entry(graph, function: str) -> int:
    return min(v.id for v in graph.vertices if v.kind == INSTRUCTION and v.function == function)


def _reaches(graph, src: int, dst: int, removed: int | None = None) -> bool:
    if src == removed:
        return False
    seen, stack = {src}, [src]
    while stack:
        v = stack.pop()
        if v == dst:
            return True
        for e in graph.edges:
            if e.flow == CONTROL and e.src == v and e.dst not in seen and e.dst != removed:
                seen.add(e.dst)
                stack.append(e.dst)
    return False


def dominators(graph, root: int) -> set[int]:
    """n dominates root iff deleting n disconnects root from the entry."""
    fn = graph.vertices[root].function
    entry = _entry(graph, fn)
    out = {root}
    for v in graph.vertices:
        if v.kind == INSTRUCTION and v.function == fn and v.id != root:
            if not _reaches(graph, entry, root, removed=v.id):
                out.add(v.id)
    return out


def _uses_defs(graph):
    n = len(graph.vertices)
    uses = [set() for _ in range(n)]
    defs = [set() for _ in range(n)]
    for e in graph.edges:
        if e.flow != DATA:
            continue
        s, d = graph.vertices[e.src], graph.vertices[e.dst]
        if d.kind == INSTRUCTION and s.kind == VARIABLE and s.function == d.function:
            uses[d.id].add(s.id)
        elif s.kind == INSTRUCTION:
            defs[s.id].add(d.id)
    return uses, defs


def liveness(graph, root: int) -> set[int]:
    """a is live out of root iff some simple control path starting at a
    successor reaches a use of a before any redefinition."""
    uses, defs = _uses_defs(graph)
    succ = [[] for _ in graph.vertices]
    for e in graph.edges:
        if e.flow == CONTROL:
            succ[e.src].append(e.dst)
    fn = graph.vertices[root].function
    candidates = [v.id for v in graph.vertices if v.kind == VARIABLE and v.function == fn]
    live = set()
    for a in candidates:
        def search(v, on_path):
            if a in uses[v]:
                return True
            if a in defs[v]:
                return False
            for w in succ[v]:
                if w not in on_path:
                    on_path.add(w)
                    if search(w, on_path):
                        return True
                    on_path.discard(w)
            return False

        if any(search(s, {s}) for s in succ[root]):
            live.add(a)
    return live


def expression_key(module, graph, vertex_id: int):
    """Key of an instruction computed from the parsed IR and the graph's
    positioned operand edges; None when it computes no expression."""
    insts = [inst for fn in module.functions if fn.is_definition for inst in fn.instructions()]
    if not 1 <= vertex_id <= len(insts):
        return None  # External vertex or dummy entry/exit of an external callee
    inst = insts[vertex_id - 1]  # defined instructions follow the External vertex in order
    operands = sorted((e.position, e.src) for e in graph.edges if e.flow == DATA and e.dst == vertex_id)
    if inst.result is None or not operands or inst.opcode in NOT_EXPRESSIONS or inst.lossy:
        return None
    return inst.opcode, inst.predicate, inst.result_type, [s for _, s in operands]


def same_expression(a, b) -> bool:
    if a is None or b is None:
        return False
    if a[:3] != b[:3]:
        return False
    if a[0] in COMMUTATIVE or (a[1] is not None and a[1] in EQ_PREDICATES):
        return sorted(a[3]) == sorted(b[3])
    return a[3] == b[3]


def subexpressions(module, graph, root: int) -> set[int]:
    """Pairwise comparison of the root's key with every instruction."""
    mine = expression_key(module, graph, root)
    out = set()
    for v in graph.vertices:
        if v.kind == INSTRUCTION and v.function in {f.name for f in module.functions if f.is_definition}:
            if same_expression(mine, expression_key(module, graph, v.id)):
                out.add(v.id)
    return out


def liveness_sweeps(graph, root: int) -> int:
    """Round-robin liveness sweep count with bit masks, in a postorder
    computed by recursion from the function entry (then unreachable
    statements in id order)."""
    fn = graph.vertices[root].function
    members = [v.id for v in graph.vertices if v.kind == INSTRUCTION and v.function == fn]
    succ = {v: [] for v in members}
    for e in sorted(graph.edges, key=lambda e: e.position):
        if e.flow == CONTROL and e.src in succ:
            succ[e.src].append(e.dst)
    order, seen = [], set()

    def visit(v):
        seen.add(v)
        for w in succ[v]:
            if w not in seen:
                visit(w)
        order.append(v)

    for v in members:
        if v not in seen:
            visit(v)
    uses, defs = _uses_defs(graph)
    bit = lambda ids: sum(1 << i for i in ids)  # noqa: E731
    use_m = {v: bit(uses[v]) for v in members}
    def_m = {v: bit(defs[v]) for v in members}
    out = {v: 0 for v in members}
    sweeps = 0
    while True:
        changed = False
        for v in order:
            new = 0
            for s in succ[v]:
                new |= use_m[s] | (out[s] & ~def_m[s])
            if new != out[v]:
                out[v] = new
                changed = True
        if not changed:
            return sweeps
        sweeps += 1
