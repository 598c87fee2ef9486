"""ProGraML program graphs: construction from IR, statistics, and I/O."""

from __future__ import annotations

import hashlib
import json
from collections import Counter
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Iterator

import numpy as np

from .ir import IRInstruction, IRModule, Operand
from .vocab import normalize

INSTRUCTION, VARIABLE, CONSTANT, EXTERNAL = "Instruction", "Variable", "Constant", "External"
VERTEX_KINDS = (INSTRUCTION, VARIABLE, CONSTANT, EXTERNAL)
CONTROL, DATA, CALL = "Control", "Data", "Call"
FLOWS = (CONTROL, DATA, CALL)

EXTERNAL_TEXT = "<external>"
DUMMY_ENTRY_TEXT = "<dummy entry>"
DUMMY_EXIT_TEXT = "<dummy exit>"


class BuildError(ValueError):
    pass


@dataclass(frozen=True)
class Vertex:
    id: int
    kind: str
    text: str
    function: str | None = None


@dataclass(frozen=True)
class Edge:
    src: int
    dst: int
    flow: str
    position: int = 0


@dataclass
class ProgramGraph:
    vertices: list[Vertex]
    edges: list[Edge]
    source_path: str = ""

    @cached_property
    def function_table(self) -> dict[str, tuple[int, list[int]]]:
        """Function name -> (entry instruction, exit instructions).

        The entry is the function's lowest-id instruction; exits are its
        instructions without control successors.
        """
        out_degree = np.bincount(self.control_src, minlength=len(self.vertices))
        table: dict[str, tuple[int, list[int]]] = {}
        for v in self.vertices:
            if v.kind != INSTRUCTION:
                continue
            if v.function not in table:
                table[v.function] = (v.id, [])
            if out_degree[v.id] == 0:
                table[v.function][1].append(v.id)
        return table

    @cached_property
    def dummy_functions(self) -> frozenset[str]:
        return frozenset(v.function for v in self.vertices if v.text == DUMMY_ENTRY_TEXT)

    @cached_property
    def _edge_arrays(self) -> dict[str, np.ndarray]:
        n = len(self.edges)
        src = np.fromiter((e.src for e in self.edges), dtype=np.int64, count=n)
        dst = np.fromiter((e.dst for e in self.edges), dtype=np.int64, count=n)
        flow = np.fromiter((FLOWS.index(e.flow) for e in self.edges), dtype=np.int64, count=n)
        pos = np.fromiter((e.position for e in self.edges), dtype=np.int64, count=n)
        return {"src": src, "dst": dst, "flow": flow, "position": pos}

    @property
    def edge_src(self) -> np.ndarray:
        return self._edge_arrays["src"]

    @property
    def edge_dst(self) -> np.ndarray:
        return self._edge_arrays["dst"]

    @property
    def edge_flow(self) -> np.ndarray:
        return self._edge_arrays["flow"]

    @property
    def edge_position(self) -> np.ndarray:
        return self._edge_arrays["position"]

    @property
    def control_src(self) -> np.ndarray:
        return self.edge_src[self.edge_flow == 0]

    @cached_property
    def successors(self) -> list[list[int]]:
        """Control successors in position order."""
        succ: list[list[tuple[int, int]]] = [[] for _ in self.vertices]
        for e in self.edges:
            if e.flow == CONTROL:
                succ[e.src].append((e.position, e.dst))
        return [[d for _, d in sorted(s)] for s in succ]

    @cached_property
    def predecessors(self) -> list[list[int]]:
        pred: list[list[int]] = [[] for _ in self.vertices]
        for e in self.edges:
            if e.flow == CONTROL:
                pred[e.dst].append(e.src)
        return pred

    @cached_property
    def operands(self) -> list[list[int]]:
        """Data-flow operand vertices of each instruction, by position."""
        ops: list[list[tuple[int, int]]] = [[] for _ in self.vertices]
        for e in self.edges:
            if e.flow == DATA and self.vertices[e.dst].kind == INSTRUCTION:
                ops[e.dst].append((e.position, e.src))
        return [[s for _, s in sorted(o)] for o in ops]

    @cached_property
    def results(self) -> list[list[int]]:
        """Variables produced by each instruction."""
        res: list[list[int]] = [[] for _ in self.vertices]
        for e in self.edges:
            if e.flow == DATA and self.vertices[e.src].kind == INSTRUCTION:
                res[e.src].append(e.dst)
        return res

    @cached_property
    def definers(self) -> list[list[int]]:
        """Instructions producing each variable."""
        out: list[list[int]] = [[] for _ in self.vertices]
        for e in self.edges:
            if e.flow == DATA and self.vertices[e.src].kind == INSTRUCTION:
                out[e.dst].append(e.src)
        return out

    @cached_property
    def digest(self) -> str:
        return hashlib.sha256(graph_to_json(self).encode("utf-8")).hexdigest()

    def instruction_ids(self) -> list[int]:
        return [v.id for v in self.vertices if v.kind == INSTRUCTION]

    def function_vertices(self, name: str) -> list[int]:
        return [v.id for v in self.vertices if v.kind == INSTRUCTION and v.function == name]


class _Builder:
    def __init__(self, module: IRModule):
        self.module = module
        self.vertices: list[Vertex] = []
        self.control: list[Edge] = []
        self.data: list[Edge] = []
        self.call: list[Edge] = []
        self.values: dict[tuple, int] = {}

    def add_vertex(self, kind: str, text: str, function: str | None) -> int:
        vid = len(self.vertices)
        self.vertices.append(Vertex(vid, kind, text, function))
        return vid

    def value_vertex(self, fn_name: str, op, var_types: dict[str, str]) -> int:
        if op.kind == "Constant":
            key: tuple = ("const", op.text)
            kind, text, owner = CONSTANT, op.text, None
        elif op.text.startswith("@"):
            g = self.module.global_var(op.text)
            key = ("global", op.text)
            kind = CONSTANT if g is not None and g.is_constant else VARIABLE
            text, owner = op.type_text, None
        else:
            key = ("var", fn_name, op.text)
            kind, text, owner = VARIABLE, var_types.get(op.text, op.type_text), fn_name
        vid = self.values.get(key)
        if vid is None:
            vid = self.add_vertex(kind, text, owner)
            self.values[key] = vid
        return vid

    def build(self) -> ProgramGraph:
        module = self.module
        definitions = [fn for fn in module.functions if fn.is_definition]
        if not definitions:
            raise BuildError(f"{module.source_path}: module has no function definitions")
        self.add_vertex(EXTERNAL, EXTERNAL_TEXT, None)

        inst_ids: dict[int, int] = {}
        entries: dict[str, int] = {}
        exits: dict[str, list[int]] = {}
        for fn in definitions:
            for inst in fn.instructions():
                inst_ids[id(inst)] = self.add_vertex(INSTRUCTION, normalize(inst, module), fn.name)
            entries[fn.name] = inst_ids[id(fn.blocks[0].instructions[0])]
            exits[fn.name] = [inst_ids[id(i)] for i in fn.instructions()
                              if i.opcode in ("ret", "unreachable")]

        # one shared dummy entry/exit pair per external callee
        defined = {fn.name for fn in definitions}
        for fn in definitions:
            for inst in fn.instructions():
                callee = _direct_callee(inst)
                if callee is None or callee in defined or callee in entries:
                    continue
                entry = self.add_vertex(INSTRUCTION, DUMMY_ENTRY_TEXT, callee)
                exit_ = self.add_vertex(INSTRUCTION, DUMMY_EXIT_TEXT, callee)
                self.control.append(Edge(entry, exit_, CONTROL, 0))
                entries[callee] = entry
                exits[callee] = [exit_]

        for fn in definitions:
            first = {b.label: inst_ids[id(b.instructions[0])] for b in fn.blocks}
            for block in fn.blocks:
                insts = block.instructions
                for a, b in zip(insts, insts[1:]):
                    self.control.append(Edge(inst_ids[id(a)], inst_ids[id(b)], CONTROL, 0))
                term = insts[-1]
                if term.opcode in ("br", "switch"):
                    targets = [op.text for op in term.operands if op.kind == "Label"]
                    for pos, label in enumerate(targets):
                        self.control.append(Edge(inst_ids[id(term)], first[label], CONTROL, pos))

        for fn in definitions:
            var_types = {name: ty for name, ty in fn.params if name is not None}
            for inst in fn.instructions():
                if inst.result is not None and inst.result_type is not None:
                    var_types[inst.result] = inst.result_type
            for inst in fn.instructions():
                vid = inst_ids[id(inst)]
                pos = 0
                for op in inst.operands:
                    if op.kind not in ("Variable", "Constant"):
                        continue
                    self.data.append(Edge(self.value_vertex(fn.name, op, var_types), vid, DATA, pos))
                    pos += 1
                if inst.result is not None:
                    res = Operand("Variable", inst.result, inst.result_type or "")
                    self.data.append(Edge(vid, self.value_vertex(fn.name, res, var_types), DATA, 0))

        for fn in definitions:
            for inst in fn.instructions():
                callee = _direct_callee(inst)
                if callee is None:
                    continue
                site = inst_ids[id(inst)]
                self.call.append(Edge(site, entries[callee], CALL, 0))
                for x in exits[callee]:
                    self.call.append(Edge(x, site, CALL, 0))
        for fn in definitions:
            if fn.is_externally_visible:
                self.call.append(Edge(0, entries[fn.name], CALL, 0))
                for x in exits[fn.name]:
                    self.call.append(Edge(x, 0, CALL, 0))

        return ProgramGraph(self.vertices, self.control + self.data + self.call, module.source_path)


def _direct_callee(inst: IRInstruction) -> str | None:
    if inst.opcode != "call" or not inst.operands:
        return None
    callee = inst.operands[0]
    return callee.text if callee.kind == "FunctionRef" else None


def build_graph(module: IRModule) -> ProgramGraph:
    """Build the control/data/call multigraph of a validated module."""
    return _Builder(module).build()


# --------------------------------------------------------------------------
# Statistics

@dataclass
class GraphStats:
    num_vertices: int
    num_edges: int
    max_position: int
    vertex_kinds: dict[str, int] = field(default_factory=dict)
    edge_flows: dict[str, int] = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {
            "num_vertices": self.num_vertices,
            "num_edges": self.num_edges,
            "max_position": self.max_position,
            "vertex_kinds": dict(self.vertex_kinds),
            "edge_flows": dict(self.edge_flows),
        }


def stats(graph: ProgramGraph) -> GraphStats:
    kinds = Counter(v.kind for v in graph.vertices)
    flows = Counter(e.flow for e in graph.edges)
    return GraphStats(
        num_vertices=len(graph.vertices),
        num_edges=len(graph.edges),
        max_position=max((e.position for e in graph.edges), default=0),
        vertex_kinds={k: kinds.get(k, 0) for k in VERTEX_KINDS},
        edge_flows={f: flows.get(f, 0) for f in FLOWS},
    )


def corpus_stats(graphs: Iterable[ProgramGraph]) -> dict:
    n = v = e = 0
    max_pos = 0
    for g in graphs:
        s = stats(g)
        n += 1
        v += s.num_vertices
        e += s.num_edges
        max_pos = max(max_pos, s.max_position)
    return {
        "graphs": n,
        "mean_vertices": v / n if n else 0.0,
        "mean_edges": e / n if n else 0.0,
        "max_position": max_pos,
    }


# --------------------------------------------------------------------------
# Serialization

def _dot_escape(text: str) -> str:
    return text.replace("\\", "\\\\").replace('"', '\\"')


_DOT_STYLE = {
    INSTRUCTION: 'shape=box, style=filled, fillcolor="#3c78d8", fontcolor=white',
    VARIABLE: 'shape=ellipse, style=filled, fillcolor="#f4cccc"',
    CONSTANT: 'shape=diamond, style=filled, fillcolor="#e99c9c"',
    EXTERNAL: 'shape=doublecircle',
}
_DOT_EDGE_COLOR = {CONTROL: "blue", DATA: "red", CALL: "green"}


def export_dot(graph: ProgramGraph) -> str:
    lines = [f'digraph "{_dot_escape(graph.source_path or "program")}" {{']
    for v in graph.vertices:
        lines.append(f'  n{v.id} [label="{_dot_escape(v.text)}", kind={v.kind}, {_DOT_STYLE[v.kind]}];')
    # position 0 is labeled too when the source has several edges of that
    # flow, so both arms of a conditional branch are marked
    fanout = Counter((e.src, e.flow) for e in graph.edges if e.flow == CONTROL)
    for e in graph.edges:
        attrs = f'flow={e.flow}, color={_DOT_EDGE_COLOR[e.flow]}'
        if e.position > 0 or fanout[e.src, e.flow] > 1:
            attrs += f', label="{e.position}"'
        lines.append(f"  n{e.src} -> n{e.dst} [{attrs}];")
    lines.append("}")
    return "\n".join(lines) + "\n"


def graph_to_record(graph: ProgramGraph) -> dict:
    return {
        "path": graph.source_path,
        "vertices": [{"id": v.id, "kind": v.kind, "text": v.text, "function": v.function}
                     for v in graph.vertices],
        "edges": [{"src": e.src, "dst": e.dst, "flow": e.flow, "position": e.position}
                  for e in graph.edges],
    }


def graph_to_json(graph: ProgramGraph) -> str:
    return json.dumps(graph_to_record(graph), ensure_ascii=False, separators=(",", ":"))


def graph_from_record(record: dict) -> ProgramGraph:
    vertices = [Vertex(v["id"], v["kind"], v["text"], v["function"]) for v in record["vertices"]]
    edges = [Edge(e["src"], e["dst"], e["flow"], e["position"]) for e in record["edges"]]
    return ProgramGraph(vertices, edges, record["path"])


def write_graphs(path, graphs: Iterable[ProgramGraph]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for g in graphs:
            f.write(graph_to_json(g) + "\n")


def read_graphs(path) -> Iterator[ProgramGraph]:
    with open(path, encoding="utf-8") as f:
        for line in f:
            if line.strip():
                yield graph_from_record(json.loads(line))
