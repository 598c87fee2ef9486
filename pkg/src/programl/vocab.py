"""Statement normalization and the token vocabulary for vertex embeddings."""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

from .ir import IRInstruction, IRModule, Operand, format_instruction

UNKNOWN, ID, VAL, EXTERNAL = 0, 1, 2, 3
RESERVED_TOKENS = ("<unknown>", "<id>", "<val>", "<external>")

ID_TOKEN = "<%ID>"
INT_TOKEN = "<INT>"
FLOAT_TOKEN = "<FLOAT>"

_INT_RE = re.compile(r"[-+]?\d+")
_FLOAT_RE = re.compile(r"[-+]?(\d+\.\d*([eE][-+]?\d+)?|\d+[eE][-+]?\d+)|0x[KLMHR]?[0-9A-Fa-f]+")
_NAMED_TYPE_RE = re.compile(r'%(?:[-a-zA-Z$._][-a-zA-Z$._0-9]*|\d+|"[^"]*")')
_IDENT_RE = re.compile(r'[%@](?:[-a-zA-Z$._][-a-zA-Z$._0-9]*|\d+|"[^"]*")')
_NUMBER_RE = re.compile(r"(?<![\w.<])(?:0x[KLMHR]?[0-9A-Fa-f]+|[-+]?\d+\.\d*(?:[eE][-+]?\d+)?|[-+]?\d+)(?![\w.])")


class EmptyCorpus(ValueError):
    pass


def inline_types(type_text: str, type_defs: dict[str, str], _stack: tuple[str, ...] = ()) -> str:
    """Replace named struct types by their bodies; a type already being
    expanded becomes ``opaque``."""
    if not type_defs or "%" not in type_text:
        return type_text

    def expand(m: re.Match) -> str:
        name = m.group()
        if name not in type_defs or name in _stack:
            return "opaque"
        return inline_types(type_defs[name], type_defs, _stack + (name,))

    return _NAMED_TYPE_RE.sub(expand, type_text)


def _literal_token(literal: str) -> str:
    if _FLOAT_RE.fullmatch(literal):
        return FLOAT_TOKEN
    if _INT_RE.fullmatch(literal):
        return INT_TOKEN
    # aggregates and constant expressions: strip names and immediates inside
    out = _IDENT_RE.sub(ID_TOKEN, literal)
    return _NUMBER_RE.sub(INT_TOKEN, out)


def normalize(instruction: IRInstruction, module: IRModule | None = None) -> str:
    """Normalized statement text: identifiers stripped, immediates
    abstracted, named types inlined, metadata and alignment removed."""
    type_defs = module.type_defs if module is not None else {}

    def value(op: Operand) -> str:
        if op.kind == "Constant":
            return _literal_token(op.literal)
        return ID_TOKEN

    def typ(text: str | None) -> str:
        return inline_types(text or "", type_defs)

    text = format_instruction(instruction, value=value, typ=typ)
    if instruction.lossy:
        text = _literal_token(text)
    return " ".join(text.split())


@dataclass
class Vocabulary:
    token_to_id: dict[str, int]
    counts: dict[str, int] = field(default_factory=dict)
    min_count: int = 1

    @property
    def size(self) -> int:
        return len(self.token_to_id)

    def lookup(self, text: str) -> int:
        return self.token_to_id.get(text, UNKNOWN)

    def tokens(self) -> list[str]:
        return sorted(self.token_to_id, key=self.token_to_id.__getitem__)

    def save(self, path: str | Path) -> None:
        lines = [f"{tok}\t{i}\t{self.counts.get(tok, 0)}" for tok, i in
                 sorted(self.token_to_id.items(), key=lambda kv: kv[1])]
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path, min_count: int = 1) -> Vocabulary:
        mapping, counts = {}, {}
        for line in Path(path).read_text(encoding="utf-8").splitlines():
            if not line:
                continue
            tok, idx, count = line.split("\t")
            mapping[tok] = int(idx)
            counts[tok] = int(count)
        return cls(mapping, counts, min_count)

    @classmethod
    def from_tokens(cls, tokens: Iterable[str], min_count: int = 1) -> Vocabulary:
        mapping = {tok: i for i, tok in enumerate(RESERVED_TOKENS)}
        for tok in tokens:
            if tok not in mapping:
                mapping[tok] = len(mapping)
        return cls(mapping, {}, min_count)


def build_vocab(graphs: Iterable, min_count: int = 1) -> Vocabulary:
    """Count instruction texts across graphs; keep those seen at least
    ``min_count`` times, most frequent first."""
    if min_count < 1:
        raise ValueError("min_count must be >= 1")
    counts: Counter[str] = Counter()
    n_graphs = 0
    for graph in graphs:
        n_graphs += 1
        counts.update(v.text for v in graph.vertices if v.kind == "Instruction")
    if n_graphs == 0:
        raise EmptyCorpus("cannot build a vocabulary from zero graphs")
    kept = sorted((tok for tok, c in counts.items() if c >= min_count),
                  key=lambda tok: (-counts[tok], tok))
    mapping = {tok: i for i, tok in enumerate(RESERVED_TOKENS)}
    for tok in kept:
        mapping[tok] = len(mapping)
    return Vocabulary(mapping, {tok: counts[tok] for tok in kept}, min_count)


def encode_vertex(vertex, vocabulary: Vocabulary) -> int:
    if vertex.kind == "Instruction":
        return vocabulary.lookup(vertex.text)
    if vertex.kind == "Variable":
        return ID
    if vertex.kind == "Constant":
        return VAL
    return EXTERNAL


def coverage(graphs: Iterable, vocabulary: Vocabulary) -> float:
    """Fraction of instruction vertices not mapped to Unknown."""
    total = known = 0
    for graph in graphs:
        for v in graph.vertices:
            if v.kind == "Instruction":
                total += 1
                known += vocabulary.lookup(v.text) != UNKNOWN
    return known / total if total else 0.0
