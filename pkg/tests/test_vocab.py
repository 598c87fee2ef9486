import re
from collections import Counter

import numpy as np
import pytest

from programl.graph import build_graph
from programl.ir import parse_ir
from programl.synth import random_cfg_program, structured_program
from programl.vocab import (
    EXTERNAL, ID, RESERVED_TOKENS, UNKNOWN, VAL, EmptyCorpus, Vocabulary, build_vocab, coverage,
    encode_vertex, normalize,
)


def first_instruction(src):
    m = parse_ir(src)
    return next(m.functions[-1].instructions()), m


def test_normalize_strips_identifiers():
    inst, m = first_instruction("define i32 @f(i32 %3, i32 %4) {\n  %5 = add i32 %3, %4\n  ret i32 %5\n}")
    assert normalize(inst, m) == "<%ID> = add i32 <%ID>, <%ID>"


def test_normalize_literals_types_and_clauses():
    src = ("%struct.S = type { i32, %struct.S* }\n"
           "define void @f(%struct.S* %p, double %d) {\n"
           "  %q = getelementptr inbounds %struct.S, %struct.S* %p, i64 0, i32 1\n"
           "  %x = fadd double %d, 2.5e+00\n"
           "  %a = alloca %struct.S, align 8, !dbg !4\n"
           "  ret void\n}\n")
    m = parse_ir(src)
    texts = [normalize(i, m) for i in m.functions[0].instructions()]
    assert texts[0] == ("<%ID> = getelementptr inbounds { i32, opaque* }, { i32, opaque* }* <%ID>, "
                        "i64 <INT>, i32 <INT>")
    assert texts[1] == "<%ID> = fadd double <%ID>, <FLOAT>"
    assert texts[2] == "<%ID> = alloca { i32, opaque* }"
    for t in texts:
        assert not re.search(r"[%@][\w.]", t.replace("<%ID>", ""))
        assert not re.search(r"(?<![<\w])\d", t.replace("i32", "").replace("i64", ""))


def _rename(src: str) -> str:
    src = re.sub(r"%([A-Za-z_][\w.]*)", r"%renamed_\1_x", src)
    src = re.sub(r"^([A-Za-z_][\w.]*):", r"renamed_\1_x:", src, flags=re.M)
    return re.sub(r"@([A-Za-z_][\w.]*)", r"@other_\1", src)


@pytest.mark.parametrize("seed", range(25))
def test_alpha_renaming_invariance(seed):
    rng = np.random.default_rng(seed)
    src = structured_program(rng) if seed % 2 else random_cfg_program(rng, n_functions=2)
    renamed = _rename(src)
    assert renamed != src
    g1, g2 = build_graph(parse_ir(src)), build_graph(parse_ir(renamed))
    vocab = build_vocab([g1])
    assert [v.text for v in g1.vertices if v.kind == "Instruction"] == \
        [v.text for v in g2.vertices if v.kind == "Instruction"]
    assert [encode_vertex(v, vocab) for v in g1.vertices] == [encode_vertex(v, vocab) for v in g2.vertices]


def _corpus(n=40, seed=0):
    rng = np.random.default_rng(seed)
    return [build_graph(parse_ir(structured_program(rng))) for _ in range(n)]


def test_trivial_corpus_vocabulary():
    g = build_graph(parse_ir("define i32 @f() { ret i32 0 }"))
    vocab = build_vocab([g])
    assert vocab.tokens()[:4] == list(RESERVED_TOKENS)
    assert vocab.lookup("ret i32 <INT>") == 4
    assert vocab.size == 5


def test_min_count_above_max_frequency_leaves_reserved():
    corpus = _corpus(5)
    assert build_vocab(corpus, min_count=10**6).size == len(RESERVED_TOKENS)


def test_empty_corpus():
    with pytest.raises(EmptyCorpus):
        build_vocab([])
    with pytest.raises(ValueError):
        build_vocab(_corpus(1), min_count=0)


def test_ids_dense_and_frequency_ordered():
    corpus = _corpus()
    vocab = build_vocab(corpus, min_count=2)
    ids = sorted(vocab.token_to_id.values())
    assert ids == list(range(vocab.size))
    counts = Counter(v.text for g in corpus for v in g.vertices if v.kind == "Instruction")
    kept = [t for t in vocab.tokens()[4:]]
    assert all(counts[t] >= 2 for t in kept)
    assert kept == sorted(kept, key=lambda t: (-counts[t], t))
    assert set(kept) == {t for t, c in counts.items() if c >= 2}


def test_coverage_matches_recount():
    train, test = _corpus(30, seed=1), _corpus(10, seed=2)
    vocab = build_vocab(train, min_count=3)
    counts = Counter(v.text for g in train for v in g.vertices if v.kind == "Instruction")
    known = {t for t, c in counts.items() if c >= 3}
    texts = [v.text for g in test for v in g.vertices if v.kind == "Instruction"]
    assert coverage(test, vocab) == pytest.approx(sum(t in known for t in texts) / len(texts))


def test_encode_vertex_kinds():
    g = build_graph(parse_ir("define i32 @f(i32 %a) {\n  %b = mul i32 %a, 7\n  ret i32 %b\n}"))
    vocab = build_vocab([g])
    by_kind = {v.kind: encode_vertex(v, vocab) for v in g.vertices}
    assert by_kind["Constant"] == VAL == 2
    assert by_kind["Variable"] == ID
    assert by_kind["External"] == EXTERNAL
    assert vocab.lookup("never seen") == UNKNOWN == 0
    for other in _corpus(5):
        assert all(encode_vertex(v, vocab) < vocab.size for v in other.vertices)


def test_stable_and_file_round_trip(tmp_path):
    corpus = _corpus(20)
    a, b = build_vocab(corpus), build_vocab(corpus)
    assert a.token_to_id == b.token_to_id
    path = tmp_path / "vocab.tsv"
    a.save(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "<unknown>\t0\t0"
    assert Vocabulary.load(path).token_to_id == a.token_to_id
