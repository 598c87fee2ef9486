"""Random IR program generators for building desk-scale corpora.

``structured_program`` emits well-formed SSA code with nested if/else,
loops, switches, calls and repeated expressions.  ``random_cfg_program``
emits small functions with arbitrary (possibly irreducible) control flow;
it ignores SSA dominance on purpose and is only meant for exercising the
analyses.  ``loop_nest_program`` emits a perfect loop nest of known depth.
"""

from __future__ import annotations

import numpy as np

INT_OPS = ("add", "sub", "mul", "sdiv", "srem", "and", "or", "xor", "shl", "ashr")
FLOAT_OPS = ("fadd", "fsub", "fmul", "fdiv")
ICMP_PREDS = ("eq", "ne", "slt", "sgt", "sle", "sge")


class _FunctionWriter:
    def __init__(self, rng: np.random.Generator, name: str, n_params: int,
                 callees: list[tuple[str, int]], budget: int, max_depth: int):
        self.rng = rng
        self.name = name
        self.params = [f"%a{i}" for i in range(n_params)]
        self.callees = callees
        self.budget = budget
        self.max_depth = max_depth
        self.lines: list[str] = []
        self.n_values = 0
        self.n_labels = 0
        self.block = "entry"
        self.exprs: list[tuple[str, str, str, str]] = []
        self.slot: str | None = None

    def val(self) -> str:
        self.n_values += 1
        return f"%v{self.n_values}"

    def label(self, prefix: str) -> str:
        self.n_labels += 1
        return f"{prefix}{self.n_labels}"

    def emit(self, text: str) -> None:
        self.lines.append("  " + text)
        self.budget -= 1

    def start(self, label: str) -> None:
        self.lines.append(f"{label}:")
        self.block = label

    def chance(self, p: float) -> bool:
        return bool(self.rng.random() < p)

    def pick(self, seq):
        return seq[int(self.rng.integers(len(seq)))]

    def int_operand(self, avail: list[str]) -> str:
        if avail and self.chance(0.8):
            return self.pick(avail)
        return str(int(self.rng.integers(-4, 17)))

    def arith(self, avail: list[str], floats: list[str]) -> None:
        live = [e for e in self.exprs if e[0] == "i32" and e[2] in avail and e[3] in avail]
        if live and self.chance(0.25):
            _, op, a, b = self.pick(live)
            if op in ("add", "mul", "and", "or", "xor") and self.chance(0.5):
                a, b = b, a
        else:
            op = self.pick(INT_OPS)
            a, b = self.int_operand(avail), self.int_operand(avail)
            if op in ("shl", "ashr"):
                b = str(int(self.rng.integers(1, 5)))
        v = self.val()
        self.emit(f"{v} = {op} i32 {a}, {b}")
        self.exprs.append(("i32", op, a, b))
        avail.append(v)

    def float_arith(self, avail: list[str], floats: list[str]) -> None:
        if not floats or self.chance(0.3):
            src = self.int_operand(avail)
            f = self.val()
            self.emit(f"{f} = sitofp i32 {src} to double")
            floats.append(f)
            return
        op = self.pick(FLOAT_OPS)
        a = self.pick(floats)
        b = self.pick(floats) if self.chance(0.6) else "1.500000e+00"
        f = self.val()
        self.emit(f"{f} = {op} double {a}, {b}")
        floats.append(f)
        if self.chance(0.5):
            v = self.val()
            self.emit(f"{v} = fptosi double {f} to i32")
            avail.append(v)

    def call(self, avail: list[str]) -> None:
        name, arity = self.pick(self.callees)
        args = ", ".join(f"i32 {self.int_operand(avail)}" for _ in range(arity))
        v = self.val()
        self.emit(f"{v} = call i32 {name}({args})")
        avail.append(v)

    def memory(self, avail: list[str]) -> None:
        if self.slot is None:
            return self.arith(avail, [])
        if self.chance(0.5):
            self.emit(f"store i32 {self.int_operand(avail)}, i32* {self.slot}, align 4")
        else:
            v = self.val()
            self.emit(f"{v} = load i32, i32* {self.slot}, align 4")
            avail.append(v)

    def select(self, avail: list[str]) -> None:
        c = self.val()
        self.emit(f"{c} = icmp {self.pick(ICMP_PREDS)} i32 {self.int_operand(avail)}, {self.int_operand(avail)}")
        v = self.val()
        self.emit(f"{v} = select i1 {c}, i32 {self.int_operand(avail)}, i32 {self.int_operand(avail)}")
        avail.append(v)

    def condition(self, avail: list[str]) -> str:
        c = self.val()
        self.emit(f"{c} = icmp {self.pick(ICMP_PREDS)} i32 {self.int_operand(avail)}, {self.int_operand(avail)}")
        return c

    def if_else(self, avail: list[str], floats: list[str], depth: int) -> list[str]:
        c = self.condition(avail)
        head = self.block
        then, other, join = self.label("then"), self.label("else"), self.label("join")
        has_else = self.chance(0.6)
        self.emit(f"br i1 {c}, label %{then}, label %{other if has_else else join}")
        incoming: list[tuple[str, str]] = []
        self.start(then)
        a = self.region(list(avail), list(floats), depth + 1)
        incoming.append((a[-1] if len(a) > len(avail) else self.int_operand(avail), self.block))
        self.emit(f"br label %{join}")
        if has_else:
            self.start(other)
            b = self.region(list(avail), list(floats), depth + 1)
            incoming.append((b[-1] if len(b) > len(avail) else self.int_operand(avail), self.block))
            self.emit(f"br label %{join}")
        else:
            incoming.append((self.int_operand(avail), head))
        self.start(join)
        v = self.val()
        pairs = ", ".join(f"[ {x}, %{blk} ]" for x, blk in incoming)
        self.emit(f"{v} = phi i32 {pairs}")
        return avail + [v]

    def loop(self, avail: list[str], floats: list[str], depth: int) -> list[str]:
        pre = self.block
        hdr, body, latch, done = self.label("header"), self.label("body"), self.label("latch"), self.label("exit")
        i, acc, i_next, acc_next, c = self.val(), self.val(), self.val(), self.val(), self.val()
        bound = self.int_operand(avail)
        init = self.int_operand(avail)
        self.emit(f"br label %{hdr}")
        self.start(hdr)
        self.emit(f"{i} = phi i32 [ 0, %{pre} ], [ {i_next}, %{latch} ]")
        self.emit(f"{acc} = phi i32 [ {init}, %{pre} ], [ {acc_next}, %{latch} ]")
        self.emit(f"{c} = icmp slt i32 {i}, {bound}")
        self.emit(f"br i1 {c}, label %{body}, label %{done}")
        self.start(body)
        inner = self.region(avail + [i, acc], list(floats), depth + 1)
        self.emit(f"br label %{latch}")
        self.start(latch)
        self.emit(f"{acc_next} = add i32 {acc}, {self.pick(inner)}")
        self.emit(f"{i_next} = add nsw i32 {i}, 1")
        self.emit(f"br label %{hdr}")
        self.start(done)
        return avail + [i, acc]

    def switch(self, avail: list[str], floats: list[str], depth: int) -> list[str]:
        n = int(self.rng.integers(2, 4))
        cases = [self.label("case") for _ in range(n)]
        default, join = self.label("default"), self.label("endswitch")
        sel = self.pick(avail) if avail else "0"
        arms = " ".join(f"i32 {k}, label %{lbl}" for k, lbl in enumerate(cases))
        self.emit(f"switch i32 {sel}, label %{default} [ {arms} ]")
        incoming = []
        for lbl in cases + [default]:
            self.start(lbl)
            out = self.region(list(avail), list(floats), depth + 1, small=True)
            incoming.append((out[-1] if len(out) > len(avail) else self.int_operand(avail), self.block))
            self.emit(f"br label %{join}")
        self.start(join)
        v = self.val()
        self.emit(f"{v} = phi i32 " + ", ".join(f"[ {x}, %{b} ]" for x, b in incoming))
        return avail + [v]

    def region(self, avail: list[str], floats: list[str], depth: int, small: bool = False) -> list[str]:
        n = int(self.rng.integers(1, 3 if small else 5))
        for _ in range(n):
            if self.budget <= 0:
                break
            r = self.rng.random()
            nested = depth < self.max_depth and self.budget > 6
            if nested and r < 0.14:
                avail = self.if_else(avail, floats, depth)
            elif nested and r < 0.24:
                avail = self.loop(avail, floats, depth)
            elif nested and r < 0.27:
                avail = self.switch(avail, floats, depth)
            elif r < 0.37 and self.callees:
                self.call(avail)
            elif r < 0.45:
                self.memory(avail)
            elif r < 0.52:
                self.select(avail)
            elif r < 0.6:
                self.float_arith(avail, floats)
            else:
                self.arith(avail, floats)
        return avail

    def write(self, linkage: str) -> str:
        params = ", ".join(f"i32 {p}" for p in self.params)
        self.start("entry")
        avail = list(self.params)
        if self.chance(0.4):
            self.slot = "%slot"
            self.emit(f"{self.slot} = alloca i32, align 4")
        avail = self.region(avail, [], 0)
        while self.budget > 0 and self.chance(0.6):
            avail = self.region(avail, [], 0)
        result = avail[-1] if avail else "0"
        self.emit(f"ret i32 {result}")
        return f"define {linkage}i32 {self.name}({params}) {{\n" + "\n".join(self.lines) + "\n}\n"


def structured_program(rng: np.random.Generator, size: int = 24, max_functions: int = 3,
                       max_depth: int = 2) -> str:
    """A well-formed module of 1..max_functions functions with roughly
    ``size`` instructions in total."""
    n_fns = int(rng.integers(1, max_functions + 1))
    externals = [(f"@ext{k}", int(rng.integers(1, 3))) for k in range(int(rng.integers(0, 3)))]
    out: list[str] = []
    defined: list[tuple[str, int]] = []
    for k in range(n_fns):
        name = f"@fn{k}"
        arity = int(rng.integers(1, 4))
        callees = list(defined) + externals
        if rng.random() < 0.15:
            callees.append((name, arity))  # recursion
        budget = max(3, int(rng.integers(size // 2, size + 1)) // n_fns)
        writer = _FunctionWriter(rng, name, arity, callees, budget, max_depth)
        linkage = "internal " if k < n_fns - 1 and rng.random() < 0.5 else ""
        out.append(writer.write(linkage))
        defined.append((name, arity))
    decls = [f"declare i32 {name}({', '.join(['i32'] * arity)})\n" for name, arity in externals]
    return "".join(decls) + "\n" + "\n".join(out)


def random_cfg_program(rng: np.random.Generator, max_blocks: int = 5, max_insts: int = 3,
                       n_functions: int = 1) -> str:
    """Arbitrary control flow; operands are any earlier variable of the
    function regardless of dominance."""
    out = ["declare i32 @ext(i32)\n"]
    names = [f"@f{k}" for k in range(n_functions)]
    for fname in names:
        n_blocks = int(rng.integers(1, max_blocks + 1))
        labels = [f"b{k}" for k in range(n_blocks)]
        vars_: list[str] = ["%p"]
        exprs: list[tuple[str, str, str]] = []
        counter = 0
        body: list[str] = []

        def operand() -> str:
            if rng.random() < 0.75:
                return vars_[int(rng.integers(len(vars_)))]
            return str(int(rng.integers(0, 4)))

        for label in labels:
            body.append(f"{label}:")
            for _ in range(int(rng.integers(0, max_insts + 1))):
                counter += 1
                v = f"%x{counter}"
                r = rng.random()
                if exprs and r < 0.3:
                    op, a, b = exprs[int(rng.integers(len(exprs)))]
                    if op in ("add", "mul", "xor") and rng.random() < 0.5:
                        a, b = b, a
                    body.append(f"  {v} = {op} i32 {a}, {b}")
                elif r < 0.4 and n_blocks > 1:
                    srcs = [labels[int(k)] for k in rng.choice(n_blocks, size=2, replace=False)]
                    body.append(f"  {v} = phi i32 [ {operand()}, %{srcs[0]} ], [ {operand()}, %{srcs[1]} ]")
                elif r < 0.5:
                    callee = names[int(rng.integers(len(names)))] if rng.random() < 0.5 else "@ext"
                    body.append(f"  {v} = call i32 {callee}(i32 {operand()})")
                else:
                    op = ("add", "sub", "mul", "sdiv", "xor")[int(rng.integers(5))]
                    a, b = operand(), operand()
                    body.append(f"  {v} = {op} i32 {a}, {b}")
                    exprs.append((op, a, b))
                vars_.append(v)
            r = rng.random()
            if r < 0.2 or n_blocks == 1:
                body.append(f"  ret i32 {operand()}")
            elif r < 0.5:
                body.append(f"  br label %{labels[int(rng.integers(n_blocks))]}")
            elif r < 0.9:
                counter += 1
                c = f"%c{counter}"
                body.append(f"  {c} = icmp slt i32 {operand()}, {operand()}")
                a, b = labels[int(rng.integers(n_blocks))], labels[int(rng.integers(n_blocks))]
                body.append(f"  br i1 {c}, label %{a}, label %{b}")
                vars_.append(c)
            else:
                k = int(rng.integers(1, 3))
                arms = " ".join(f"i32 {j}, label %{labels[int(rng.integers(n_blocks))]}" for j in range(k))
                body.append(f"  switch i32 {operand()}, label %{labels[int(rng.integers(n_blocks))]} [ {arms} ]")
        out.append(f"define i32 {fname}(i32 %p) {{\n" + "\n".join(body) + "\n}\n")
    return "\n".join(out)


def loop_nest_program(depth: int, sequential: int = 1, body_statements: int = 2) -> str:
    """``sequential`` copies of a perfect loop nest of the given depth.
    Loop connectedness of the resulting control flow graph is ``depth``."""
    lines = ["define i32 @nest(i32 %n) {", "entry:"]
    counter = [0]

    def fresh(prefix: str) -> str:
        counter[0] += 1
        return f"{prefix}{counter[0]}"

    acc = "%n"
    current = "entry"

    def nest(level: int, acc_in: str, pre: str) -> tuple[str, str]:
        hdr, body, latch, done = fresh("h"), fresh("b"), fresh("l"), fresh("x")
        i, i_next, acc_phi, acc_next, c = (f"%{fresh('v')}" for _ in range(5))
        lines.append(f"  br label %{hdr}")
        lines.append(f"{hdr}:")
        lines.append(f"  {i} = phi i32 [ 0, %{pre} ], [ {i_next}, %{latch} ]")
        lines.append(f"  {acc_phi} = phi i32 [ {acc_in}, %{pre} ], [ {acc_next}, %{latch} ]")
        lines.append(f"  {c} = icmp slt i32 {i}, %n")
        lines.append(f"  br i1 {c}, label %{body}, label %{done}")
        lines.append(f"{body}:")
        value, block = acc_phi, body
        for _ in range(body_statements):
            t = f"%{fresh('t')}"
            lines.append(f"  {t} = add i32 {value}, {i}")
            value = t
        if level > 1:
            value, block = nest(level - 1, value, block)
        lines.append(f"  br label %{latch}")
        lines.append(f"{latch}:")
        lines.append(f"  {acc_next} = mul i32 {value}, 3")
        lines.append(f"  {i_next} = add nsw i32 {i}, 1")
        lines.append(f"  br label %{hdr}")
        lines.append(f"{done}:")
        return acc_phi, done

    for _ in range(sequential):
        acc, current = nest(depth, acc, current)
    lines.append(f"  ret i32 {acc}")
    lines.append("}")
    return "\n".join(lines) + "\n"
