"""Parser, data model and validator for a textual LLVM-IR subset."""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Callable, Iterator

TERMINATORS = frozenset({"ret", "br", "switch", "unreachable"})
BINARY_OPS = frozenset({
    "add", "sub", "mul", "sdiv", "udiv", "fdiv", "and", "or", "xor", "shl",
    "lshr", "ashr", "fadd", "fsub", "fmul", "srem", "urem", "frem",
})
CAST_OPS = frozenset({
    "zext", "sext", "trunc", "bitcast", "ptrtoint", "inttoptr", "fptrunc",
    "fpext", "fptoui", "fptosi", "uitofp", "sitofp", "addrspacecast",
})
CMP_OPS = frozenset({"icmp", "fcmp"})
CONST_EXPR_OPS = CAST_OPS | BINARY_OPS | {"getelementptr", "icmp", "fcmp", "select"}

ARITH_FLAGS = frozenset({
    "nuw", "nsw", "exact", "fast", "nnan", "ninf", "nsz", "arcp", "contract",
    "afn", "reassoc", "disjoint", "inbounds", "volatile", "tail", "musttail",
    "notail", "inalloca", "samesign", "nneg",
})
LINKAGES = frozenset({
    "private", "internal", "available_externally", "linkonce", "weak",
    "common", "appending", "extern_weak", "linkonce_odr", "weak_odr",
    "external",
})
# Parameter, return and function attributes plus other decorations that
# carry no operand information.
SKIP_WORDS = frozenset({
    "hidden", "protected", "default", "dllimport", "dllexport", "dso_local",
    "dso_preemptable", "ccc", "fastcc", "coldcc", "swiftcc", "tailcc",
    "cc", "zeroext", "signext", "inreg", "byval", "sret", "noalias",
    "nocapture", "nonnull", "nest", "returned", "noundef", "readonly",
    "readnone", "writeonly", "immarg", "noinline", "nounwind", "uwtable",
    "optnone", "unnamed_addr", "local_unnamed_addr", "thread_local",
    "externally_initialized", "swifterror", "swiftself", "allocalign",
    "allocptr", "noext", "preallocated",
})
ATTRS_WITH_ARGS = frozenset({
    "dereferenceable", "dereferenceable_or_null", "align", "alignstack",
    "byval", "sret", "elementtype", "inalloca", "preallocated", "addrspace",
    "range", "nofpclass", "captures", "initializes", "memory",
})
SIMPLE_TYPES = frozenset({
    "void", "half", "bfloat", "float", "double", "x86_fp80", "fp128",
    "ppc_fp128", "label", "metadata", "x86_mmx", "x86_amx", "token", "ptr",
    "opaque",
})
LITERAL_WORDS = frozenset({
    "true", "false", "null", "undef", "poison", "zeroinitializer", "none",
})


class IRSyntaxError(SyntaxError):
    """Malformed IR text; carries 1-based line and column."""

    def __init__(self, message: str, line: int, column: int, path: str = "<string>"):
        super().__init__(f"{path}:{line}:{column}: {message}")
        self.message = message
        self.line = line
        self.column = column
        self.path = path


class ValidationError(ValueError):
    def __init__(self, diagnostics: list[Diagnostic]):
        self.diagnostics = diagnostics
        super().__init__("\n".join(str(d) for d in diagnostics))


@dataclass(frozen=True)
class Diagnostic:
    path: str
    line: int
    column: int
    severity: str
    code: str
    message: str

    def __str__(self) -> str:
        return f"{self.path}:{self.line}:{self.column}: {self.severity}: {self.message}"


@dataclass(frozen=True)
class Operand:
    kind: str  # Variable | Constant | FunctionRef | Label
    text: str
    type_text: str

    @property
    def literal(self) -> str:
        if self.kind == "Constant":
            return self.text[len(self.type_text) + 1:]
        return self.text


@dataclass
class IRInstruction:
    opcode: str
    result: str | None
    result_type: str | None
    operands: list[Operand]
    # Opcode-specific syntax needed to print the instruction back:
    # comparison predicate, flags, and the auxiliary type (cast target,
    # alloca/load/gep element type, call signature).
    predicate: str | None = None
    flags: tuple[str, ...] = ()
    extra_type: str | None = None
    lossy: bool = False
    raw_text: str = field(default="", compare=False)
    block: str = field(default="", compare=False)
    index_in_block: int = field(default=0, compare=False)
    line: int = field(default=0, compare=False)
    column: int = field(default=0, compare=False)

    @property
    def is_terminator(self) -> bool:
        return self.opcode in TERMINATORS


@dataclass
class IRBlock:
    label: str
    instructions: list[IRInstruction] = field(default_factory=list)
    line: int = field(default=0, compare=False)


@dataclass
class IRFunction:
    name: str
    is_definition: bool
    is_externally_visible: bool
    return_type: str
    params: list[tuple[str | None, str]]
    blocks: list[IRBlock] = field(default_factory=list)
    linkage: str = "external"
    line: int = field(default=0, compare=False)

    @property
    def entry(self) -> IRBlock:
        return self.blocks[0]

    def instructions(self) -> Iterator[IRInstruction]:
        for block in self.blocks:
            yield from block.instructions


@dataclass
class GlobalConstant:
    name: str
    type_text: str
    initializer: str | None
    is_constant: bool
    linkage: str = "external"


@dataclass
class IRModule:
    functions: list[IRFunction] = field(default_factory=list)
    globals: list[GlobalConstant] = field(default_factory=list)
    source_path: str = "<string>"
    type_defs: dict[str, str] = field(default_factory=dict)
    unresolved_callees: list[str] = field(default_factory=list)

    def function(self, name: str) -> IRFunction | None:
        for fn in self.functions:
            if fn.name == name:
                return fn
        return None

    def global_var(self, name: str) -> GlobalConstant | None:
        for g in self.globals:
            if g.name == name:
                return g
        return None


# --------------------------------------------------------------------------
# Tokenizer

@dataclass(frozen=True)
class Token:
    kind: str
    text: str
    line: int
    col: int


_NAME = r'(?:[-a-zA-Z$._][-a-zA-Z$._0-9]*|\d+|"[^"\n]*")'
_TOKEN_RE = re.compile(
    r"(?P<nl>\n)"
    r"|(?P<ws>[ \t\r\f]+)"
    r"|(?P<comment>;[^\n]*)"
    r'|(?P<str>c?"[^"\n]*")'
    r"|(?P<local>%" + _NAME + r")"
    r"|(?P<global>@" + _NAME + r")"
    r"|(?P<meta>!(?:[-a-zA-Z$._0-9]+)?)"
    r"|(?P<attr>\#\d+)"
    r"|(?P<comdat>\$[-a-zA-Z$._0-9]+)"
    r"|(?P<label>(?:[-a-zA-Z$._0-9]+|\"[^\"\n]*\"):)"
    r"|(?P<hexfp>0x[KLMHR]?[0-9A-Fa-f]+)"
    r"|(?P<num>[-+]?(?:\d+\.\d*(?:[eE][-+]?\d+)?|\d+[eE][-+]?\d+|\d+))"
    r"|(?P<word>[a-zA-Z_][a-zA-Z_0-9.]*)"
    r"|(?P<punct>\.\.\.|[()\[\]{}<>,=*|:])"
)
_OLD_LABEL_RE = re.compile(r";\s*<label>:(\d+)")


def tokenize(source: str, path: str = "<string>") -> list[Token]:
    tokens: list[Token] = []
    pos, line, line_start = 0, 1, 0
    n = len(source)
    while pos < n:
        m = _TOKEN_RE.match(source, pos)
        if m is None:
            raise IRSyntaxError(
                f"unexpected character {source[pos]!r}", line, pos - line_start + 1, path
            )
        kind = m.lastgroup
        text = m.group()
        col = pos - line_start + 1
        if kind == "nl":
            tokens.append(Token("nl", text, line, col))
            line += 1
            line_start = m.end()
        elif kind == "comment":
            old = _OLD_LABEL_RE.match(text)
            if old and (not tokens or tokens[-1].kind == "nl"):
                tokens.append(Token("label", old.group(1) + ":", line, col))
        elif kind != "ws":
            if kind == "label" and tokens and tokens[-1].kind != "nl":
                # "x:" only names a block at the start of a line
                tokens.append(Token("word", text[:-1], line, col))
                tokens.append(Token("punct", ":", line, col + len(text) - 1))
            else:
                tokens.append(Token(kind, text, line, col))
        pos = m.end()
    tokens.append(Token("nl", "\n", line, pos - line_start + 1))
    return tokens


def _logical_lines(tokens: list[Token]) -> list[list[Token]]:
    """Group tokens into statements: newlines inside brackets are ignored,
    and function-body braces split their own lines."""
    lines: list[list[Token]] = []
    cur: list[Token] = []
    depth = 0
    for tok in tokens:
        if tok.kind == "nl":
            if depth == 0 and cur:
                lines.append(cur)
                cur = []
            continue
        if tok.kind == "label" and depth == 0 and cur:
            lines.append(cur)
            cur = []
        if tok.text in ("(", "[") and tok.kind == "punct":
            depth += 1
        elif tok.text in (")", "]") and tok.kind == "punct":
            depth = max(depth - 1, 0)
        elif tok.text == "{" and tok.kind == "punct":
            if depth == 0 and cur and cur[0].text == "define":
                cur.append(tok)
                lines.append(cur)
                cur = []
                continue
            depth += 1
        elif tok.text == "}" and tok.kind == "punct":
            if depth == 0:
                if cur:
                    lines.append(cur)
                lines.append([tok])
                cur = []
                continue
            depth -= 1
        cur.append(tok)
        if tok.kind == "label" and depth == 0:
            lines.append(cur)
            cur = []
    if cur:
        lines.append(cur)
    return lines


def join_tokens(texts: list[str]) -> str:
    """Canonical spacing for a token sequence."""
    out = ""
    for t in texts:
        if not out:
            out = t
        elif t in (",", ")", "]", "*", ">") or out[-1] in "([<" or (t == "(" and out[-1] != ","):
            out += t
        else:
            out += " " + t
    return out


# --------------------------------------------------------------------------
# Statement parser

class _Stmt:
    """Cursor over the tokens of one logical line."""

    def __init__(self, tokens: list[Token], path: str):
        self.toks = tokens
        self.i = 0
        self.path = path

    def error(self, message: str, tok: Token | None = None) -> IRSyntaxError:
        tok = tok or self.peek() or self.toks[-1]
        return IRSyntaxError(message, tok.line, tok.col, self.path)

    def peek(self, k: int = 0) -> Token | None:
        j = self.i + k
        return self.toks[j] if j < len(self.toks) else None

    def at(self, text: str) -> bool:
        tok = self.peek()
        return tok is not None and tok.text == text and tok.kind in ("punct", "word")

    def done(self) -> bool:
        return self.i >= len(self.toks)

    def next(self) -> Token:
        tok = self.peek()
        if tok is None:
            raise self.error("unexpected end of statement", self.toks[-1])
        self.i += 1
        return tok

    def expect(self, text: str) -> Token:
        tok = self.peek()
        if tok is None or tok.text != text:
            found = tok.text if tok else "end of statement"
            raise self.error(f"expected {text!r}, found {found!r}")
        self.i += 1
        return tok

    def accept(self, text: str) -> bool:
        if self.at(text):
            self.i += 1
            return True
        return False

    def skip_balanced(self) -> list[str]:
        """Consume one bracketed group (the opener must be current)."""
        opener = self.next()
        closer = {"(": ")", "[": "]", "{": "}", "<": ">"}[opener.text]
        out = [opener.text]
        depth = 1
        while depth:
            tok = self.next()
            if tok.text == opener.text and tok.kind == "punct":
                depth += 1
            elif tok.text == closer and tok.kind == "punct":
                depth -= 1
            out.append(tok.text)
        return out

    def skip_attrs(self) -> None:
        while True:
            tok = self.peek()
            if tok is None:
                return
            if tok.kind == "attr":
                self.i += 1
            elif tok.kind == "word" and tok.text in ATTRS_WITH_ARGS and self._arg_follows():
                self.i += 1
                if self.at("("):
                    self.skip_balanced()
                else:
                    self.next()
            elif tok.kind == "word" and tok.text in SKIP_WORDS:
                self.i += 1
                if tok.text == "cc":
                    self.next()
            else:
                return

    def _arg_follows(self) -> bool:
        nxt = self.peek(1)
        return nxt is not None and (nxt.text == "(" or nxt.kind == "num")

    # -- types ------------------------------------------------------------

    def parse_type(self) -> str:
        tok = self.peek()
        if tok is None:
            raise self.error("expected type", self.toks[-1])
        if tok.kind == "word" and (tok.text in SIMPLE_TYPES or re.fullmatch(r"i\d+", tok.text)):
            self.i += 1
            ty = tok.text
        elif tok.kind == "local":
            self.i += 1
            ty = tok.text
        elif tok.text == "[":
            self.i += 1
            count = self.next()
            self.expect("x")
            elem = self.parse_type()
            self.expect("]")
            ty = f"[{count.text} x {elem}]"
        elif tok.text == "<":
            self.i += 1
            if self.at("{"):
                ty = "<" + self._struct_body() + ">"
                self.expect(">")
            else:
                prefix = ""
                if self.accept("vscale"):
                    self.expect("x")
                    prefix = "vscale x "
                count = self.next()
                self.expect("x")
                elem = self.parse_type()
                self.expect(">")
                ty = f"<{prefix}{count.text} x {elem}>"
        elif tok.text == "{":
            ty = self._struct_body()
        else:
            raise self.error(f"expected type, found {tok.text!r}")
        while True:
            if self.at("*"):
                self.i += 1
                ty += "*"
            elif self.at("addrspace") and self.peek(1) and self.peek(1).text == "(":
                self.i += 1
                ty += " addrspace" + join_tokens(self.skip_balanced())
            elif self.at("(") and self._looks_like_fn_type():
                self.i += 1
                params: list[str] = []
                while not self.at(")"):
                    if self.accept("..."):
                        params.append("...")
                    else:
                        params.append(self.parse_type())
                        self.skip_attrs()
                    if not self.accept(","):
                        break
                self.expect(")")
                ty = f"{ty} ({', '.join(params)})"
            else:
                return ty

    def _looks_like_fn_type(self) -> bool:
        nxt = self.peek(1)
        if nxt is None:
            return False
        if nxt.text in (")", "...", "[", "{", "<") or nxt.kind == "local":
            return True
        return nxt.kind == "word" and (nxt.text in SIMPLE_TYPES or re.fullmatch(r"i\d+", nxt.text) is not None)

    def _struct_body(self) -> str:
        self.expect("{")
        elems: list[str] = []
        while not self.at("}"):
            elems.append(self.parse_type())
            if not self.accept(","):
                break
        self.expect("}")
        return "{ " + ", ".join(elems) + " }" if elems else "{}"

    # -- values -------------------------------------------------------------

    def parse_value(self, ty: str) -> Operand:
        tok = self.peek()
        if tok is None:
            raise self.error("expected value", self.toks[-1])
        if tok.kind == "local":
            self.i += 1
            return Operand("Variable", tok.text, ty)
        if tok.kind == "global":
            self.i += 1
            # classified as FunctionRef or Variable once the module is known
            return Operand("Global", tok.text, ty)
        if tok.kind in ("num", "hexfp", "str") or (tok.kind == "word" and tok.text in LITERAL_WORDS):
            self.i += 1
            return Operand("Constant", f"{ty} {tok.text}", ty)
        if tok.text in ("[", "{", "<"):
            parts: list[str] = []
            if tok.text == "<" and self.peek(1) and self.peek(1).text == "{":
                self.i += 1
                parts = ["<"] + self.skip_balanced() + [self.expect(">").text]
            else:
                parts = self.skip_balanced()
            return Operand("Constant", f"{ty} {join_tokens(parts)}", ty)
        if tok.kind == "meta" or ty == "metadata":
            parts = []
            while not self.done() and not self.at(",") and not self.at(")"):
                if self.peek().text in ("(", "{", "["):
                    parts += self.skip_balanced()
                else:
                    parts.append(self.next().text)
            return Operand("Constant", f"{ty} {join_tokens(parts)}", ty)
        if tok.kind == "word" and (tok.text in CONST_EXPR_OPS or tok.text in ("blockaddress", "dso_local_equivalent", "no_cfi")):
            parts = [self.next().text]
            while self.peek() is not None and self.peek().kind == "word" and self.peek().text in ARITH_FLAGS | {"eq", "ne", "ugt", "uge", "ult", "ule", "sgt", "sge", "slt", "sle"}:
                parts.append(self.next().text)
            if self.at("("):
                parts += self.skip_balanced()
            return Operand("Constant", f"{ty} {join_tokens(parts)}", ty)
        raise self.error(f"expected value, found {tok.text!r}")

    def parse_typed_value(self) -> Operand:
        ty = self.parse_type()
        self.skip_attrs()
        return self.parse_value(ty)

    def parse_label(self) -> Operand:
        self.expect("label")
        tok = self.next()
        if tok.kind != "local":
            raise self.error("expected block label", tok)
        return Operand("Label", tok.text, "label")


def _strip_trailing(tokens: list[Token]) -> list[Token]:
    """Drop metadata attachments, attribute groups and `, align N`-style
    clauses that never become operands."""
    out: list[Token] = []
    i = 0
    depth = 0
    while i < len(tokens):
        tok = tokens[i]
        if tok.kind == "attr":
            i += 1
            continue
        if tok.kind == "punct" and tok.text in "([{":
            depth += 1
        elif tok.kind == "punct" and tok.text in ")]}":
            depth -= 1
        if depth == 0 and tok.text == "," and i + 1 < len(tokens):
            nxt = tokens[i + 1]
            if nxt.kind == "meta":
                break  # metadata attachments run to end of statement
            if nxt.kind == "word" and nxt.text in ("align", "addrspace", "section", "comdat", "partition", "sanitize_memtag", "no_sanitize_address"):
                j = i + 2
                while j < len(tokens) and not (tokens[j].text == "," and tokens[j].kind == "punct"):
                    j += 1
                i = j
                continue
        out.append(tok)
        i += 1
    return out


_FCMP_PREDICATES = frozenset({
    "false", "oeq", "ogt", "oge", "olt", "ole", "one", "ord", "ueq", "ugt",
    "uge", "ult", "ule", "une", "uno", "true",
})
_ICMP_PREDICATES = frozenset({"eq", "ne", "ugt", "uge", "ult", "ule", "sgt", "sge", "slt", "sle"})


def _parse_instruction(st: _Stmt) -> IRInstruction:
    first = st.toks[0]
    result = None
    if first.kind == "local" and len(st.toks) > 1 and st.toks[1].text == "=":
        result = first.text
        st.i = 2
    head = st.peek()
    if head is None:
        raise st.error("expected opcode", first)
    flags: list[str] = []
    while head is not None and head.kind == "word" and head.text in ("tail", "musttail", "notail"):
        flags.append(st.next().text)
        head = st.peek()
    if head is None or head.kind != "word":
        raise st.error("expected opcode", head or first)
    opcode = st.next().text
    inst = IRInstruction(opcode=opcode, result=result, result_type=None, operands=[])
    words = {t.text for t in st.toks}
    if (opcode == "call" and "asm" in words) or (opcode in ("load", "store") and "atomic" in words):
        inst.flags = tuple(flags)
        _parse_generic(st, inst)
        return inst

    def take_flags() -> None:
        while st.peek() is not None and st.peek().kind == "word" and st.peek().text in ARITH_FLAGS:
            flags.append(st.next().text)

    ops = inst.operands

    if opcode == "ret":
        if st.accept("void"):
            pass
        else:
            ops.append(st.parse_typed_value())
    elif opcode == "br":
        if st.at("label"):
            ops.append(st.parse_label())
        else:
            ops.append(st.parse_typed_value())
            st.expect(",")
            ops.append(st.parse_label())
            st.expect(",")
            ops.append(st.parse_label())
    elif opcode == "switch":
        ops.append(st.parse_typed_value())
        st.expect(",")
        ops.append(st.parse_label())
        st.expect("[")
        while not st.at("]"):
            ops.append(st.parse_typed_value())
            st.expect(",")
            ops.append(st.parse_label())
        st.expect("]")
    elif opcode == "unreachable":
        pass
    elif opcode in BINARY_OPS:
        take_flags()
        ty = st.parse_type()
        ops.append(st.parse_value(ty))
        st.expect(",")
        ops.append(st.parse_value(ty))
        inst.result_type = ty
    elif opcode == "fneg":
        take_flags()
        ty = st.parse_type()
        ops.append(st.parse_value(ty))
        inst.result_type = ty
    elif opcode in CMP_OPS:
        take_flags()
        pred = st.next()
        valid = _ICMP_PREDICATES if opcode == "icmp" else _FCMP_PREDICATES
        if pred.text not in valid:
            raise st.error(f"unknown {opcode} predicate {pred.text!r}", pred)
        inst.predicate = pred.text
        ty = st.parse_type()
        ops.append(st.parse_value(ty))
        st.expect(",")
        ops.append(st.parse_value(ty))
        m = re.fullmatch(r"<(\d+) x .*>", ty)
        inst.result_type = f"<{m.group(1)} x i1>" if m else "i1"
    elif opcode == "phi":
        take_flags()
        ty = st.parse_type()
        while True:
            st.expect("[")
            ops.append(st.parse_value(ty))
            st.expect(",")
            tok = st.next()
            if tok.kind != "local":
                raise st.error("expected block label", tok)
            ops.append(Operand("Label", tok.text, "label"))
            st.expect("]")
            if not st.accept(","):
                break
        inst.result_type = ty
    elif opcode == "call":
        take_flags()
        st.skip_attrs()
        take_flags()
        st.skip_attrs()
        fn_ty = st.parse_type()
        st.skip_attrs()
        callee = st.parse_value(fn_ty)
        ops.append(callee)
        st.expect("(")
        while not st.at(")"):
            ops.append(st.parse_typed_value())
            if not st.accept(","):
                break
        st.expect(")")
        inst.extra_type = fn_ty
        ret_ty = fn_ty.split(" (", 1)[0] if fn_ty.endswith(")") else fn_ty
        if ret_ty != "void":
            inst.result_type = ret_ty
    elif opcode == "load":
        take_flags()
        ty = st.parse_type()
        if st.accept(","):
            inst.extra_type = ty
            ops.append(st.parse_typed_value())
            inst.result_type = ty
        else:
            ops.append(st.parse_value(ty))
            inst.result_type = ty[:-1] if ty.endswith("*") else ty
    elif opcode == "store":
        take_flags()
        ops.append(st.parse_typed_value())
        st.expect(",")
        ops.append(st.parse_typed_value())
    elif opcode == "alloca":
        take_flags()
        ty = st.parse_type()
        inst.extra_type = ty
        if st.accept(","):
            ops.append(st.parse_typed_value())
        inst.result_type = ty + "*"
    elif opcode == "getelementptr":
        take_flags()
        ty = st.parse_type()
        if st.accept(","):
            inst.extra_type = ty
            ops.append(st.parse_typed_value())
        else:
            ops.append(st.parse_value(ty))
        while st.accept(","):
            take_flags()
            ops.append(st.parse_typed_value())
        inst.result_type = ops[0].type_text
    elif opcode in CAST_OPS:
        ops.append(st.parse_typed_value())
        st.expect("to")
        inst.extra_type = st.parse_type()
        inst.result_type = inst.extra_type
    elif opcode == "select":
        take_flags()
        ops.append(st.parse_typed_value())
        st.expect(",")
        ops.append(st.parse_typed_value())
        st.expect(",")
        ops.append(st.parse_typed_value())
        inst.result_type = ops[1].type_text
    else:
        _parse_generic(st, inst)
        return inst
    st.skip_attrs()
    if not st.done():
        raise st.error(f"unexpected {st.peek().text!r} after {opcode}")
    inst.flags = tuple(flags)
    return inst


def _parse_generic(st: _Stmt, inst: IRInstruction) -> None:
    """Best-effort fallback: split the remainder on top-level commas and keep
    any identifier or literal found in each piece."""
    inst.lossy = True
    pieces: list[list[Token]] = [[]]
    depth = 0
    while not st.done():
        tok = st.next()
        if tok.kind == "punct" and tok.text in "([{<":
            depth += 1
        elif tok.kind == "punct" and tok.text in ")]}>":
            depth -= 1
        if tok.text == "," and depth == 0:
            pieces.append([])
        else:
            pieces[-1].append(tok)
    for piece in pieces:
        if not piece:
            continue
        last = piece[-1]
        ty = join_tokens([t.text for t in piece[:-1]]) or "?"
        if last.kind == "local":
            inst.operands.append(Operand("Variable", last.text, ty))
        elif last.kind == "global":
            inst.operands.append(Operand("Global", last.text, ty))
        elif last.kind in ("num", "hexfp") or (last.kind == "word" and last.text in LITERAL_WORDS):
            inst.operands.append(Operand("Constant", f"{ty} {last.text}", ty))


def _parse_params(st: _Stmt, require_names: bool) -> list[tuple[str | None, str]]:
    params: list[tuple[str | None, str]] = []
    st.expect("(")
    while not st.at(")"):
        if st.accept("..."):
            params.append((None, "..."))
        else:
            ty = st.parse_type()
            st.skip_attrs()
            name = None
            if st.peek() is not None and st.peek().kind == "local":
                name = st.next().text
            params.append((name, ty))
        if not st.accept(","):
            break
    st.expect(")")
    return params


def _parse_header(st: _Stmt) -> IRFunction:
    kw = st.next().text
    linkage = "external"
    while True:
        tok = st.peek()
        if tok is None:
            raise st.error("truncated function header", st.toks[-1])
        if tok.kind == "word" and tok.text in LINKAGES:
            linkage = st.next().text
        elif tok.kind == "word" and (tok.text in SKIP_WORDS or tok.text in ATTRS_WITH_ARGS) or tok.kind == "attr":
            st.skip_attrs()
            if st.peek() is tok:
                break
        else:
            break
    ret = st.parse_type()
    st.skip_attrs()
    name_tok = st.next()
    if name_tok.kind != "global":
        raise st.error("expected function name", name_tok)
    params = _parse_params(st, kw == "define")
    is_def = kw == "define"
    if is_def:
        if st.toks[-1].text != "{":
            raise st.error("expected '{' to open function body", st.toks[-1])
    return IRFunction(
        name=name_tok.text,
        is_definition=is_def,
        is_externally_visible=linkage not in ("private", "internal"),
        return_type=ret,
        params=params,
        linkage=linkage,
        line=name_tok.line,
    )


def _parse_global(st: _Stmt) -> GlobalConstant | None:
    name = st.next().text
    st.expect("=")
    linkage = "external"
    while not st.done() and st.peek().kind in ("word", "attr", "punct"):
        tok = st.peek()
        if tok.text in ("global", "constant"):
            break
        if tok.text in ("alias", "ifunc"):
            return GlobalConstant(name, "ptr", None, False, linkage)
        if tok.text in LINKAGES:
            linkage = tok.text
        st.i += 1
        if tok.text in ATTRS_WITH_ARGS and st.at("("):
            st.skip_balanced()
    if st.done():
        raise st.error("expected 'global' or 'constant'", st.toks[-1])
    is_const = st.next().text == "constant"
    ty = st.parse_type()
    rest = _strip_trailing(st.toks[st.i:])
    init = join_tokens([t.text for t in rest]) if rest else None
    return GlobalConstant(name, ty, init, is_const, linkage)


def parse_ir(source: str | bytes, path: str = "<string>", validate_module: bool = True) -> IRModule:
    """Parse IR text into an IRModule.

    Raises IRSyntaxError for malformed text and, unless ``validate_module``
    is false, ValidationError when structural invariants are broken.
    """
    if isinstance(source, bytes):
        try:
            source = source.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise IRSyntaxError(f"invalid UTF-8: {exc.reason}", 1, 1, path) from None
    module = IRModule(source_path=path)
    lines = _logical_lines(tokenize(source, path))
    fn: IRFunction | None = None
    block: IRBlock | None = None
    for toks in lines:
        first = toks[0]
        st = _Stmt(toks, path)
        if fn is None:
            if first.text == "}":
                raise st.error("unmatched '}'", first)
            if first.kind == "word" and first.text == "define":
                fn = _parse_header(st)
                module.functions.append(fn)
                block = None
            elif first.kind == "word" and first.text == "declare":
                module.functions.append(_parse_header(st))
            elif first.kind == "local" and len(toks) > 2 and toks[1].text == "=" and toks[2].text == "type":
                st.i = 3
                if st.accept("opaque"):
                    module.type_defs[first.text] = "opaque"
                else:
                    module.type_defs[first.text] = st.parse_type()
            elif first.kind == "global" and len(toks) > 1 and toks[1].text == "=":
                g = _parse_global(st)
                if g is not None:
                    module.globals.append(g)
            elif first.kind in ("word", "meta", "attr", "comdat"):
                continue  # target, source_filename, attributes, metadata
            else:
                raise st.error(f"unexpected {first.text!r} at top level", first)
            continue
        if first.text == "}" and first.kind == "punct":
            if not fn.blocks:
                pass
            fn = None
            block = None
            continue
        if first.kind == "label":
            label = first.text[:-1]
            if label.startswith('"'):
                label = label[1:-1]
            block = IRBlock(label="%" + label, line=first.line)
            fn.blocks.append(block)
            continue
        if block is None:
            unnamed = sum(1 for name, _ in fn.params if name is not None and name[1:].isdigit())
            block = IRBlock(label=f"%{unnamed}", line=first.line)
            fn.blocks.append(block)
        body = _strip_trailing(toks)
        st = _Stmt(body, path)
        inst = _parse_instruction(st)
        inst.raw_text = join_tokens([t.text for t in toks])
        inst.block = block.label
        inst.index_in_block = len(block.instructions)
        inst.line, inst.column = first.line, first.col
        block.instructions.append(inst)
    if fn is not None:
        last = lines[-1][-1] if lines else Token("nl", "", 1, 1)
        raise IRSyntaxError(f"unterminated function body of {fn.name}", last.line, last.col, path)
    _resolve_globals(module)
    if validate_module:
        errors = [d for d in validate(module) if d.severity == "error"]
        if errors:
            raise ValidationError(errors)
    return module


def _resolve_globals(module: IRModule) -> None:
    functions = {fn.name for fn in module.functions}
    global_vars = {g.name for g in module.globals}
    unresolved: list[str] = []
    for fn in module.functions:
        for inst in fn.instructions():
            for k, op in enumerate(inst.operands):
                if op.kind != "Global":
                    continue
                is_callee = inst.opcode == "call" and k == 0
                if op.text in functions:
                    kind = "FunctionRef"
                elif op.text in global_vars:
                    kind = "Variable"
                elif is_callee:
                    kind = "FunctionRef"
                    if op.text not in unresolved:
                        unresolved.append(op.text)
                else:
                    kind = "Variable"
                inst.operands[k] = Operand(kind, op.text, op.type_text)
    module.unresolved_callees = unresolved


# --------------------------------------------------------------------------
# Validation

def validate(module: IRModule) -> list[Diagnostic]:
    """Structural checks; returns an empty list for a well-formed module."""
    diags: list[Diagnostic] = []
    path = module.source_path

    def report(line: int, col: int, code: str, message: str, severity: str = "error") -> None:
        diags.append(Diagnostic(path, line, col, severity, code, message))

    seen_fns: set[str] = set()
    for fn in module.functions:
        if fn.name in seen_fns:
            report(fn.line, 1, "duplicate-function", f"function {fn.name} defined more than once")
        seen_fns.add(fn.name)
        if not fn.is_definition:
            continue
        if not fn.blocks:
            report(fn.line, 1, "empty-function", f"definition of {fn.name} has no blocks")
            continue
        labels: set[str] = set()
        for block in fn.blocks:
            if block.label in labels:
                report(block.line, 1, "duplicate-label", f"block label {block.label} repeated in {fn.name}")
            labels.add(block.label)
        defined: set[str] = {name for name, _ in fn.params if name is not None}
        for block in fn.blocks:
            if not block.instructions:
                report(block.line, 1, "missing-terminator", f"block {block.label} in {fn.name} is empty")
                continue
            for inst in block.instructions:
                last = inst is block.instructions[-1]
                if inst.is_terminator and not last:
                    report(inst.line, inst.column, "misplaced-terminator",
                           f"terminator {inst.opcode} before end of block {block.label}")
                if last and not inst.is_terminator:
                    report(inst.line, inst.column, "missing-terminator",
                           f"block {block.label} in {fn.name} does not end in a terminator")
                if inst.result is not None:
                    if inst.result in defined:
                        report(inst.line, inst.column, "duplicate-definition",
                               f"{inst.result} defined more than once in {fn.name}")
                    defined.add(inst.result)
                for op in inst.operands:
                    if op.kind != "Label":
                        continue
                    if op.text not in labels:
                        report(inst.line, inst.column, "undefined-label",
                               f"reference to undefined block {op.text} in {fn.name}")
                    if not (inst.is_terminator or inst.opcode == "phi"):
                        report(inst.line, inst.column, "label-operand",
                               f"label operand in non-branch instruction {inst.opcode}")
        for inst in fn.instructions():
            for op in inst.operands:
                if op.kind == "FunctionRef" and module.function(op.text) is None and op.text not in module.unresolved_callees:
                    report(inst.line, inst.column, "unresolved-function", f"unknown function {op.text}")
    return diags


# --------------------------------------------------------------------------
# Printing

def _identity(x: str) -> str:
    return x


def format_instruction(
    inst: IRInstruction,
    value: Callable[[Operand], str] | None = None,
    typ: Callable[[str], str] = _identity,
) -> str:
    """Render an instruction as IR text.

    ``value`` maps an operand to the text printed for it (without its type)
    and ``typ`` rewrites type text; both default to the parsed spelling.
    """
    if value is None:
        def value(op: Operand) -> str:
            return op.literal

    def typed(op: Operand) -> str:
        if op.kind == "Label":
            return f"label {value(op)}"
        return f"{typ(op.type_text)} {value(op)}"

    ops = inst.operands
    op = inst.opcode
    tails = [f for f in inst.flags if f in ("tail", "musttail", "notail")]
    head = " ".join(tails + [op] + [f for f in inst.flags if f not in tails])
    if inst.lossy:
        body = inst.raw_text.split("=", 1)[1].strip() if inst.result else inst.raw_text
        rendered = body
        for o in ops:
            rendered = rendered.replace(o.literal, value(o)) if o.kind == "Constant" else re.sub(
                re.escape(o.text) + r"(?![-a-zA-Z$._0-9])", lambda _m, o=o: value(o), rendered)
        text = rendered
    elif op == "ret":
        text = "ret " + (typed(ops[0]) if ops else "void")
    elif op == "br":
        text = "br " + ", ".join(typed(o) for o in ops)
    elif op == "switch":
        cases = " ".join(f"{typed(ops[i])}, {typed(ops[i + 1])}" for i in range(2, len(ops), 2))
        text = f"switch {typed(ops[0])}, {typed(ops[1])} [{cases}]"
    elif op == "unreachable":
        text = "unreachable"
    elif op in BINARY_OPS:
        text = f"{head} {typ(inst.result_type)} {value(ops[0])}, {value(ops[1])}"
    elif op == "fneg":
        text = f"{head} {typ(inst.result_type)} {value(ops[0])}"
    elif op in CMP_OPS:
        text = f"{head} {inst.predicate} {typ(ops[0].type_text)} {value(ops[0])}, {value(ops[1])}"
    elif op == "phi":
        pairs = ", ".join(f"[{value(ops[i])}, {value(ops[i + 1])}]" for i in range(0, len(ops), 2))
        text = f"{head} {typ(inst.result_type)} {pairs}"
    elif op == "call":
        callee = ops[0]
        args = ", ".join(typed(o) for o in ops[1:])
        text = f"{head} {typ(inst.extra_type)} {value(callee)}({args})"
    elif op == "load":
        if inst.extra_type is not None:
            text = f"{head} {typ(inst.extra_type)}, {typed(ops[0])}"
        else:
            text = f"{head} {typed(ops[0])}"
    elif op == "store":
        text = f"{head} {typed(ops[0])}, {typed(ops[1])}"
    elif op == "alloca":
        text = f"{head} {typ(inst.extra_type)}" + (f", {typed(ops[0])}" if ops else "")
    elif op == "getelementptr":
        parts = [typed(o) for o in ops]
        if inst.extra_type is not None:
            parts.insert(0, typ(inst.extra_type))
        text = f"{head} " + ", ".join(parts)
    elif op in CAST_OPS:
        text = f"{head} {typed(ops[0])} to {typ(inst.extra_type)}"
    elif op == "select":
        text = f"{head} " + ", ".join(typed(o) for o in ops)
    else:
        raise ValueError(f"cannot format opcode {op!r}")
    if inst.result is not None:
        res = value(Operand("Variable", inst.result, inst.result_type or "?"))
        return f"{res} = {text}"
    return text


def format_module(module: IRModule) -> str:
    out: list[str] = []
    for name, body in module.type_defs.items():
        out.append(f"{name} = type {body}")
    for g in module.globals:
        kw = "constant" if g.is_constant else "global"
        init = f" {g.initializer}" if g.initializer else ""
        out.append(f"{g.name} = {g.linkage} {kw} {g.type_text}{init}")
    for fn in module.functions:
        params = ", ".join(ty if name is None else f"{ty} {name}" for name, ty in fn.params)
        linkage = "" if fn.linkage == "external" else fn.linkage + " "
        if not fn.is_definition:
            out.append(f"declare {fn.return_type} {fn.name}({params})")
            continue
        out.append(f"define {linkage}{fn.return_type} {fn.name}({params}) {{")
        for block in fn.blocks:
            label = block.label[1:]
            if not re.fullmatch(r"[-a-zA-Z$._0-9]+", label):
                label = f'"{label}"'
            out.append(f"{label}:")
            for inst in block.instructions:
                out.append("  " + format_instruction(inst))
        out.append("}")
    return "\n".join(out) + "\n"
