"""Text format for protocols.

One protocol per file::

    protocol nslx
    vars A:Agent B:Agent NA:Nonce NB:Nonce
    fresh NA NB
    secret NA NB
    role A:
      send penc(seq(A, NA), pk(B))
      recv penc(seq(xor(NA, B), NB), pk(A))
      send penc(NB, pk(B))
    role B:
      ...

Identifiers starting with an upper-case letter are variables (sorts come
from ``vars`` declarations); everything else is a constant.  Constants
default to sort Data, are inferred Agent when used as a pk/sh argument, and
can be annotated explicitly (``nslx:Tag``).  ``#`` starts a comment, which
also guarantees the reserved ``#v``/``#c`` name spaces can never be written.
"""

from __future__ import annotations

from dataclasses import dataclass

from .protocol import Node, Protocol, Strand
from .terms import (
    ZERO,
    Const,
    PEnc,
    Pk,
    SEnc,
    Seq,
    Sh,
    Sort,
    Term,
    Var,
    Xor,
    XorsleuthError,
    SortError,
    Zero,
    normalize,
)

_SORTS = {s.value: s for s in Sort}
_CONSTRUCTORS = {"seq", "penc", "senc", "pk", "sh", "xor"}
_KEYWORDS = {"protocol", "vars", "fresh", "secret", "role", "send", "recv", "zero"}


class ProtocolSyntaxError(XorsleuthError):
    def __init__(self, message: str, line: int, col: int):
        super().__init__(f"{line}:{col}: {message}")
        self.line = line
        self.col = col


class UndeclaredIdentifier(ProtocolSyntaxError):
    pass


class DuplicateRole(ProtocolSyntaxError):
    pass


@dataclass(frozen=True)
class _Token:
    kind: str  # 'ident', '(', ')', ',', ':', 'eof'
    value: str
    line: int
    col: int


def _lex(text: str) -> list[_Token]:
    toks: list[_Token] = []
    line, col, i = 1, 1, 0
    n = len(text)
    while i < n:
        ch = text[i]
        if ch == "\n":
            line += 1
            col = 1
            i += 1
            continue
        if ch in " \t\r":
            i += 1
            col += 1
            continue
        if ch == "#":
            while i < n and text[i] != "\n":
                i += 1
            continue
        if ch in "(),:":
            toks.append(_Token(ch, ch, line, col))
            i += 1
            col += 1
            continue
        if ch.isalnum() or ch == "_":
            start = i
            startcol = col
            while i < n and (text[i].isalnum() or text[i] == "_"):
                i += 1
                col += 1
            toks.append(_Token("ident", text[start:i], line, startcol))
            continue
        raise ProtocolSyntaxError(f"unexpected character {ch!r}", line, col)
    toks.append(_Token("eof", "", line, col))
    return toks


# Raw syntax tree for terms: sorts of constants are resolved in a second
# pass, after every occurrence has been seen.
_Ast = tuple


class _Parser:
    def __init__(self, text: str):
        self.toks = _lex(text)
        self.pos = 0
        self.var_sorts: dict[str, Sort] = {}

    def peek(self, ahead: int = 0) -> _Token:
        return self.toks[min(self.pos + ahead, len(self.toks) - 1)]

    def next(self) -> _Token:
        t = self.toks[self.pos]
        if t.kind != "eof":
            self.pos += 1
        return t

    def expect(self, kind: str, what: str) -> _Token:
        t = self.next()
        if t.kind != kind:
            raise ProtocolSyntaxError(f"expected {what}, found {t.value or 'end of file'!r}", t.line, t.col)
        return t

    def expect_keyword(self, word: str) -> _Token:
        t = self.next()
        if t.kind != "ident" or t.value != word:
            raise ProtocolSyntaxError(f"expected {word!r}, found {t.value or 'end of file'!r}", t.line, t.col)
        return t

    def at_keyword(self, *words: str) -> bool:
        t = self.peek()
        return t.kind == "ident" and t.value in words

    # -- declarations ------------------------------------------------------

    def parse_sort(self) -> Sort:
        t = self.expect("ident", "a sort name")
        if t.value not in _SORTS:
            raise ProtocolSyntaxError(
                f"unknown sort {t.value!r} (expected one of {', '.join(sorted(_SORTS))})",
                t.line, t.col,
            )
        return _SORTS[t.value]

    def parse_vars_decl(self):
        self.expect_keyword("vars")
        pairs = 0
        while self.peek().kind == "ident" and self.peek(1).kind == ":":
            name_tok = self.next()
            name = name_tok.value
            if not name[0].isupper():
                raise ProtocolSyntaxError(
                    f"variable names start upper-case: {name!r}", name_tok.line, name_tok.col
                )
            self.expect(":", "':'")
            sort = self.parse_sort()
            if name in self.var_sorts and self.var_sorts[name] is not sort:
                raise SortError(
                    f"{name_tok.line}:{name_tok.col}: variable {name} redeclared "
                    f"with sort {sort.value}, was {self.var_sorts[name].value}"
                )
            self.var_sorts[name] = sort
            pairs += 1
        if pairs == 0:
            t = self.peek()
            raise ProtocolSyntaxError("vars needs at least one NAME:Sort pair", t.line, t.col)

    def parse_name_list(self, decl: str) -> list[str]:
        self.expect_keyword(decl)
        names = []
        while self.peek().kind == "ident" and self.peek().value[0].isupper():
            t = self.next()
            if t.value not in self.var_sorts:
                raise UndeclaredIdentifier(f"{decl} lists undeclared variable {t.value!r}", t.line, t.col)
            names.append(t.value)
        if not names:
            t = self.peek()
            raise ProtocolSyntaxError(f"{decl} needs at least one variable name", t.line, t.col)
        return names

    # -- terms --------------------------------------------------------------

    def parse_term(self) -> _Ast:
        t = self.expect("ident", "a term")
        name = t.value
        if name == "zero":
            return ("zero", t)
        if name in _CONSTRUCTORS:
            self.expect("(", "'('")
            args = [self.parse_term()]
            while self.peek().kind == ",":
                self.next()
                args.append(self.parse_term())
            self.expect(")", "')'")
            arity = {"penc": 2, "senc": 2, "pk": 1, "sh": 2}.get(name)
            if arity is not None and len(args) != arity:
                raise ProtocolSyntaxError(
                    f"{name} takes exactly {arity} argument(s), got {len(args)}", t.line, t.col
                )
            if name in ("seq", "xor") and len(args) < 2:
                raise ProtocolSyntaxError(f"{name} needs at least two arguments", t.line, t.col)
            return (name, t, tuple(args))
        if name[0].isupper():
            if self.peek().kind == ":":
                raise ProtocolSyntaxError(
                    f"variable sorts are declared in vars, not inline: {name!r}", t.line, t.col
                )
            if name not in self.var_sorts:
                raise UndeclaredIdentifier(f"undeclared variable {name!r}", t.line, t.col)
            return ("var", t)
        annotation = None
        if self.peek().kind == ":":
            self.next()
            annotation = self.parse_sort()
        return ("const", t, annotation)

    # -- protocol ----------------------------------------------------------

    def parse_protocol(self) -> Protocol:
        self.expect_keyword("protocol")
        name = self.expect("ident", "a protocol name").value
        fresh: list[str] = []
        secret: list[str] = []
        while self.at_keyword("vars", "fresh", "secret"):
            word = self.peek().value
            if word == "vars":
                self.parse_vars_decl()
            elif word == "fresh":
                fresh += self.parse_name_list("fresh")
            else:
                secret += self.parse_name_list("secret")

        roles: list[tuple[str, list[tuple[str, _Ast]]]] = []
        seen_roles = set()
        while self.at_keyword("role"):
            self.next()
            rt = self.expect("ident", "a role name")
            if rt.value in seen_roles:
                raise DuplicateRole(f"role {rt.value!r} defined twice", rt.line, rt.col)
            seen_roles.add(rt.value)
            self.expect(":", "':'")
            steps: list[tuple[str, _Ast]] = []
            while self.at_keyword("send", "recv"):
                sign = self.next().value
                steps.append(("+" if sign == "send" else "-", self.parse_term()))
            if not steps:
                t = self.peek()
                raise ProtocolSyntaxError("role needs at least one send/recv step", t.line, t.col)
            roles.append((rt.value, steps))
        if not roles:
            t = self.peek()
            raise ProtocolSyntaxError("protocol needs at least one role", t.line, t.col)
        t = self.peek()
        if t.kind != "eof":
            raise ProtocolSyntaxError(f"unexpected {t.value!r} after last role", t.line, t.col)

        const_sorts = self._resolve_const_sorts(roles)
        built_roles = []
        for rn, steps in roles:
            nodes = []
            for sign, ast in steps:
                try:
                    nodes.append(Node(sign, normalize(self._build(ast, const_sorts))))
                except SortError as e:
                    tok = ast[1]
                    raise SortError(f"{tok.line}:{tok.col}: {e}") from None
            built_roles.append((rn, Strand(tuple(nodes))))
        fresh_vars = [Var(n, self.var_sorts[n]) for n in dict.fromkeys(fresh)]
        secret_vars = [Var(n, self.var_sorts[n]) for n in dict.fromkeys(secret)]
        try:
            return Protocol.make(name, built_roles, fresh_vars, secret_vars)
        except ValueError as e:
            raise ProtocolSyntaxError(str(e), 1, 1) from None

    def _resolve_const_sorts(self, roles) -> dict[str, Sort]:
        annotated: dict[str, Sort] = {}
        agent_position: set[str] = set()

        def walk(ast: _Ast, in_agent_pos: bool):
            head = ast[0]
            if head == "const":
                tok, ann = ast[1], ast[2]
                if ann is not None:
                    prev = annotated.get(tok.value)
                    if prev is not None and prev is not ann:
                        raise SortError(
                            f"{tok.line}:{tok.col}: constant {tok.value!r} annotated "
                            f"both {prev.value} and {ann.value}"
                        )
                    annotated[tok.value] = ann
                if in_agent_pos:
                    agent_position.add(tok.value)
            elif head in ("pk", "sh"):
                for a in ast[2]:
                    walk(a, True)
            elif head in ("seq", "xor"):
                for a in ast[2]:
                    walk(a, False)
            elif head in ("penc", "senc"):
                walk(ast[2][0], False)
                walk(ast[2][1], False)

        for _, steps in roles:
            for _, ast in steps:
                walk(ast, False)

        out: dict[str, Sort] = {}
        for name in agent_position:
            ann = annotated.get(name)
            if ann is not None and ann is not Sort.AGENT:
                raise SortError(
                    f"constant {name!r} is used as a pk/sh argument but annotated {ann.value}"
                )
            out[name] = Sort.AGENT
        for name, ann in annotated.items():
            out.setdefault(name, ann)
        return out

    def _build(self, ast: _Ast, const_sorts: dict[str, Sort]) -> Term:
        head = ast[0]
        if head == "zero":
            return ZERO
        if head == "var":
            name = ast[1].value
            return Var(name, self.var_sorts[name])
        if head == "const":
            name = ast[1].value
            return Const(name, const_sorts.get(name, Sort.DATA))
        args = tuple(self._build(a, const_sorts) for a in ast[2])
        if head == "seq":
            return Seq(args)
        if head == "penc":
            return PEnc(args[0], args[1])
        if head == "senc":
            return SEnc(args[0], args[1])
        if head == "pk":
            return Pk(args[0])
        if head == "sh":
            return Sh(args[0], args[1])
        return Xor(args)


def parse_protocol(text: str) -> Protocol:
    """Parse one protocol from DSL text."""
    return _Parser(text).parse_protocol()


def parse_protocol_file(path) -> Protocol:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_protocol(fh.read())


# -- rendering ---------------------------------------------------------------


def render_term(t: Term, agent_pos: bool = False) -> str:
    if isinstance(t, Var):
        return t.name
    if isinstance(t, Const):
        default = Sort.AGENT if agent_pos else Sort.DATA
        return t.name if t.sort is default else f"{t.name}:{t.sort.value}"
    if isinstance(t, Zero):
        return "zero"
    if isinstance(t, Seq):
        return f"seq({', '.join(render_term(c) for c in t.items)})"
    if isinstance(t, PEnc):
        return f"penc({render_term(t.plain)}, {render_term(t.key)})"
    if isinstance(t, SEnc):
        return f"senc({render_term(t.plain)}, {render_term(t.key)})"
    if isinstance(t, Pk):
        return f"pk({render_term(t.agent, agent_pos=True)})"
    if isinstance(t, Sh):
        return f"sh({render_term(t.left, agent_pos=True)}, {render_term(t.right, agent_pos=True)})"
    if isinstance(t, Xor):
        return f"xor({', '.join(render_term(c) for c in t.items)})"
    raise TypeError(f"cannot render {t!r}")


def render_protocol(p: Protocol) -> str:
    """DSL text that parses back to an equal protocol."""
    lines = [f"protocol {p.name}"]
    variables = sorted(p.variables(), key=lambda v: v.name)
    if variables:
        lines.append("vars " + " ".join(f"{v.name}:{v.sort.value}" for v in variables))
    if p.fresh_vars:
        lines.append("fresh " + " ".join(sorted(v.name for v in p.fresh_vars)))
    if p.secret_vars:
        lines.append("secret " + " ".join(sorted(v.name for v in p.secret_vars)))
    for rn, strand in p.roles:
        lines.append(f"role {rn}:")
        for node in strand.nodes:
            word = "send" if node.sign == "+" else "recv"
            lines.append(f"  {word} {render_term(node.term)}")
    return "\n".join(lines) + "\n"
