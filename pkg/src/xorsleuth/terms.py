"""Term algebra for protocol messages with an Exclusive-OR operator.

Terms are immutable trees built from variables, constants, sequences,
public/symmetric encryption, key constructors and n-ary XOR.  Every public
operation works on (and returns) canonical forms: XOR nodes are flattened,
duplicate children are cancelled in pairs, the unit ``zero`` is dropped, and
commutative argument lists (XOR children, shared-key arguments) are sorted
under a fixed total order on terms.  Two terms are equal modulo the supported
equational theories exactly when their canonical forms coincide.
"""

from __future__ import annotations

import enum
import functools
from dataclasses import dataclass
from typing import Iterable, Iterator, Mapping


class XorsleuthError(Exception):
    """Base class for all errors raised by this package."""


class SortError(XorsleuthError):
    """A term or binding violates the sort discipline."""


class Sort(enum.Enum):
    AGENT = "Agent"
    NONCE = "Nonce"
    KEY = "Key"
    TAG = "Tag"
    DATA = "Data"


class Theory(enum.Enum):
    """Equational theories: free symbols with commutative sh, XOR laws, or both."""

    STD = "STD"
    ACUN = "ACUN"
    SUA = "SUA"


@dataclass(frozen=True)
class Term:
    __slots__ = ()

    def __lt__(self, other: "Term") -> bool:
        return term_key(self) < term_key(other)


@dataclass(frozen=True)
class Var(Term):
    name: str
    sort: Sort


@dataclass(frozen=True)
class Const(Term):
    name: str
    sort: Sort


@dataclass(frozen=True)
class Zero(Term):
    """The XOR unit element."""


@dataclass(frozen=True)
class Seq(Term):
    items: tuple[Term, ...]


@dataclass(frozen=True)
class PEnc(Term):
    plain: Term
    key: Term


@dataclass(frozen=True)
class SEnc(Term):
    plain: Term
    key: Term


@dataclass(frozen=True)
class Pk(Term):
    agent: Term


@dataclass(frozen=True)
class Sh(Term):
    left: Term
    right: Term


@dataclass(frozen=True)
class Xor(Term):
    items: tuple[Term, ...]


ZERO = Zero()

_RANK = {Var: 0, Const: 1, Zero: 2, Seq: 3, PEnc: 4, SEnc: 5, Pk: 6, Sh: 7, Xor: 8}

_KeyType = tuple


@functools.lru_cache(maxsize=None)
def term_key(t: Term) -> _KeyType:
    """Total order key: (constructor rank, arity, atom payload, child keys)."""
    rank = _RANK[type(t)]
    if isinstance(t, (Var, Const)):
        return (rank, 0, f"{t.name}:{t.sort.value}", ())
    kids = tuple(term_key(c) for c in children(t))
    return (rank, len(kids), "", kids)


def children(t: Term) -> tuple[Term, ...]:
    if isinstance(t, (Var, Const, Zero)):
        return ()
    if isinstance(t, (Seq, Xor)):
        return t.items
    if isinstance(t, (PEnc, SEnc)):
        return (t.plain, t.key)
    if isinstance(t, Pk):
        return (t.agent,)
    if isinstance(t, Sh):
        return (t.left, t.right)
    raise TypeError(f"not a term: {t!r}")


def _check_agent_arg(t: Term, ctor: str) -> None:
    if not (isinstance(t, (Var, Const)) and t.sort is Sort.AGENT):
        raise SortError(f"{ctor} argument must be an Agent atom, got {to_text(t)}")


def normalize(t: Term) -> Term:
    """Canonical form: flattened, parity-reduced, sorted XOR; sorted sh arguments."""
    if isinstance(t, (Var, Const, Zero)):
        return t
    if isinstance(t, Seq):
        if not t.items:
            raise SortError("sequences must have at least one element")
        return Seq(tuple(normalize(c) for c in t.items))
    if isinstance(t, PEnc):
        return PEnc(normalize(t.plain), normalize(t.key))
    if isinstance(t, SEnc):
        return SEnc(normalize(t.plain), normalize(t.key))
    if isinstance(t, Pk):
        a = normalize(t.agent)
        _check_agent_arg(a, "pk")
        return Pk(a)
    if isinstance(t, Sh):
        a, b = normalize(t.left), normalize(t.right)
        _check_agent_arg(a, "sh")
        _check_agent_arg(b, "sh")
        if term_key(b) < term_key(a):
            a, b = b, a
        return Sh(a, b)
    if isinstance(t, Xor):
        flat: list[Term] = []
        for c in t.items:
            c = normalize(c)
            if isinstance(c, Xor):
                flat.extend(c.items)
            elif not isinstance(c, Zero):
                flat.append(c)
        # cancel duplicates in pairs (nilpotence)
        counts: dict[_KeyType, tuple[Term, int]] = {}
        for c in flat:
            k = term_key(c)
            counts[k] = (c, counts.get(k, (c, 0))[1] + 1)
        odd = [c for c, n in counts.values() if n % 2 == 1]
        odd.sort(key=term_key)
        if not odd:
            return ZERO
        if len(odd) == 1:
            return odd[0]
        return Xor(tuple(odd))
    raise TypeError(f"not a term: {t!r}")


# -- convenience constructors (always canonical) ------------------------------


def var(name: str, sort: Sort = Sort.DATA) -> Var:
    return Var(name, sort)


def const(name: str, sort: Sort = Sort.DATA) -> Const:
    return Const(name, sort)


def seq(*items: Term) -> Term:
    return normalize(Seq(tuple(items)))


def penc(plain: Term, key: Term) -> Term:
    return normalize(PEnc(plain, key))


def senc(plain: Term, key: Term) -> Term:
    return normalize(SEnc(plain, key))


def pk(agent: Term) -> Term:
    return normalize(Pk(agent))


def sh(a: Term, b: Term) -> Term:
    return normalize(Sh(a, b))


def xor(*items: Term) -> Term:
    if not items:
        raise SortError("xor needs at least one argument")
    return normalize(Xor(tuple(items)))


def is_atom(t: Term) -> bool:
    return isinstance(t, (Var, Const))


def sort_of(t: Term) -> Sort:
    """Declared sort for atoms; Key for key constructors; Data otherwise."""
    if isinstance(t, (Var, Const)):
        return t.sort
    if isinstance(t, (Pk, Sh)):
        return Sort.KEY
    return Sort.DATA


def subterms(t: Term) -> frozenset[Term]:
    """Reflexive subterm closure, descending through every argument position."""
    out: set[Term] = set()
    stack = [t]
    while stack:
        cur = stack.pop()
        if cur in out:
            continue
        out.add(cur)
        stack.extend(children(cur))
    return frozenset(out)


def interms(t: Term) -> frozenset[Term]:
    """Interior terms: through sequences, encryption plaintexts and XOR children.

    Key positions and the agent arguments of pk/sh are opaque; the term itself
    is always included.
    """
    out: set[Term] = set()
    stack = [t]
    while stack:
        cur = stack.pop()
        if cur in out:
            continue
        out.add(cur)
        if isinstance(cur, (Seq, Xor)):
            stack.extend(cur.items)
        elif isinstance(cur, (PEnc, SEnc)):
            stack.append(cur.plain)
    return frozenset(out)


def is_interm(x: Term, t: Term) -> bool:
    return normalize(x) in interms(normalize(t))


def vars_of(t: Term) -> frozenset[Var]:
    return frozenset(s for s in subterms(t) if isinstance(s, Var))


def equal_mod(theory: Theory, t1: Term, t2: Term) -> bool:
    """Equality modulo the theory.

    A single canonical form decides all three theories: sh-argument sorting
    covers the STD identity and XOR normalization covers ACUN, and each is a
    no-op on terms that do not use the other theory's symbols.
    """
    del theory
    return normalize(t1) == normalize(t2)


# -- substitutions -------------------------------------------------------------


class Substitution:
    """A finite mapping from variables to terms, applied simultaneously."""

    __slots__ = ("_map", "_key")

    def __init__(self, mapping: Mapping[Var, Term] | Iterable[tuple[Var, Term]] = ()):
        m = dict(mapping.items() if isinstance(mapping, Mapping) else mapping)
        self._map = {v: normalize(t) for v, t in m.items() if normalize(t) != v}
        self._key = tuple(sorted(self._map.items(), key=lambda kv: term_key(kv[0])))

    def __bool__(self) -> bool:
        return bool(self._map)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Substitution) and self._key == other._key

    def __hash__(self) -> int:
        return hash(self._key)

    def __contains__(self, v: Var) -> bool:
        return v in self._map

    def __len__(self) -> int:
        return len(self._map)

    def __repr__(self) -> str:
        inner = ", ".join(f"{to_text(t)}/{v.name}" for v, t in self._key)
        return "{" + inner + "}"

    def get(self, v: Var) -> Term | None:
        return self._map.get(v)

    def domain(self) -> tuple[Var, ...]:
        return tuple(v for v, _ in self._key)

    def items(self) -> tuple[tuple[Var, Term], ...]:
        return self._key

    def apply(self, t: Term) -> Term:
        return apply_subst(self, t)

    def compose(self, then: "Substitution") -> "Substitution":
        """`self` followed by `then` (bindings of self rewritten by then)."""
        out: dict[Var, Term] = {v: then.apply(t) for v, t in self._map.items()}
        for v, t in then.items():
            out.setdefault(v, t)
        return Substitution(out)

    def restrict(self, keep: Iterable[Var]) -> "Substitution":
        keep = set(keep)
        return Substitution({v: t for v, t in self._map.items() if v in keep})

    def is_idempotent(self) -> bool:
        bound = set(self._map)
        return all(not (vars_of(t) & bound) for t in self._map.values())

    def close(self) -> "Substitution":
        """Apply the substitution to its own ranges until it is idempotent."""
        cur = self
        for _ in range(len(self._map) + 1):
            if cur.is_idempotent():
                return cur
            cur = Substitution({v: cur.apply(t) for v, t in cur.items()})
        raise SortError(f"substitution is cyclic: {cur!r}")


EMPTY_SUBST = Substitution()


def apply_subst(s: Substitution, t: Term) -> Term:
    def rep(u: Term) -> Term:
        if isinstance(u, Var):
            b = s.get(u)
            return b if b is not None else u
        if isinstance(u, (Const, Zero)):
            return u
        if isinstance(u, Seq):
            return Seq(tuple(rep(c) for c in u.items))
        if isinstance(u, Xor):
            return Xor(tuple(rep(c) for c in u.items))
        if isinstance(u, PEnc):
            return PEnc(rep(u.plain), rep(u.key))
        if isinstance(u, SEnc):
            return SEnc(rep(u.plain), rep(u.key))
        if isinstance(u, Pk):
            return Pk(rep(u.agent))
        if isinstance(u, Sh):
            return Sh(rep(u.left), rep(u.right))
        raise TypeError(f"not a term: {u!r}")

    return normalize(rep(t))


# -- canonical text form --------------------------------------------------------


def to_text(t: Term) -> str:
    """Render the canonical text form (stable, whitespace-free)."""
    if isinstance(t, Var):
        return f"var({t.name}:{t.sort.value})"
    if isinstance(t, Const):
        return f"const({t.name}:{t.sort.value})"
    if isinstance(t, Zero):
        return "zero"
    if isinstance(t, Seq):
        return "seq(" + ",".join(to_text(c) for c in t.items) + ")"
    if isinstance(t, PEnc):
        return f"penc({to_text(t.plain)},{to_text(t.key)})"
    if isinstance(t, SEnc):
        return f"senc({to_text(t.plain)},{to_text(t.key)})"
    if isinstance(t, Pk):
        return f"pk({to_text(t.agent)})"
    if isinstance(t, Sh):
        return f"sh({to_text(t.left)},{to_text(t.right)})"
    if isinstance(t, Xor):
        return "xor(" + ",".join(to_text(c) for c in t.items) + ")"
    raise TypeError(f"not a term: {t!r}")


_SORT_BY_NAME = {s.value: s for s in Sort}


class TermTextError(XorsleuthError):
    """Malformed canonical text form."""


def from_text(text: str) -> Term:
    """Parse the canonical text form produced by :func:`to_text`."""
    term, pos = _parse_term(text, 0)
    if pos != len(text):
        raise TermTextError(f"trailing input at offset {pos}: {text[pos:]!r}")
    return normalize(term)


def _parse_term(s: str, pos: int) -> tuple[Term, int]:
    head = ""
    while pos < len(s) and s[pos] not in "(),":
        head += s[pos]
        pos += 1
    if head == "zero":
        return ZERO, pos
    if pos >= len(s) or s[pos] != "(":
        raise TermTextError(f"expected '(' after {head!r} at offset {pos}")
    pos += 1
    if head in ("var", "const"):
        inner = ""
        while pos < len(s) and s[pos] != ")":
            inner += s[pos]
            pos += 1
        if pos >= len(s):
            raise TermTextError("unterminated atom")
        name, colon, sort_name = inner.rpartition(":")
        if not colon or sort_name not in _SORT_BY_NAME or not name:
            raise TermTextError(f"malformed atom {inner!r}")
        cls = Var if head == "var" else Const
        return cls(name, _SORT_BY_NAME[sort_name]), pos + 1
    args: list[Term] = []
    while True:
        arg, pos = _parse_term(s, pos)
        args.append(arg)
        if pos >= len(s):
            raise TermTextError("unterminated term")
        if s[pos] == ",":
            pos += 1
            continue
        if s[pos] == ")":
            pos += 1
            break
        raise TermTextError(f"unexpected character {s[pos]!r} at offset {pos}")
    try:
        if head == "seq":
            return Seq(tuple(args)), pos
        if head == "xor":
            return Xor(tuple(args)), pos
        if head == "penc" and len(args) == 2:
            return PEnc(args[0], args[1]), pos
        if head == "senc" and len(args) == 2:
            return SEnc(args[0], args[1]), pos
        if head == "pk" and len(args) == 1:
            return Pk(args[0]), pos
        if head == "sh" and len(args) == 2:
            return Sh(args[0], args[1]), pos
    except SortError:
        raise
    raise TermTextError(f"unknown constructor {head!r} with {len(args)} arguments")


def iter_sorted(terms: Iterable[Term]) -> Iterator[Term]:
    return iter(sorted(terms, key=term_key))
