"""Protocol roles, semi-bundles, attacker knowledge and structural checks.

A protocol is a set of named roles; a role is a strand of signed nodes
(``+`` send, ``-`` receive).  Bounded-session analysis instantiates each role
a fixed number of times into a semi-bundle: the role's own identity and its
freshly generated values become session-indexed constants, while everything
the role merely receives stays a variable, renamed apart per strand.

The module also provides the structural well-formedness checks used before
composing protocols: long-term keys must never travel inside messages,
encryption keys must not be derivable from message parts, and two protocols
must not have unifiable encrypted components or XOR summands.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .terms import (
    ZERO,
    Const,
    PEnc,
    Pk,
    SEnc,
    Seq,
    Sh,
    Sort,
    Substitution,
    Term,
    Var,
    Xor,
    XorsleuthError,
    Zero,
    interms,
    is_interm,
    normalize,
    subterms,
    term_key,
    to_text,
    vars_of,
)
from .unify import ABSTRACTION_PREFIX, MixedTheoryTerm, unify_std

ATTACKER = Const("eps", Sort.AGENT)

SEND = "+"
RECV = "-"


class SortMismatch(XorsleuthError):
    """A naming assignment does not fit the variable's sort."""


class SecretInIik(XorsleuthError):
    """A secret constant would end up in the attacker's initial knowledge."""


class LabelCollision(XorsleuthError):
    """The tagging label already occurs in the protocol."""


@dataclass(frozen=True)
class Node:
    sign: str  # SEND or RECV
    term: Term

    def __post_init__(self):
        if self.sign not in (SEND, RECV):
            raise ValueError(f"node sign must be '+' or '-', got {self.sign!r}")


@dataclass(frozen=True)
class Strand:
    nodes: tuple[Node, ...]

    def terms(self) -> tuple[Term, ...]:
        return tuple(n.term for n in self.nodes)


@dataclass(frozen=True)
class Protocol:
    name: str
    roles: tuple[tuple[str, Strand], ...]
    fresh_vars: frozenset[Var]
    secret_vars: frozenset[Var]

    @staticmethod
    def make(
        name: str,
        roles: Sequence[tuple[str, Strand]],
        fresh_vars: Iterable[Var] = (),
        secret_vars: Iterable[Var] = (),
    ) -> "Protocol":
        roles = tuple(
            (rn, Strand(tuple(Node(n.sign, normalize(n.term)) for n in strand.nodes)))
            for rn, strand in roles
        )
        seen = set()
        for rn, _ in roles:
            if rn in seen:
                raise ValueError(f"duplicate role {rn!r}")
            seen.add(rn)
        fresh = frozenset(fresh_vars)
        secret = frozenset(secret_vars)
        if not secret <= fresh:
            extra = ", ".join(sorted(v.name for v in secret - fresh))
            raise ValueError(f"secret variables must be fresh: {extra}")
        declared = Protocol(name, roles, fresh, secret)
        missing = (fresh | secret) - declared.variables()
        if missing:
            names = ", ".join(sorted(v.name for v in missing))
            raise ValueError(f"declared variables never used: {names}")
        return declared

    def node_terms(self) -> tuple[Term, ...]:
        return tuple(t for _, strand in self.roles for t in strand.terms())

    def variables(self) -> frozenset[Var]:
        out: set[Var] = set()
        for t in self.node_terms():
            out |= vars_of(t)
        return frozenset(out)

    def constants(self) -> frozenset[Const]:
        out: set[Const] = set()
        for t in self.node_terms():
            out |= {s for s in subterms(t) if isinstance(s, Const)}
        return frozenset(out)

    def long_term_keys(self) -> tuple[Term, ...]:
        keys = {s for t in self.node_terms() for s in subterms(t) if isinstance(s, Sh)}
        return tuple(sorted(keys, key=term_key))


def enc_subterms(p: Protocol) -> tuple[Term, ...]:
    """Every encrypted subterm of any role message, in canonical order."""
    encs = {
        s
        for t in p.node_terms()
        for s in subterms(t)
        if isinstance(s, (PEnc, SEnc))
    }
    return tuple(sorted(encs, key=term_key))


def rename_apart(p: Protocol, suffix: str = "'") -> Protocol:
    """Rename every variable of the protocol with the given suffix."""
    ren = {v: Var(v.name + suffix, v.sort) for v in p.variables()}
    s = Substitution(ren)
    roles = tuple(
        (rn, Strand(tuple(Node(n.sign, s.apply(n.term)) for n in strand.nodes)))
        for rn, strand in p.roles
    )
    return Protocol(
        p.name,
        roles,
        frozenset(ren.get(v, v) for v in p.fresh_vars),
        frozenset(ren.get(v, v) for v in p.secret_vars),
    )


# -- semi-bundles ---------------------------------------------------------------


class FreshSession:
    """Name source for one analysis session.

    Constants minted for different bundles within a session never collide:
    each base name carries a counter that keeps increasing across bundles.
    """

    def __init__(self) -> None:
        self._per_base: dict[str, int] = {}
        self._strand_ordinal = 0

    def next_const(self, base: str, sort: Sort) -> Const:
        n = self._per_base.get(base, 0) + 1
        self._per_base[base] = n
        return Const(f"{base}{n}", sort)

    def next_strand(self) -> int:
        self._strand_ordinal += 1
        return self._strand_ordinal


@dataclass(frozen=True)
class SemiBundle:
    source: Protocol
    strand_ids: tuple[str, ...]
    strands: tuple[Strand, ...]
    instantiations: tuple[tuple[str, Substitution], ...]
    fresh_constants: frozenset[Const]
    secret_constants: frozenset[Const]
    secret_bindings: tuple[tuple[Var, Const], ...]
    long_term_keys: tuple[Term, ...]

    def node_terms(self) -> tuple[Term, ...]:
        return tuple(t for s in self.strands for t in s.terms())


def make_semibundle(
    p: Protocol,
    sessions_per_role: int,
    naming: dict[str, Const] | None = None,
    session: FreshSession | None = None,
) -> SemiBundle:
    """Instantiate every role ``sessions_per_role`` times.

    The role's identity variable (the variable sharing the role's name) and
    its fresh variables become session-indexed constants; received variables
    are renamed apart per strand and stay symbolic.  ``naming`` overrides the
    base constant used for a role's identity.
    """
    if sessions_per_role < 1:
        raise ValueError("sessions_per_role must be at least 1")
    session = session or FreshSession()
    naming = dict(naming or {})
    for rn, base in naming.items():
        if not (isinstance(base, Const) and base.sort is Sort.AGENT):
            raise SortMismatch(f"naming for role {rn!r} must be an Agent constant")

    ids: list[str] = []
    strands: list[Strand] = []
    insts: list[tuple[str, Substitution]] = []
    fresh_consts: set[Const] = set()
    secret_consts: set[Const] = set()
    secret_pairs: list[tuple[Var, Const]] = []

    for role_name, role_strand in p.roles:
        role_vars = frozenset().union(*[vars_of(t) for t in role_strand.terms()]) if role_strand.nodes else frozenset()
        identity = next(
            (v for v in role_vars if v.name == role_name and v.sort is Sort.AGENT), None
        )
        # A fresh variable is the role's own only if it originates here,
        # i.e. its first occurrence on the strand is in a send node.
        first_sign: dict[Var, str] = {}
        for node in role_strand.nodes:
            for v in vars_of(node.term):
                first_sign.setdefault(v, node.sign)
        for i in range(1, sessions_per_role + 1):
            k = session.next_strand()
            bindings: dict[Var, Term] = {}
            if identity is not None:
                base = naming.get(role_name, Const(role_name.lower(), Sort.AGENT))
                bindings[identity] = session.next_const(base.name, Sort.AGENT)
            for v in sorted(role_vars, key=term_key):
                if v == identity:
                    continue
                if v in p.fresh_vars and first_sign[v] == SEND:
                    c = session.next_const(v.name.lower(), v.sort)
                    bindings[v] = c
                    fresh_consts.add(c)
                    if v in p.secret_vars:
                        secret_consts.add(c)
                        secret_pairs.append((v, c))
                else:
                    bindings[v] = Var(f"{v.name}{k}", v.sort)
            s = Substitution(bindings)
            ids.append(f"{p.name}.{role_name}#{i}")
            strands.append(Strand(tuple(Node(n.sign, s.apply(n.term)) for n in role_strand.nodes)))
            insts.append((role_name, s))

    ltks = {
        s for strand in strands for t in strand.terms() for s in subterms(t) if isinstance(s, Sh)
    }
    return SemiBundle(
        source=p,
        strand_ids=tuple(ids),
        strands=tuple(strands),
        instantiations=tuple(insts),
        fresh_constants=frozenset(fresh_consts),
        secret_constants=frozenset(secret_consts),
        secret_bindings=tuple(sorted(secret_pairs, key=lambda vc: term_key(vc[1]))),
        long_term_keys=tuple(sorted(ltks, key=term_key)),
    )


# -- initial attacker knowledge ----------------------------------------------------


@dataclass(frozen=True)
class Iik:
    terms: frozenset[Term]

    def sorted_terms(self) -> tuple[Term, ...]:
        return tuple(sorted(self.terms, key=term_key))


def build_iik(bundles: Sequence[SemiBundle], extra: Iterable[Term] = ()) -> Iik:
    """Initial attacker knowledge for a set of bundles.

    The attacker starts with its own name, zero, every agent constant in
    scope and all their public keys, every non-fresh constant appearing in
    the instantiated strands, and the caller-supplied extras.  Secrets are
    never allowed in.
    """
    out: set[Term] = {ATTACKER, ZERO, normalize(Pk(ATTACKER))}
    all_fresh: set[Const] = set()
    all_secret: set[Const] = set()
    for b in bundles:
        all_fresh |= b.fresh_constants
        all_secret |= b.secret_constants
        for t in b.node_terms():
            for s in subterms(t):
                if isinstance(s, Const) and s not in b.fresh_constants:
                    out.add(s)
    extras = [normalize(t) for t in extra]
    out.update(extras)
    for t in sorted(out, key=term_key):
        if isinstance(t, Const) and t.sort is Sort.AGENT:
            out.add(normalize(Pk(t)))
    leaked = sorted(out & all_secret, key=term_key)
    if leaked:
        raise SecretInIik(f"secret constants in initial knowledge: "
                          f"{', '.join(to_text(t) for t in leaked)}")
    return Iik(frozenset(out))


# -- structural assumptions ---------------------------------------------------------


@dataclass(frozen=True)
class AssumptionViolation:
    assumption: int
    term: Term
    witness: Term
    detail: str

    def to_json_dict(self) -> dict:
        return {
            "assumption": self.assumption,
            "term": to_text(self.term),
            "witness": to_text(self.witness),
            "detail": self.detail,
        }


@dataclass(frozen=True)
class AssumptionReport:
    protocol: str
    long_term_keys: tuple[Term, ...]
    violations: tuple[AssumptionViolation, ...]

    def ok(self) -> bool:
        return not self.violations

    def to_json_dict(self) -> dict:
        return {
            "check": "assumptions",
            "protocol": self.protocol,
            "status": "passed" if self.ok() else "violated",
            "long_term_keys": [to_text(t) for t in self.long_term_keys],
            "witnesses": [v.to_json_dict() for v in self.violations],
        }


def check_assumptions(p: Protocol) -> AssumptionReport:
    """Long-term keys stay out of messages; encryption keys stay underivable.

    The first check flags any long-term key occurring as an interior term of
    a role message (key positions themselves are opaque, so using a shared
    key to encrypt is fine; sending it is not).  The second flags any
    interior part of any encryption key that also occurs as an interior term
    of a role message.
    """
    violations: list[AssumptionViolation] = []
    node_terms = p.node_terms()
    ltks = p.long_term_keys()
    for t in node_terms:
        for l in ltks:
            if is_interm(l, t):
                violations.append(
                    AssumptionViolation(1, t, l, "long-term key travels inside a message")
                )
    for e in enc_subterms(p):
        key = e.key  # type: ignore[union-attr]
        for x in sorted(interms(key), key=term_key):
            for t in node_terms:
                if is_interm(x, t):
                    violations.append(
                        AssumptionViolation(
                            2, t, x, f"part of the key of {to_text(e)} travels inside a message"
                        )
                    )
    uniq: list[AssumptionViolation] = []
    for v in sorted(violations, key=lambda v: (v.assumption, term_key(v.term), term_key(v.witness))):
        if v not in uniq:
            uniq.append(v)
    return AssumptionReport(p.name, ltks, tuple(uniq))


# -- cross-protocol non-unifiability -------------------------------------------------


@dataclass(frozen=True)
class MunutViolation:
    condition: int
    left: Term
    right: Term
    unifier: Substitution

    def to_json_dict(self) -> dict:
        return {
            "condition": self.condition,
            "left": to_text(self.left),
            "right": to_text(self.right),
            "unifier": {to_text(v): to_text(t) for v, t in self.unifier.items()},
        }


@dataclass(frozen=True)
class MunutReport:
    protocols: tuple[str, str]
    violations: tuple[MunutViolation, ...]

    def ok(self) -> bool:
        return not self.violations

    def to_json_dict(self) -> dict:
        return {
            "check": "munut",
            "protocols": list(self.protocols),
            "status": "satisfied" if self.ok() else "violated",
            "witnesses": [v.to_json_dict() for v in self.violations],
        }


def _abstract_xor(t: Term, counter) -> Term:
    """Replace maximal XOR/zero subterms by fresh variables (free-theory view)."""
    cache: dict[Term, Var] = {}

    def rep(u: Term) -> Term:
        if isinstance(u, (Xor, Zero)):
            if u not in cache:
                cache[u] = Var(f"{ABSTRACTION_PREFIX}{next(counter)}", Sort.DATA)
            return cache[u]
        if isinstance(u, Seq):
            return Seq(tuple(rep(c) for c in u.items))
        if isinstance(u, PEnc):
            return PEnc(rep(u.plain), rep(u.key))
        if isinstance(u, SEnc):
            return SEnc(rep(u.plain), rep(u.key))
        return u

    return rep(normalize(t))


def _std_unifier_witness(t1: Term, t2: Term) -> Substitution | None:
    """First free-theory unifier of the pair, with XOR parts abstracted away."""
    counter = itertools.count()
    a1 = _abstract_xor(t1, counter)
    a2 = _abstract_xor(t2, counter)
    try:
        unifiers = unify_std([(a1, a2)])
    except MixedTheoryTerm:  # pragma: no cover - abstraction removes XOR
        return None
    if not unifiers:
        return None
    keep = vars_of(t1) | vars_of(t2)
    return unifiers[0].restrict(keep)


def _xor_children(p: Protocol) -> tuple[Term, ...]:
    out = {
        c
        for t in p.node_terms()
        for s in subterms(t)
        if isinstance(s, Xor)
        for c in s.items
    }
    return tuple(sorted(out, key=term_key))


def check_munut(p1: Protocol, p2: Protocol) -> MunutReport:
    """Do the two protocols keep their encrypted parts and XOR summands apart?

    Condition 1: no encrypted subterm of one protocol unifies (in the free
    theory, with XOR parts abstracted) with an encrypted subterm of the
    other.  Condition 2: the same for the non-XOR summands of XOR subterms.
    Variables are renamed apart before checking; witnesses list the unifier.
    """
    q2 = rename_apart(p2)
    violations: list[MunutViolation] = []
    for t1, t2 in itertools.product(enc_subterms(p1), enc_subterms(q2)):
        w = _std_unifier_witness(t1, t2)
        if w is not None:
            violations.append(MunutViolation(1, t1, t2, w))
    for u1, u2 in itertools.product(_xor_children(p1), _xor_children(q2)):
        w = _std_unifier_witness(u1, u2)
        if w is not None:
            violations.append(MunutViolation(2, u1, u2, w))
    violations.sort(key=lambda v: (v.condition, term_key(v.left), term_key(v.right)))
    return MunutReport((p1.name, p2.name), tuple(violations))


# -- tagging --------------------------------------------------------------------------


def tag_protocol(p: Protocol, label: Const | str) -> Protocol:
    """Prefix every encryption plaintext and every XOR summand with a tag.

    The label becomes a Tag-sort constant; encryption plaintexts get it
    prepended (wrapping non-sequences into a pair), and every non-XOR child
    of every XOR gets the same treatment.  Raises :class:`LabelCollision` if
    the label's name already occurs in the protocol.
    """
    tag = label if isinstance(label, Const) else Const(label, Sort.TAG)
    if tag.sort is not Sort.TAG:
        tag = Const(tag.name, Sort.TAG)
    for c in itertools.chain.from_iterable(subterms(t) for t in p.node_terms()):
        if isinstance(c, Const) and c.name == tag.name:
            raise LabelCollision(f"label {tag.name!r} already occurs in {p.name}")

    def prepend(t: Term) -> Term:
        if isinstance(t, Seq):
            return Seq((tag,) + t.items)
        return Seq((tag, t))

    def walk(t: Term) -> Term:
        if isinstance(t, Seq):
            return Seq(tuple(walk(c) for c in t.items))
        if isinstance(t, PEnc):
            return PEnc(prepend(walk(t.plain)), walk(t.key))
        if isinstance(t, SEnc):
            return SEnc(prepend(walk(t.plain)), walk(t.key))
        if isinstance(t, Xor):
            return normalize(Xor(tuple(prepend(walk(c)) for c in t.items)))
        return t

    roles = tuple(
        (rn, Strand(tuple(Node(n.sign, normalize(walk(n.term))) for n in strand.nodes)))
        for rn, strand in p.roles
    )
    return Protocol(f"{p.name}_{tag.name}", roles, p.fresh_vars, p.secret_vars)
