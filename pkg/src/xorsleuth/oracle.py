"""Ground-truth derivation engine used to cross-check solver verdicts.

Computes the attacker's derivable-term closure over *ground* terms: pairing
and unpairing, symmetric encryption/decryption with a derived key, asymmetric
decryption only of terms keyed to the attacker's own public key, and XOR of
any two derived terms.  The closure modulo XOR is infinite, so rounds and a
size cap bound it; hitting the cap is recorded, never silently ignored.

This module deliberately re-derives nothing from the symbolic solver: it is
the independent check that a reported attack substitution really lets the
attacker compute each constraint's target.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Iterable, Sequence

from .protocol import ATTACKER
from .terms import (
    PEnc,
    Pk,
    SEnc,
    Seq,
    Sort,
    Substitution,
    Term,
    Var,
    Xor,
    XorsleuthError,
    ZERO,
    normalize,
    subterms,
    term_key,
    to_text,
    vars_of,
)

PK_EPS = normalize(Pk(ATTACKER))


class NonGround(XorsleuthError):
    """A term that was required to be ground still contains variables."""


@dataclass(frozen=True)
class GroundKnowledge:
    terms: frozenset[Term]
    depth: int
    capped: bool

    def __contains__(self, t: Term) -> bool:
        return normalize(t) in self.terms

    def sorted_terms(self) -> tuple[Term, ...]:
        return tuple(sorted(self.terms, key=term_key))


def _require_ground(terms: Iterable[Term]) -> None:
    for t in terms:
        if vars_of(t):
            raise NonGround(f"not a ground term: {to_text(t)}")


def dy_closure(
    initial: Iterable[Term],
    rounds: int = 6,
    size_cap: int = 20_000,
    compose_targets: Iterable[Term] | None = None,
) -> GroundKnowledge:
    """Fixed point (or bounded prefix) of the attacker rules on ground terms.

    Each round decomposes everything decomposable, XORs known terms, and
    rebuilds compound terms from known parts.  ``compose_targets`` restricts
    which compound terms construction may produce — the standard normal-form
    argument: a derivation of a goal only ever needs to build subterms of the
    goal or of the initial knowledge.  ``None`` means unrestricted
    construction and literal pairwise XOR (usable only for small sets).

    With targets given, the XOR rule is computed algebraically: the terms
    derivable by XOR alone are exactly the GF(2) span of the knowledge over
    its non-XOR units, and since an XOR-headed term never decomposes further,
    only span members that are single units or target subterms can matter to
    any later step.  This keeps the closure polynomial where enumerating
    pairwise sums is exponential in the number of units.
    """
    known: set[Term] = {normalize(t) for t in initial}
    _require_ground(known)
    known.add(ZERO)
    targets: set[Term] | None = None
    if compose_targets is not None:
        targets = set()
        for t in compose_targets:
            targets.update(subterms(normalize(t)))
    capped = False
    depth = 0
    recent: set[Term] = set(known)  # terms not yet combined against everything

    for _ in range(rounds):
        if len(known) > size_cap:
            capped = True
            break
        frontier: set[Term] = set()

        class _Full(Exception):
            pass

        def add(t: Term) -> None:
            t = normalize(t)
            if t not in known:
                frontier.add(t)
                if len(known) + len(frontier) > size_cap:
                    raise _Full

        try:
            # decomposition of what just arrived
            for t in sorted(recent, key=term_key):
                if isinstance(t, Seq):
                    for item in t.items:
                        add(item)
                elif isinstance(t, PEnc) and t.key == PK_EPS:
                    add(t.plain)
            # symmetric decryption: a new ciphertext with a known key, or a
            # new key unlocking an old ciphertext
            for t in sorted(known, key=term_key):
                if isinstance(t, SEnc) and (t in recent or t.key in recent) and t.key in known:
                    add(t.plain)

            # XOR of known terms
            if targets is not None:
                for t in _xor_span_extract(known, targets):
                    add(t)
            else:
                # literal pairwise rule (pairs not combined in earlier rounds)
                new_sorted = sorted(recent, key=term_key)
                old_sorted = sorted(known - recent, key=term_key)
                for t1, t2 in itertools.combinations(new_sorted, 2):
                    add(Xor((t1, t2)))
                for t1 in new_sorted:
                    for t2 in old_sorted:
                        add(Xor((t1, t2)))

            # construction of compound terms from known parts
            if targets is not None:
                for t in sorted(targets, key=term_key):
                    if t in known:
                        continue
                    if isinstance(t, Seq) and all(i in known for i in t.items):
                        add(t)
                    elif isinstance(t, SEnc) and t.plain in known and t.key in known:
                        add(t)
                    elif isinstance(t, PEnc) and t.plain in known and t.key in known:
                        add(t)
            else:
                ordered = sorted(known, key=term_key)
                for a in ordered:
                    for b in ordered:
                        add(Seq((a, b)))
                        add(SEnc(a, b))
                        if isinstance(b, Pk):
                            add(PEnc(a, b))
        except _Full:
            capped = True

        if not frontier:
            break
        depth += 1
        known |= frontier
        recent = frontier
        if capped:
            break

    return GroundKnowledge(frozenset(known), depth, capped)


def _xor_units(t: Term) -> tuple[Term, ...]:
    if isinstance(t, Xor):
        return t.items
    if t == ZERO:
        return ()
    return (t,)


def _xor_span_extract(known: set[Term], targets: set[Term]) -> list[Term]:
    """Members of the GF(2) span of `known` that are single units or targets.

    Every known term is a bit-vector over the distinct non-XOR units occurring
    in the knowledge; Gaussian elimination gives the row space, and a
    candidate is derivable by XOR alone iff its vector reduces to zero.
    """
    units: dict[Term, int] = {}
    for t in sorted(known, key=term_key):
        for u in _xor_units(t):
            units.setdefault(u, len(units))

    basis: dict[int, int] = {}  # leading-bit index -> reduced row

    def reduce(vec: int) -> int:
        while vec:
            lead = vec.bit_length() - 1
            row = basis.get(lead)
            if row is None:
                return vec
            vec ^= row
        return 0

    for t in sorted(known, key=term_key):
        vec = 0
        for u in _xor_units(t):
            vec ^= 1 << units[u]
        vec = reduce(vec)
        if vec:
            basis[vec.bit_length() - 1] = vec

    out: list[Term] = []
    for u, idx in units.items():
        if u not in known and reduce(1 << idx) == 0:
            out.append(u)
    for t in sorted(targets, key=term_key):
        if t in known:
            continue
        tu = _xor_units(t)
        if any(u not in units for u in tu):
            continue
        vec = 0
        for u in tu:
            vec ^= 1 << units[u]
        if reduce(vec) == 0:
            out.append(t)
    return sorted(out, key=term_key)


def derivable(goal: Term, initial: Iterable[Term], rounds: int = 6, size_cap: int = 20_000) -> bool:
    """Whether `goal` is in the closure of `initial`, with construction
    restricted to subterms of the goal and the initial terms."""
    goal = normalize(goal)
    initial = [normalize(t) for t in initial]
    k = dy_closure(initial, rounds, size_cap, compose_targets=[goal, *initial])
    return goal in k


def verify_solution(cs, solution: Substitution, rounds: int = 6, size_cap: int = 20_000) -> bool:
    """Independent check of a solver solution on the original sequence.

    Variables the solver left unconstrained are the attacker's free choices;
    they are instantiated with the attacker's own name before grounding.
    True iff every original constraint's instantiated target is derivable
    from its instantiated term set.
    """
    leftover: dict[Var, Term] = {}
    for c in cs.constraints:
        for t in (c.target, *c.term_set):
            for v in vars_of(solution.apply(t)):
                leftover.setdefault(v, ATTACKER)
    sigma = solution.compose(Substitution(leftover)) if leftover else solution
    for c in cs.constraints:
        goal = sigma.apply(c.target)
        terms = [sigma.apply(t) for t in c.term_set]
        _require_ground([goal, *terms])
        if not derivable(goal, terms, rounds, size_cap):
            return False
    return True
