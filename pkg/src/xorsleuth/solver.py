"""Symbolic attacker-feasibility solving over constraint sequences.

A constraint ``m : T`` asks whether the attacker can derive target ``m``
from the term set ``T``.  Interleaving the strands of a semi-bundle yields
one constraint per receive node (the attacker must supply that message from
everything sent so far plus its initial knowledge); secrecy is checked by
appending one artificial constraint demanding the secret itself.

``satisfiable`` reduces the first non-variable-target constraint with the
decomposition/composition rules below plus two substitution rules: ``un``
discharges the active constraint by unifying the target with a term-set
member (branching over the combined-theory unifiers), and ``ksub`` guesses
that an asymmetric encryption in the term set is keyed to the attacker.  A
sequence whose targets are all variables is solved: the attacker may choose
those values freely.
"""

from __future__ import annotations

import enum
import functools
import time
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence

from .protocol import ATTACKER, Iik, SemiBundle, build_iik, make_semibundle, FreshSession, Protocol
from .terms import (
    Const,
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
    normalize,
    subterms,
    term_key,
    to_text,
    vars_of,
)
from .unify import BudgetExhausted, SearchBudget, unify_sua

PK_EPS = normalize(Pk(ATTACKER))


class ConfigError(XorsleuthError):
    """Unusable analysis configuration."""


# -- constraint sequences ----------------------------------------------------------


def _term_set(terms: Iterable[Term]) -> tuple[Term, ...]:
    return tuple(sorted({normalize(t) for t in terms}, key=term_key))


@dataclass(frozen=True)
class Constraint:
    target: Term
    term_set: tuple[Term, ...]

    @staticmethod
    def make(target: Term, term_set: Iterable[Term]) -> "Constraint":
        return Constraint(normalize(target), _term_set(term_set))

    def to_json_dict(self) -> dict:
        return {"target": to_text(self.target), "term_set": [to_text(t) for t in self.term_set]}


@dataclass(frozen=True)
class ConstraintSequence:
    constraints: tuple[Constraint, ...]
    subst: Substitution = field(default_factory=Substitution)
    origin: tuple[str, ...] = ()

    def is_simple(self) -> bool:
        return all(isinstance(c.target, Var) for c in self.constraints)

    def active_index(self) -> int | None:
        for i, c in enumerate(self.constraints):
            if not isinstance(c.target, Var):
                return i
        return None


class RuleName(enum.Enum):
    CONCAT = "concat"
    SPLIT = "split"
    PENC = "penc"
    PDEC = "pdec"
    SENC = "senc"
    SDEC = "sdec"
    XOR_R = "xor_r"
    XOR_L = "xor_l"
    UN = "un"
    KSUB = "ksub"


TARGET_SITE = -1


class SolveStatus(enum.Enum):
    SATISFIABLE = "Satisfiable"
    UNSATISFIABLE = "Unsatisfiable"
    BUDGET_EXHAUSTED = "BudgetExhausted"


@dataclass(frozen=True)
class RuleStep:
    rule: str
    site: str
    branch: int
    unifier: Substitution | None = None

    def to_json_dict(self) -> dict:
        d = {"rule": self.rule, "site": self.site, "branch": self.branch}
        if self.unifier is not None:
            d["unifier"] = {to_text(v): to_text(t) for v, t in self.unifier.items()}
        return d


@dataclass(frozen=True)
class SolverBudget:
    max_depth: int = 64
    max_nodes: int = 200_000
    unify: SearchBudget = SearchBudget()


@dataclass(frozen=True)
class SolverResult:
    status: SolveStatus
    solutions: tuple[tuple[Substitution, tuple[RuleStep, ...]], ...]
    stats: dict

    def solution(self) -> tuple[Substitution, tuple[RuleStep, ...]]:
        return self.solutions[0]


# -- normalization -----------------------------------------------------------------


def _flatten_member(t: Term) -> list[Term]:
    if isinstance(t, Seq):
        out: list[Term] = []
        for item in t.items:
            out.extend(_flatten_member(item))
        return out
    return [t]


def normalize_seq(cs: ConstraintSequence) -> ConstraintSequence:
    """Fixed point of sequence-target splitting and term-set cleanup.

    The active constraint ends with a non-sequence target and a term set
    holding no sequences and no stand-alone variables (the attacker can
    invent values, so a bare variable carries no information).
    """
    constraints = list(cs.constraints)
    while True:
        ai = next((i for i, c in enumerate(constraints) if not isinstance(c.target, Var)), None)
        if ai is None:
            break
        c = constraints[ai]
        if isinstance(c.target, Seq):
            parts = [Constraint.make(item, c.term_set) for item in c.target.items]
            constraints[ai : ai + 1] = parts
            continue
        flat: list[Term] = []
        for t in c.term_set:
            flat.extend(_flatten_member(t))
        cleaned = _term_set(t for t in flat if not isinstance(t, Var))
        if cleaned != c.term_set:
            constraints[ai] = Constraint(c.target, cleaned)
            continue
        break
    return ConstraintSequence(tuple(constraints), cs.subst, cs.origin)


# -- rule application ---------------------------------------------------------------


@functools.lru_cache(maxsize=100_000)
def _cached_unify(m: Term, t: Term, budget: SearchBudget) -> tuple[tuple[Substitution, ...], bool]:
    return unify_sua(m, t, budget)


def applicable_rules(cs: ConstraintSequence) -> tuple[tuple[RuleName, int], ...]:
    """Every (rule, site) whose applicability predicate holds at the active
    constraint, in rule-enumeration order then site order.  Sites are term-set
    indices; the target site is -1."""
    ai = cs.active_index()
    if ai is None:
        return ()
    c = cs.constraints[ai]
    out: list[tuple[RuleName, int]] = []
    if isinstance(c.target, Seq):
        out.append((RuleName.CONCAT, TARGET_SITE))
    for i, t in enumerate(c.term_set):
        if isinstance(t, Seq):
            out.append((RuleName.SPLIT, i))
    if isinstance(c.target, PEnc):
        out.append((RuleName.PENC, TARGET_SITE))
    for i, t in enumerate(c.term_set):
        if isinstance(t, PEnc) and t.key == PK_EPS:
            out.append((RuleName.PDEC, i))
    if isinstance(c.target, SEnc):
        out.append((RuleName.SENC, TARGET_SITE))
    for i, t in enumerate(c.term_set):
        if isinstance(t, SEnc):
            out.append((RuleName.SDEC, i))
    for i, t in enumerate(c.term_set):
        if isinstance(t, Xor):
            out.append((RuleName.XOR_R, i))
    if isinstance(c.target, Xor):
        out.append((RuleName.XOR_L, TARGET_SITE))
    for i, _ in enumerate(c.term_set):
        out.append((RuleName.UN, i))
    for i, t in enumerate(c.term_set):
        if isinstance(t, PEnc) and t.key != PK_EPS:
            out.append((RuleName.KSUB, i))
    return tuple(out)


def _without(term_set: Sequence[Term], i: int) -> tuple[Term, ...]:
    return term_set[:i] + term_set[i + 1 :]


def _xor_minus(items: Sequence[Term], j: int) -> Term:
    rest = items[:j] + items[j + 1 :]
    return normalize(Xor(tuple(rest))) if len(rest) > 1 else rest[0]


def _subst_constraints(tau: Substitution, cs: Sequence[Constraint]) -> tuple[Constraint, ...]:
    return tuple(Constraint.make(tau.apply(c.target), (tau.apply(t) for t in c.term_set)) for c in cs)


def _apply(
    rule: RuleName, site: int, cs: ConstraintSequence, unify_budget: SearchBudget
) -> tuple[list[tuple[ConstraintSequence, Substitution | None]], bool]:
    """All branch results plus a completeness flag (False when the `un`/`ksub`
    unifier search hit its budget, so an empty branch list is not a proof of
    absence)."""
    ai = cs.active_index()
    assert ai is not None, "no active constraint"
    c = cs.constraints[ai]
    prefix = cs.constraints[:ai]
    suffix = cs.constraints[ai + 1 :]

    def seq_with(new_active: Sequence[Constraint]) -> ConstraintSequence:
        return ConstraintSequence(prefix + tuple(new_active) + suffix, cs.subst, cs.origin)

    T = c.term_set
    if rule is RuleName.CONCAT:
        assert isinstance(c.target, Seq)
        return [(seq_with([Constraint.make(t, T) for t in c.target.items]), None)], True
    if rule is RuleName.SPLIT:
        member = T[site]
        assert isinstance(member, Seq)
        return [(seq_with([Constraint.make(c.target, _without(T, site) + member.items)]), None)], True
    if rule is RuleName.PENC:
        assert isinstance(c.target, PEnc)
        return [(seq_with([Constraint.make(c.target.key, T), Constraint.make(c.target.plain, T)]), None)], True
    if rule is RuleName.SENC:
        assert isinstance(c.target, SEnc)
        return [(seq_with([Constraint.make(c.target.key, T), Constraint.make(c.target.plain, T)]), None)], True
    if rule is RuleName.XOR_L:
        assert isinstance(c.target, Xor)
        branches = []
        for j in range(len(c.target.items)):
            rest = _xor_minus(c.target.items, j)
            child = c.target.items[j]
            branches.append(
                (seq_with([Constraint.make(rest, T), Constraint.make(child, T)]), None)
            )
        return branches, True
    if rule is RuleName.PDEC:
        member = T[site]
        assert isinstance(member, PEnc) and member.key == PK_EPS
        rest = _without(T, site)
        return [(seq_with([Constraint.make(c.target, rest + (member.plain,))]), None)], True
    if rule is RuleName.SDEC:
        member = T[site]
        assert isinstance(member, SEnc)
        rest = _without(T, site)
        new = [
            Constraint.make(member.key, rest),
            Constraint.make(c.target, rest + (member.plain, member.key)),
        ]
        return [(seq_with(new), None)], True
    if rule is RuleName.XOR_R:
        member = T[site]
        assert isinstance(member, Xor)
        rest_T = _without(T, site)
        branches = []
        for j in range(len(member.items)):
            remainder = _xor_minus(member.items, j)
            child = member.items[j]
            new = [
                Constraint.make(remainder, rest_T),
                Constraint.make(c.target, rest_T + (child,)),
            ]
            branches.append((seq_with(new), None))
        return branches, True
    if rule is RuleName.UN:
        member = T[site]
        unifiers, complete = _cached_unify(c.target, member, unify_budget)
        branches = []
        for tau in unifiers:
            constraints = _subst_constraints(tau, prefix) + _subst_constraints(tau, suffix)
            branches.append(
                (ConstraintSequence(constraints, cs.subst.compose(tau), cs.origin), tau)
            )
        return branches, complete
    if rule is RuleName.KSUB:
        member = T[site]
        assert isinstance(member, PEnc) and member.key != PK_EPS
        unifiers, complete = _cached_unify(member.key, PK_EPS, unify_budget)
        branches = []
        for tau in unifiers:
            constraints = _subst_constraints(tau, cs.constraints)
            branches.append(
                (ConstraintSequence(constraints, cs.subst.compose(tau), cs.origin), tau)
            )
        return branches, complete
    raise ValueError(f"unknown rule {rule}")


def apply_rule(rule: RuleName, site: int, cs: ConstraintSequence) -> list[ConstraintSequence]:
    """All branch results of one rule application (empty list = dead end)."""
    branches, _ = _apply(rule, site, cs, SearchBudget())
    return [b for b, _ in branches]


# -- search -------------------------------------------------------------------------


def _canonical_key(cs: ConstraintSequence) -> str:
    """Canonical form with variables renamed by first occurrence, so that
    alpha-equivalent states produced by `un` are pruned."""
    renaming: dict[Var, Var] = {}

    def rn(t: Term) -> Term:
        mapping = {}
        for v in sorted(vars_of(t), key=term_key):
            if v not in renaming:
                renaming[v] = Var(f"_{len(renaming)}", v.sort)
            mapping[v] = renaming[v]
        return Substitution(mapping).apply(t) if mapping else t

    parts = []
    for c in cs.constraints:
        tgt = rn(c.target)
        members = [rn(t) for t in c.term_set]
        parts.append(to_text(tgt) + "!" + ",".join(to_text(m) for m in members))
    return ";".join(parts)


def _site_text(cs: ConstraintSequence, rule: RuleName, site: int) -> str:
    if site == TARGET_SITE:
        return "target"
    c = cs.constraints[cs.active_index()]
    return to_text(c.term_set[site])


def satisfiable(cs: ConstraintSequence, budget: SolverBudget | None = None) -> SolverResult:
    """Depth-first bounded search for a solution of the sequence.

    Returns on the first solution found; exhaustive completion without one is
    a definitive Unsatisfiable, while any skipped work (depth cut, node cap,
    or an incomplete unifier enumeration inside `un`/`ksub`) downgrades the
    verdict to BudgetExhausted.
    """
    budget = budget or SolverBudget()
    visited: set[str] = set()
    nodes = 0
    peak_depth = 0
    incomplete = False
    stack: list[tuple[ConstraintSequence, tuple[RuleStep, ...], int]] = [(cs, (), 0)]

    while stack:
        cur, trace, depth = stack.pop()
        cur = normalize_seq(cur)
        key = _canonical_key(cur)
        if key in visited:
            continue
        visited.add(key)
        nodes += 1
        peak_depth = max(peak_depth, depth)
        if nodes > budget.max_nodes:
            incomplete = True
            break
        if cur.active_index() is None:
            return SolverResult(
                SolveStatus.SATISFIABLE,
                ((cur.subst, trace),),
                {"nodes": nodes, "peak_depth": peak_depth},
            )
        if depth >= budget.max_depth:
            incomplete = True
            continue
        expansions: list[tuple[ConstraintSequence, tuple[RuleStep, ...], int]] = []
        for rule, site in applicable_rules(cur):
            site_desc = _site_text(cur, rule, site)
            try:
                branches, complete = _apply(rule, site, cur, budget.unify)
            except BudgetExhausted:
                incomplete = True
                continue
            if not complete:
                incomplete = True
            for bi, (branch, tau) in enumerate(branches):
                step = RuleStep(rule.value, site_desc, bi, tau)
                expansions.append((branch, trace + (step,), depth + 1))
        stack.extend(reversed(expansions))

    status = SolveStatus.BUDGET_EXHAUSTED if incomplete else SolveStatus.UNSATISFIABLE
    return SolverResult(status, (), {"nodes": nodes, "peak_depth": peak_depth})


# -- interleavings ------------------------------------------------------------------


def constraint_sequences(
    bundles: Sequence[SemiBundle], iik: Iik, secret: Const
) -> Iterator[ConstraintSequence]:
    """One constraint sequence per distinct strand interleaving.

    Every order-respecting interleaving of all strands' nodes produces a
    constraint per receive node (term set: iik plus everything sent earlier)
    and a final artificial constraint demanding the secret from everything
    sent anywhere.  Interleavings inducing the same sequence are emitted
    once, tagged with the node ids of the first witness.
    """
    assert any(secret in b.secret_constants for b in bundles), "secret must come from a bundle"
    strands: list[tuple[str, tuple]] = []
    for b in bundles:
        strands.extend(zip(b.strand_ids, (s.nodes for s in b.strands)))
    base = iik.sorted_terms()
    seen: set[str] = set()

    positions = [0] * len(strands)
    total = sum(len(nodes) for _, nodes in strands)

    def walk(placed: int, know: tuple[Term, ...], acc: list, ids: tuple[str, ...]):
        if placed == total:
            final = Constraint.make(secret, base + know)
            cs = ConstraintSequence(tuple(acc) + (final,), Substitution(), ids + ("sec",))
            key = _canonical_key(cs)
            if key not in seen:
                seen.add(key)
                yield cs
            return
        for si, (sid, nodes) in enumerate(strands):
            i = positions[si]
            if i >= len(nodes):
                continue
            node = nodes[i]
            positions[si] += 1
            nid = f"{sid}.{i + 1}"
            if node.sign == "+":
                yield from walk(placed + 1, know + (node.term,), acc, ids + (nid,))
            else:
                acc.append(Constraint.make(node.term, base + know))
                yield from walk(placed + 1, know, acc, ids + (nid,))
                acc.pop()
            positions[si] -= 1

    yield from walk(0, (), [], ())


# -- secrecy ------------------------------------------------------------------------


@dataclass(frozen=True)
class AnalysisConfig:
    sessions: int = 1
    secrets: tuple[str, ...] = ()
    extra_iik: tuple[Term, ...] = ()
    budget: SolverBudget = SolverBudget()
    naming: tuple[tuple[str, Const], ...] = ()


@dataclass(frozen=True)
class AttackTrace:
    protocols: tuple[str, ...]
    sessions: int
    secret: str
    interleaving: tuple[str, ...]
    rules: tuple[RuleStep, ...]
    substitution: Substitution
    constraints: tuple[Constraint, ...]
    elapsed_ms: float

    def to_json_dict(self) -> dict:
        return {
            "protocols": list(self.protocols),
            "sessions": self.sessions,
            "secret": self.secret,
            "interleaving": list(self.interleaving),
            "rules": [r.to_json_dict() for r in self.rules],
            "substitution": {to_text(v): to_text(t) for v, t in self.substitution.items()},
            "constraints": [c.to_json_dict() for c in self.constraints],
            "elapsed_ms": self.elapsed_ms,
        }


@dataclass(frozen=True)
class SecrecyResult:
    verdict: str  # "secure" | "attack" | "inconclusive"
    bound: int
    secrets_checked: tuple[str, ...]
    attack: AttackTrace | None
    stats: dict

    def to_json_dict(self) -> dict:
        return {
            "verdict": self.verdict,
            "bound": self.bound,
            "secrets_checked": list(self.secrets_checked),
            "attack": self.attack.to_json_dict() if self.attack else None,
            "stats": self.stats,
        }


def check_secrecy(protocols: Sequence[Protocol], config: AnalysisConfig | None = None) -> SecrecyResult:
    """Bounded-session secrecy of every requested secret across the protocols.

    All protocols are instantiated into one analysis session (their fresh
    constants are mutually disjoint) and analysed together, so passing two
    protocols is exactly the combined-execution check.
    """
    config = config or AnalysisConfig()
    started = time.perf_counter()
    if not protocols:
        raise ConfigError("no protocols given")
    if config.sessions < 1:
        raise ConfigError("sessions must be at least 1")
    session = FreshSession()
    naming = dict(config.naming) or None
    bundles = [make_semibundle(p, config.sessions, naming, session) for p in protocols]
    iik = build_iik(bundles, config.extra_iik)

    pairs: list[tuple[str, Const]] = []
    for b in bundles:
        pairs.extend((v.name, c) for v, c in b.secret_bindings)
    if config.secrets:
        unknown = set(config.secrets) - {name for name, _ in pairs}
        if unknown:
            raise ConfigError(f"no secret constants for: {', '.join(sorted(unknown))}")
        pairs = [(n, c) for n, c in pairs if n in config.secrets]
    if not pairs:
        raise ConfigError("empty secret set: declare `secret` variables or pass --secret")

    secrets = sorted({c for _, c in pairs}, key=term_key)
    names = tuple(to_text(c) for c in secrets)
    total_nodes = 0
    sequences = 0
    inconclusive = False
    for secret in secrets:
        for cs in constraint_sequences(bundles, iik, secret):
            sequences += 1
            result = satisfiable(cs, config.budget)
            total_nodes += result.stats["nodes"]
            if result.status is SolveStatus.SATISFIABLE:
                sigma, steps = result.solution()
                keep = frozenset().union(*[vars_of(c.target) | {v for t in c.term_set for v in vars_of(t)} for c in cs.constraints]) if cs.constraints else frozenset()
                trace = AttackTrace(
                    protocols=tuple(p.name for p in protocols),
                    sessions=config.sessions,
                    secret=to_text(secret),
                    interleaving=cs.origin,
                    rules=steps,
                    substitution=sigma.restrict(keep),
                    constraints=cs.constraints,
                    elapsed_ms=(time.perf_counter() - started) * 1000.0,
                )
                return SecrecyResult(
                    "attack", config.sessions, names, trace,
                    {"sequences": sequences, "nodes": total_nodes},
                )
            if result.status is SolveStatus.BUDGET_EXHAUSTED:
                inconclusive = True
    verdict = "inconclusive" if inconclusive else "secure"
    return SecrecyResult(
        verdict, config.sessions, names, None,
        {"sequences": sequences, "nodes": total_nodes,
         "elapsed_ms": (time.perf_counter() - started) * 1000.0},
    )
