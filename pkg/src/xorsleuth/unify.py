"""Unification in the free theory, the XOR theory, and their combination.

``unify_std`` handles the free constructors (with commutative shared keys),
``unify_acun`` solves pure XOR problems by Gaussian elimination over GF(2),
and ``bsca_unify`` combines the two: it purifies mixed equations, searches
variable identifications and theory splits, solves the two pure projections
independently, and recombines the partial unifiers along a dependency order.
Every combined candidate is validated against the original equations, so the
search heuristics can only cost completeness, never soundness.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence

from .terms import (
    Const,
    PEnc,
    Pk,
    SEnc,
    Seq,
    Sh,
    Sort,
    SortError,
    Substitution,
    Term,
    Theory,
    Var,
    Xor,
    XorsleuthError,
    Zero,
    apply_subst,
    equal_mod,
    is_atom,
    normalize,
    subterms,
    term_key,
    to_text,
    vars_of,
)

ABSTRACTION_PREFIX = "#v"
GROUNDING_PREFIX = "#c"

_FLEX_SORTS = (Sort.DATA, Sort.NONCE, Sort.KEY)


class MixedTheoryTerm(XorsleuthError):
    """A free-theory unification problem mentions XOR or zero."""


class NonPureAcun(XorsleuthError):
    """An XOR-theory problem contains an unabstracted free-theory subterm."""


class PartitionSpaceExceeded(XorsleuthError):
    """Too many variables to enumerate identifications."""


class BudgetExhausted(XorsleuthError):
    """Search gave up before completing; inconclusive, not 'no unifier'."""


class OrderCycle(XorsleuthError):
    """No linear variable order admits the requested combination."""


@dataclass(frozen=True)
class Equation:
    left: Term
    right: Term
    theory: Theory = Theory.SUA

    def normalized(self) -> "Equation":
        return Equation(normalize(self.left), normalize(self.right), self.theory)

    def __repr__(self) -> str:
        return f"{to_text(self.left)} =?[{self.theory.value}] {to_text(self.right)}"


@dataclass(frozen=True)
class UnificationProblem:
    equations: tuple[Equation, ...]
    theory: Theory = Theory.SUA


def _as_equations(equations, default_theory: Theory) -> list[Equation]:
    out = []
    for e in equations:
        if isinstance(e, Equation):
            out.append(e.normalized())
        else:
            s, t = e
            out.append(Equation(normalize(s), normalize(t), default_theory))
    return out


def binding_ok(v: Var, t: Term) -> bool:
    """Sort discipline: Agent/Tag variables only take atoms of their own sort."""
    if v.sort in (Sort.AGENT, Sort.TAG):
        return is_atom(t) and t.sort is v.sort
    if is_atom(t):
        return t.sort is v.sort or Sort.DATA in (v.sort, t.sort)
    return True


def subst_well_sorted(s: Substitution) -> bool:
    return all(binding_ok(v, t) for v, t in s.items())


# -- free theory ----------------------------------------------------------------


def _reject_xor(terms: Iterable[Term]) -> None:
    for t in terms:
        for s in subterms(t):
            if isinstance(s, (Xor, Zero)):
                raise MixedTheoryTerm(f"free-theory unification given {to_text(t)}")


def unify_std(equations) -> tuple[Substitution, ...]:
    """Complete set of most-general unifiers in the free theory.

    Commutativity of sh produces at most two branches per sh pair; results are
    pruned to most-general representatives and returned in canonical order.
    """
    eqs = _as_equations(equations, Theory.STD)
    _reject_xor(itertools.chain.from_iterable((e.left, e.right) for e in eqs))
    problem_vars = frozenset().union(*[vars_of(e.left) | vars_of(e.right) for e in eqs]) if eqs else frozenset()

    solutions: list[Substitution] = []
    stack: list[tuple[list[tuple[Term, Term]], dict[Var, Term]]] = [
        ([(e.left, e.right) for e in eqs], {})
    ]
    while stack:
        todo, bnd = stack.pop()
        failed = False
        while todo:
            s, t = todo.pop()
            if bnd:
                sub = Substitution(bnd)
                s, t = sub.apply(s), sub.apply(t)
            if s == t:
                continue
            if isinstance(s, Var) or isinstance(t, Var):
                if not isinstance(s, Var):
                    s, t = t, s
                if isinstance(t, Var) and not binding_ok(s, t) and binding_ok(t, s):
                    s, t = t, s
                if s in vars_of(t) or not binding_ok(s, t):
                    failed = True
                    break
                upd = Substitution({s: t})
                bnd = {v: upd.apply(u) for v, u in bnd.items()}
                bnd[s] = t
                continue
            if isinstance(s, Seq) and isinstance(t, Seq) and len(s.items) == len(t.items):
                todo.extend(zip(s.items, t.items))
            elif isinstance(s, PEnc) and isinstance(t, PEnc):
                todo.extend([(s.plain, t.plain), (s.key, t.key)])
            elif isinstance(s, SEnc) and isinstance(t, SEnc):
                todo.extend([(s.plain, t.plain), (s.key, t.key)])
            elif isinstance(s, Pk) and isinstance(t, Pk):
                todo.append((s.agent, t.agent))
            elif isinstance(s, Sh) and isinstance(t, Sh):
                stack.append((todo + [(s.left, t.right), (s.right, t.left)], dict(bnd)))
                todo.extend([(s.left, t.left), (s.right, t.right)])
            else:
                failed = True
                break
        if not failed:
            solutions.append(Substitution(bnd).restrict(problem_vars))
    return _prune_to_most_general(solutions)


def match_std(pairs: Sequence[tuple[Term, Term]]) -> bool:
    """Is there a one-way match making every pattern equal its (frozen) target?"""
    stack: list[tuple[list[tuple[Term, Term]], dict[Var, Term]]] = [(list(pairs), {})]
    while stack:
        todo, bnd = stack.pop()
        failed = False
        while todo:
            p, t = todo.pop()
            if bnd:
                p = Substitution(bnd).apply(p)
            if p == t:
                continue
            if isinstance(p, Var):
                if not binding_ok(p, t):
                    failed = True
                    break
                bnd = dict(bnd)
                bnd[p] = t
                continue
            if isinstance(p, Seq) and isinstance(t, Seq) and len(p.items) == len(t.items):
                todo.extend(zip(p.items, t.items))
            elif isinstance(p, PEnc) and isinstance(t, PEnc):
                todo.extend([(p.plain, t.plain), (p.key, t.key)])
            elif isinstance(p, SEnc) and isinstance(t, SEnc):
                todo.extend([(p.plain, t.plain), (p.key, t.key)])
            elif isinstance(p, Pk) and isinstance(t, Pk):
                todo.append((p.agent, t.agent))
            elif isinstance(p, Sh) and isinstance(t, Sh):
                stack.append((todo + [(p.left, t.right), (p.right, t.left)], dict(bnd)))
                todo.extend([(p.left, t.left), (p.right, t.right)])
            elif isinstance(p, Xor) and isinstance(t, Xor) and len(p.items) == len(t.items):
                # used only on canonical forms; children matched positionally
                todo.extend(zip(p.items, t.items))
            else:
                failed = True
                break
        if not failed:
            return True
    return False


def is_instance_of(special: Substitution, general: Substitution, over: Iterable[Var]) -> bool:
    pairs = [(general.apply(v), special.apply(v)) for v in over]
    return match_std(pairs)


def _prune_to_most_general(cands: list[Substitution]) -> tuple[Substitution, ...]:
    if len(cands) <= 1:
        return tuple(cands)
    over = sorted({v for s in cands for v in s.domain()}, key=term_key)
    uniq: list[Substitution] = []
    for s in cands:
        if s not in uniq:
            uniq.append(s)
    uniq.sort(key=lambda s: tuple((term_key(v), term_key(t)) for v, t in s.items()))
    # keep s unless another candidate is strictly more general, or an
    # equivalent one (mutual instances, i.e. a renaming) was already kept
    kept: list[Substitution] = []
    for s in uniq:
        keep = True
        for k in uniq:
            if k == s:
                continue
            if is_instance_of(s, k, over):
                if not is_instance_of(k, s, over) or k in kept:
                    keep = False
                    break
        if keep:
            kept.append(s)
    return tuple(kept)


# -- XOR theory -----------------------------------------------------------------


def _acun_summands(t: Term) -> list[Term]:
    t = normalize(t)
    if isinstance(t, Zero):
        return []
    if isinstance(t, Xor):
        return list(t.items)
    return [t]


def _check_pure_acun(t: Term) -> None:
    for s in _acun_summands(t):
        if not is_atom(s):
            raise NonPureAcun(f"unabstracted subterm {to_text(s)} in XOR problem")


def unify_acun(equations) -> tuple[Substitution, ...]:
    """Most-general unifier of an elementary XOR problem, by elimination over GF(2).

    Sides may only contain variables, constants, zero and XOR.  Returns a
    single unifier (possibly empty) or nothing when the system is unsolvable.
    """
    eqs = _as_equations(equations, Theory.ACUN)
    rows_syms: list[list[Term]] = []
    for e in eqs:
        _check_pure_acun(e.left)
        _check_pure_acun(e.right)
        rows_syms.append(_acun_summands(e.left) + _acun_summands(e.right))

    all_syms = {s for row in rows_syms for s in row}
    variables = sorted((s for s in all_syms if isinstance(s, Var)), key=_pivot_key)
    atoms = sorted((s for s in all_syms if isinstance(s, Const)), key=term_key)
    vin = {v: i for i, v in enumerate(variables)}
    ain = {a: i for i, a in enumerate(atoms)}

    rows: list[list[int]] = []
    for syms in rows_syms:
        vbits, abits = 0, 0
        for s in syms:
            if isinstance(s, Var):
                vbits ^= 1 << vin[s]
            else:
                abits ^= 1 << ain[s]
        rows.append([vbits, abits])

    pivot_of: dict[int, list[int]] = {}
    for row in rows:
        for col in range(len(variables)):
            if row[0] >> col & 1 and col in pivot_of:
                p = pivot_of[col]
                row[0] ^= p[0]
                row[1] ^= p[1]
        if row[0] == 0:
            if row[1] != 0:
                return ()
            continue
        col = (row[0] & -row[0]).bit_length() - 1
        for p in pivot_of.values():
            if p[0] >> col & 1:
                p[0] ^= row[0]
                p[1] ^= row[1]
        pivot_of[col] = row

    bindings: dict[Var, Term] = {}
    for col, row in pivot_of.items():
        parts: list[Term] = [
            variables[j] for j in range(len(variables)) if j != col and row[0] >> j & 1
        ]
        parts.extend(a for i, a in enumerate(atoms) if row[1] >> i & 1)
        bindings[variables[col]] = normalize(Xor(tuple(parts))) if parts else normalize(Xor(()))
    return (Substitution(bindings),)


def _pivot_key(v: Var):
    # prefer to solve for unconstrained sorts, and for abstraction variables
    return (v.sort not in _FLEX_SORTS, not v.name.startswith(ABSTRACTION_PREFIX), term_key(v))


# -- purification ----------------------------------------------------------------


def _head_theory(t: Term) -> Theory | None:
    if isinstance(t, (Xor, Zero)):
        return Theory.ACUN
    if isinstance(t, (Seq, PEnc, SEnc, Pk, Sh)):
        return Theory.STD
    return None


def is_pure(t: Term, theory: Theory) -> bool:
    return all(
        _head_theory(s) in (None, theory) for s in subterms(t)
    )


@dataclass(frozen=True)
class PurifyResult:
    equations: tuple[Equation, ...]
    abstraction: tuple[tuple[Var, Term], ...]

    def abstraction_map(self) -> dict[Var, Term]:
        return dict(self.abstraction)


def purify(problem: UnificationProblem) -> PurifyResult:
    """Split mixed equations into theory-pure ones via fresh abstraction variables.

    Each maximal alien subterm is replaced by a fresh variable and equated to
    it in the alien's own theory; identical aliens share one variable.
    """
    out: list[Equation] = []
    abstraction: dict[Var, Term] = {}
    by_term: dict[Term, Var] = {}
    counter = itertools.count()

    def abstract(t: Term, theory: Theory) -> Term:
        if is_atom(t):
            return t
        ht = _head_theory(t)
        if ht == theory or (isinstance(t, Zero) and theory is Theory.ACUN):
            if isinstance(t, Seq):
                return Seq(tuple(abstract(c, theory) for c in t.items))
            if isinstance(t, Xor):
                return normalize(Xor(tuple(abstract(c, theory) for c in t.items)))
            if isinstance(t, PEnc):
                return PEnc(abstract(t.plain, theory), abstract(t.key, theory))
            if isinstance(t, SEnc):
                return SEnc(abstract(t.plain, theory), abstract(t.key, theory))
            if isinstance(t, Pk):
                return t
            if isinstance(t, Sh):
                return t
            return t
        if t in by_term:
            return by_term[t]
        v = Var(f"{ABSTRACTION_PREFIX}{next(counter)}", Sort.DATA)
        by_term[t] = v
        purified_alien = abstract(t, ht)
        out.append(Equation(v, purified_alien, ht))
        abstraction[v] = t
        return v

    for eq in problem.equations:
        left, right = normalize(eq.left), normalize(eq.right)
        heads = {_head_theory(left), _head_theory(right)} - {None}
        if heads == {Theory.STD, Theory.ACUN}:
            root = Theory.ACUN
        elif heads:
            (root,) = heads
        else:
            root = Theory.STD
        pl = abstract(left, root)
        pr = abstract(right, root)
        out.append(Equation(normalize(pl), normalize(pr), root))

    return PurifyResult(tuple(out), tuple(sorted(abstraction.items(), key=lambda kv: term_key(kv[0]))))


# -- variable identifications -----------------------------------------------------

Partition = tuple[tuple[Var, ...], ...]


def enumerate_identifications(variables: Iterable[Var], limit: int = 12) -> Iterator[Partition]:
    """All set partitions of the variables, identity partition first, then coarser."""
    vs = sorted(set(variables), key=term_key)
    n = len(vs)
    if n > limit:
        raise PartitionSpaceExceeded(f"{n} variables exceeds identification limit {limit}")
    if n == 0:
        yield ()
        return
    for nblocks in range(n, 0, -1):
        yield from _partitions_into(vs, nblocks)


def _partitions_into(vs: list[Var], k: int) -> Iterator[Partition]:
    n = len(vs)

    def rec(i: int, blocks: list[list[Var]]) -> Iterator[Partition]:
        if i == n:
            if len(blocks) == k:
                yield tuple(tuple(b) for b in blocks)
            return
        remaining = n - i
        for j, b in enumerate(blocks):
            if len(blocks) + remaining - 1 >= k:
                b.append(vs[i])
                yield from rec(i + 1, blocks)
                b.pop()
        if len(blocks) < k:
            blocks.append([vs[i]])
            yield from rec(i + 1, blocks)
            blocks.pop()

    yield from rec(0, [])


def _sort_rank(v: Var) -> int:
    # most-constrained sorts first, so the representative can absorb the rest
    if v.sort in (Sort.AGENT, Sort.TAG):
        return 0
    return 1 if v.sort is not Sort.DATA else 2


def partition_to_subst(partition: Partition) -> Substitution | None:
    """Identify each block's variables with the block's most constrained
    variable (ties broken by term order).  ``None`` when some block mixes
    incompatible sorts and therefore admits no well-sorted value at all."""
    bindings: dict[Var, Term] = {}
    for block in partition:
        rep = min(block, key=lambda v: (_sort_rank(v), term_key(v)))
        for v in block:
            if v == rep:
                continue
            if not binding_ok(v, rep):
                return None
            bindings[v] = rep
    return Substitution(bindings)


# -- combination -------------------------------------------------------------------


def combine_unifiers(
    s1: Substitution,
    s2: Substitution,
    order: Sequence[Var],
    v_split: tuple[Iterable[Var], Iterable[Var]],
    grounding: Substitution | None = None,
) -> Substitution:
    """Merge two theory-pure unifiers along a linear variable order.

    Variables in the first split component take their binding from ``s1``,
    the rest from ``s2``; each binding may refer only to variables earlier in
    the order (else :class:`OrderCycle`).  ``grounding`` optionally maps
    variables to the ground constants that stood for them, and is inverted
    before combining.
    """
    v1 = set(v_split[0])
    unground = _invert_grounding(grounding)
    pos = {v: i for i, v in enumerate(order)}
    bindings: dict[Var, Term] = {}
    for i, x in enumerate(order):
        src = s1 if x in v1 else s2
        raw = src.get(x)
        if raw is None:
            continue
        resolved = apply_subst(Substitution(bindings), unground(raw))
        for v in vars_of(resolved):
            if pos.get(v, -1) >= i:
                raise OrderCycle(f"binding of {x.name} refers to {v.name}, not earlier in order")
        bindings[x] = resolved
    return Substitution(bindings)


def _invert_grounding(grounding: Substitution | None):
    if grounding is None:
        return lambda t: t
    inverse = {c: v for v, c in grounding.items() if isinstance(c, Const)}

    def unground(t: Term) -> Term:
        def rep(u: Term) -> Term:
            if isinstance(u, Const):
                return inverse.get(u, u)
            if isinstance(u, (Var, Zero)):
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

    return unground


def _toposort_bindings(s1: Substitution, s2: Substitution) -> list[Var] | None:
    """Order domain variables so each binding refers only to earlier variables."""
    bindings: dict[Var, Term] = {}
    for v, t in itertools.chain(s1.items(), s2.items()):
        bindings.setdefault(v, t)
    nodes = sorted(bindings, key=term_key)
    node_set = set(nodes)
    deps = {v: sorted(vars_of(bindings[v]) & node_set, key=term_key) for v in nodes}
    order: list[Var] = []
    state: dict[Var, int] = {}

    def visit(v: Var) -> bool:
        if state.get(v) == 2:
            return True
        if state.get(v) == 1:
            return False
        state[v] = 1
        for d in deps[v]:
            if not visit(d):
                return False
        state[v] = 2
        order.append(v)
        return True

    for v in nodes:
        if not visit(v):
            return None
    return order


# -- combined search ---------------------------------------------------------------


@dataclass(frozen=True)
class SearchBudget:
    max_identification_vars: int = 12
    max_configs: int = 20000


@dataclass
class BscaTrace:
    """Record of the combination search; stages are from the first success."""

    gamma1: tuple[Equation, ...] = ()
    gamma2: tuple[Equation, ...] = ()
    var_idp: Partition = ()
    gamma3: tuple[Equation, ...] = ()
    gamma4_1: tuple[Equation, ...] = ()
    gamma4_2: tuple[Equation, ...] = ()
    v1: tuple[Var, ...] = ()
    v2: tuple[Var, ...] = ()
    beta: Substitution = field(default_factory=Substitution)
    gamma5_1: tuple[Equation, ...] = ()
    gamma5_2: tuple[Equation, ...] = ()
    sigma1: Substitution = field(default_factory=Substitution)
    sigma2: Substitution = field(default_factory=Substitution)
    unifiers: tuple[Substitution, ...] = ()
    configs_tried: int = 0
    complete: bool = True
    shortcut: str | None = None

    def to_json_dict(self) -> dict:
        def eqs(es):
            return [f"{to_text(e.left)} =?[{e.theory.value}] {to_text(e.right)}" for e in es]

        return {
            "shortcut": self.shortcut,
            "gamma1": eqs(self.gamma1),
            "gamma2": eqs(self.gamma2),
            "var_idp": [[v.name for v in block] for block in self.var_idp],
            "gamma3": eqs(self.gamma3),
            "gamma4_1": eqs(self.gamma4_1),
            "gamma4_2": eqs(self.gamma4_2),
            "v1": [v.name for v in self.v1],
            "v2": [v.name for v in self.v2],
            "beta": {v.name: to_text(t) for v, t in self.beta.items()},
            "gamma5_1": eqs(self.gamma5_1),
            "gamma5_2": eqs(self.gamma5_2),
            "sigma1": {to_text(v): to_text(t) for v, t in self.sigma1.items()},
            "sigma2": {to_text(v): to_text(t) for v, t in self.sigma2.items()},
            "unifiers": [
                {to_text(v): to_text(t) for v, t in s.items()} for s in self.unifiers
            ],
            "configs_tried": self.configs_tried,
            "complete": self.complete,
        }


def _apply_to_eqs(s: Substitution, eqs: Iterable[Equation]) -> tuple[Equation, ...]:
    out = []
    for e in eqs:
        ne = Equation(s.apply(e.left), s.apply(e.right), e.theory)
        if ne.left != ne.right:
            out.append(ne)
    return tuple(out)


def _subsets_by_size(items: list[Var]) -> Iterator[frozenset[Var]]:
    for size in range(len(items) + 1):
        for combo in itertools.combinations(items, size):
            yield frozenset(combo)


def bsca_unify(
    problem: UnificationProblem, budget: SearchBudget | None = None
) -> tuple[tuple[Substitution, ...], BscaTrace]:
    """Unifiers modulo the combined theory, with a search trace.

    Pure problems are dispatched straight to the single-theory algorithms.
    Mixed problems are purified; identifications are enumerated over the
    variables of XOR equations (identity partition first), single-theory
    variables are assigned their forced component, and for each configuration the
    two pure systems are solved and recombined.  Candidates are kept only if
    they satisfy the original equations modulo the combined theory.  An
    exhausted budget with no unifier raises :class:`BudgetExhausted`; a
    completed search with no unifier is a definitive failure.
    """
    budget = budget or SearchBudget()
    orig = [e.normalized() for e in problem.equations]
    orig_vars = frozenset().union(*[vars_of(e.left) | vars_of(e.right) for e in orig]) if orig else frozenset()
    trace = BscaTrace()

    def validated(cands: Iterable[Substitution]) -> tuple[Substitution, ...]:
        good = []
        for s in cands:
            s = s.restrict(orig_vars)
            if not subst_well_sorted(s):
                continue
            if all(equal_mod(Theory.SUA, s.apply(e.left), s.apply(e.right)) for e in orig):
                if s not in good:
                    good.append(s)
        good.sort(key=lambda s: tuple((term_key(v), term_key(t)) for v, t in s.items()))
        return tuple(good)

    has_xor = any(
        isinstance(s, (Xor, Zero))
        for e in orig
        for s in subterms(e.left) | subterms(e.right)
    )
    if not has_xor:
        trace.shortcut = "std"
        trace.unifiers = validated(unify_std(orig))
        return trace.unifiers, trace
    if all(is_pure(e.left, Theory.ACUN) and is_pure(e.right, Theory.ACUN) for e in orig):
        trace.shortcut = "acun"
        trace.gamma5_2 = tuple(orig)
        acun_result = unify_acun(orig)
        if acun_result:
            trace.sigma2 = acun_result[0]
        trace.unifiers = validated(acun_result)
        return trace.unifiers, trace

    pure = purify(UnificationProblem(tuple(orig), Theory.SUA))
    gamma2 = pure.equations
    trace.gamma1 = gamma2
    trace.gamma2 = gamma2

    acun_vars = sorted(
        {v for e in gamma2 if e.theory is Theory.ACUN for v in vars_of(e.left) | vars_of(e.right)},
        key=term_key,
    )
    complete = True
    try:
        partitions: Iterable[Partition] = list(
            enumerate_identifications(acun_vars, budget.max_identification_vars)
        )
    except PartitionSpaceExceeded:
        partitions = [tuple((v,) for v in acun_vars)]
        complete = False

    found: list[Substitution] = []
    seen: set[Substitution] = set()
    failed_pure: set[tuple] = set()
    configs = 0
    first_success_recorded = False
    stop = False

    for partition in partitions:
        if stop:
            break
        ident = partition_to_subst(partition)
        if ident is None:
            continue
        gamma3 = _apply_to_eqs(ident, gamma2)
        g41 = tuple(e for e in gamma3 if e.theory is Theory.STD)
        g42 = tuple(e for e in gamma3 if e.theory is Theory.ACUN)
        std_vars = frozenset().union(*[vars_of(e.left) | vars_of(e.right) for e in g41]) if g41 else frozenset()
        acun_now = frozenset().union(*[vars_of(e.left) | vars_of(e.right) for e in g42]) if g42 else frozenset()
        shared = sorted(std_vars & acun_now, key=term_key)

        for to_v2 in _subsets_by_size(shared):
            if configs >= budget.max_configs:
                complete = False
                stop = True
                break
            configs += 1
            v1 = sorted((std_vars - acun_now) | (set(shared) - to_v2), key=term_key)
            v2 = sorted((acun_now - std_vars) | to_v2, key=term_key)
            beta_bindings: dict[Var, Term] = {}
            counter = itertools.count()
            for v in sorted(set(v1) & acun_now, key=term_key):
                beta_bindings[v] = Const(f"{GROUNDING_PREFIX}{next(counter)}", v.sort)
            for v in sorted(set(v2) & std_vars, key=term_key):
                beta_bindings[v] = Const(f"{GROUNDING_PREFIX}{next(counter)}", v.sort)
            beta = Substitution(beta_bindings)
            g51 = _apply_to_eqs(beta.restrict(v2), g41)
            g52 = _apply_to_eqs(beta.restrict(v1), g42)

            sig = (tuple(map(repr, g51)), tuple(map(repr, g52)))
            if sig in failed_pure:
                continue
            sigma2s = unify_acun(g52)
            if not sigma2s:
                failed_pure.add(sig)
                continue
            sigma1s = unify_std(g51)
            if not sigma1s:
                failed_pure.add(sig)
                continue

            produced = False
            for sigma1 in sigma1s:
                for sigma2 in sigma2s:
                    unground = _invert_grounding(beta)
                    u1 = Substitution({v: unground(t) for v, t in sigma1.items()})
                    u2 = Substitution({v: unground(t) for v, t in sigma2.items()})
                    order = _toposort_bindings(u1, u2)
                    if order is None:
                        continue
                    try:
                        combined = combine_unifiers(u1, u2, order, (v1, v2))
                        full = combined.compose(ident).close()
                    except (OrderCycle, SortError):
                        # SortError: a pure-theory unifier forced a non-agent
                        # value into a pk/sh position; no well-sorted instance.
                        continue
                    for cand in validated([full]):
                        produced = True
                        if cand not in seen:
                            seen.add(cand)
                            found.append(cand)
                        if not first_success_recorded:
                            first_success_recorded = True
                            trace.var_idp = partition
                            trace.gamma3 = gamma3
                            trace.gamma4_1 = g41
                            trace.gamma4_2 = g42
                            trace.v1 = tuple(v1)
                            trace.v2 = tuple(v2)
                            trace.beta = beta
                            trace.gamma5_1 = g51
                            trace.gamma5_2 = g52
                            trace.sigma1 = sigma1
                            trace.sigma2 = sigma2
            if not produced:
                failed_pure.add(sig)

    trace.configs_tried = configs
    trace.complete = complete
    found.sort(key=lambda s: tuple((term_key(v), term_key(t)) for v, t in s.items()))
    trace.unifiers = tuple(found)
    if not found and not complete:
        raise BudgetExhausted(
            f"combination search stopped after {configs} configurations without completing"
        )
    return trace.unifiers, trace


def unify_sua(m: Term, t: Term, budget: SearchBudget | None = None) -> tuple[tuple[Substitution, ...], bool]:
    """Unifiers of a single equation modulo the combined theory.

    Returns the unifiers and whether the search was complete; an exhausted
    budget yields ``((), False)`` rather than an exception.
    """
    try:
        unifiers, trace = bsca_unify(
            UnificationProblem((Equation(m, t, Theory.SUA),), Theory.SUA), budget
        )
        return unifiers, trace.complete
    except BudgetExhausted:
        return (), False
