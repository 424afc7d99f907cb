"""Unification: free theory, XOR theory, purification and the combined search."""

import itertools

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from xorsleuth.terms import (
    ZERO,
    Const,
    Sort,
    Substitution,
    Theory,
    Var,
    Xor,
    const,
    equal_mod,
    normalize,
    penc,
    pk,
    seq,
    senc,
    sh,
    var,
    vars_of,
    xor,
)
from xorsleuth.unify import (
    BscaTrace,
    BudgetExhausted,
    Equation,
    MixedTheoryTerm,
    NonPureAcun,
    OrderCycle,
    PartitionSpaceExceeded,
    SearchBudget,
    UnificationProblem,
    bsca_unify,
    combine_unifiers,
    enumerate_identifications,
    is_instance_of,
    partition_to_subst,
    purify,
    unify_acun,
    unify_std,
    unify_sua,
)

a = const("a", Sort.AGENT)
b = const("b", Sort.AGENT)
c = const("c", Sort.DATA)
d = const("d", Sort.DATA)
e = const("e", Sort.DATA)
n_a = const("n_a", Sort.NONCE)
one = const("1", Sort.DATA)
two = const("2", Sort.DATA)
A = var("A", Sort.AGENT)
B = var("B", Sort.AGENT)
N_B = var("N_B", Sort.NONCE)
X = var("X", Sort.DATA)
Y = var("Y", Sort.DATA)
Z = var("Z", Sort.DATA)
W = var("W", Sort.DATA)


def sua_problem(*pairs):
    return UnificationProblem(tuple(Equation(s, t, Theory.SUA) for s, t in pairs), Theory.SUA)


class TestUnifyStd:
    def test_basic_decomposition(self):
        (s,) = unify_std([(penc(seq(A, X), pk(b)), penc(seq(a, n_a), pk(b)))])
        assert s.get(A) == a and s.get(X) == n_a

    def test_sh_commutes(self):
        (s,) = unify_std([(sh(A, b), sh(b, a))])
        assert s == Substitution({A: a})

    def test_sh_two_most_general_unifiers(self):
        got = set(unify_std([(sh(A, B), sh(a, b))]))
        assert got == {Substitution({A: a, B: b}), Substitution({A: b, B: a})}

    def test_sh_renaming_branches_pruned(self):
        Zag, Wag = var("Z", Sort.AGENT), var("W", Sort.AGENT)
        got = unify_std([(sh(A, B), sh(Zag, Wag))])
        assert len(got) == 1

    def test_constant_clash(self):
        assert unify_std([(a, b)]) == ()
        assert unify_std([(seq(c, d), seq(d, c))]) == ()

    def test_arity_mismatch(self):
        assert unify_std([(seq(c, d), seq(c, d, e))]) == ()

    def test_occurs_check(self):
        assert unify_std([(X, seq(X, c))]) == ()

    def test_rejects_xor(self):
        with pytest.raises(MixedTheoryTerm):
            unify_std([(X, xor(c, d))])
        with pytest.raises(MixedTheoryTerm):
            unify_std([(penc(ZERO, pk(a)), X)])

    def test_sort_discipline(self):
        assert unify_std([(A, seq(c, d))]) == ()  # agent variable stays atomic
        assert unify_std([(A, c)]) == ()  # agent variable vs data constant
        (s,) = unify_std([(X, seq(c, d))])  # data variable takes compounds
        assert s.get(X) == seq(c, d)
        (s,) = unify_std([(X, A)])  # data variable narrows to the agent one
        assert s.get(X) == A

    def test_system_threads_bindings(self):
        (s,) = unify_std([(seq(A, A), seq(B, a))])
        assert s.apply(A) == a and s.apply(B) == a

    def test_soundness_of_every_branch(self):
        eqs = [(sh(A, B), sh(b, a)), (seq(X, B), seq(c, B))]
        for s in unify_std(eqs):
            for l, r in eqs:
                assert equal_mod(Theory.STD, s.apply(l), s.apply(r))


class TestUnifyAcun:
    def test_solves_for_variable(self):
        (s,) = unify_acun([(xor(X, c), d)])
        assert s == Substitution({X: xor(c, d)})

    def test_variable_pair(self):
        (s,) = unify_acun([(xor(X, Y), ZERO)])
        assert s.apply(X) == s.apply(Y)

    def test_identity_gives_empty_unifier(self):
        (s,) = unify_acun([(xor(c, d), xor(d, c))])
        assert not s

    def test_ground_failure(self):
        assert unify_acun([(c, d)]) == ()
        assert unify_acun([(xor(X, c, d), X)]) == ()

    def test_system(self):
        (s,) = unify_acun([(xor(X, Y), c), (Y, d)])
        assert s.apply(X) == xor(c, d) and s.apply(Y) == d

    def test_free_variables_stay_unbound(self):
        (s,) = unify_acun([(xor(X, Y), c)])
        assert len(s.domain()) == 1

    def test_rejects_non_pure(self):
        with pytest.raises(NonPureAcun):
            unify_acun([(X, seq(c, d))])
        with pytest.raises(NonPureAcun):
            unify_acun([(xor(X, penc(c, pk(a))), d)])

    def test_completeness_against_ground_search(self):
        # values are XOR-combinations of two atoms: 0, c, d, c+d
        values = [ZERO, c, d, xor(c, d)]
        pool = [X, Y, c, d, ZERO]
        rng_terms = []
        for k in (1, 2, 3):
            for combo in itertools.combinations_with_replacement(pool, k):
                rng_terms.append(normalize(Xor(tuple(combo))) if k > 1 else combo[0])
        for lhs, rhs in itertools.product(rng_terms, repeat=2):
            has_ground_solution = any(
                equal_mod(
                    Theory.ACUN,
                    Substitution({X: vx, Y: vy}).apply(lhs),
                    Substitution({X: vx, Y: vy}).apply(rhs),
                )
                for vx, vy in itertools.product(values, repeat=2)
            )
            unifiers = unify_acun([(lhs, rhs)])
            assert bool(unifiers) == has_ground_solution, f"{lhs} vs {rhs}"
            for s in unifiers:
                assert equal_mod(Theory.ACUN, s.apply(lhs), s.apply(rhs))


class TestPurify:
    def test_pure_equation_passes_through(self):
        res = purify(sua_problem((seq(a, X), seq(B, c))))
        assert len(res.equations) == 1
        assert res.equations[0].theory is Theory.STD
        assert not res.abstraction

    def test_alien_under_free_constructor(self):
        res = purify(sua_problem((X, seq(xor(c, d), e))))
        assert len(res.equations) == 2
        alien, main = res.equations
        assert alien.theory is Theory.ACUN and alien.right == xor(c, d)
        assert main.theory is Theory.STD
        assert isinstance(alien.left, Var)

    def test_identical_aliens_share_a_variable(self):
        res = purify(sua_problem((seq(xor(c, d), xor(c, d)), Y)))
        (main,) = [eq for eq in res.equations if eq.theory is Theory.STD]
        assert len(res.abstraction) == 1
        assert main.left.items[0] == main.left.items[1]

    def test_running_example_shape(self):
        lhs = penc(seq(one, n_a), pk(B))
        rhs = xor(penc(seq(one, N_B), pk(a)), seq(two, A), seq(two, b))
        res = purify(sua_problem((lhs, rhs)))
        eqs = res.equations
        assert len(eqs) == 5
        std_eqs = [q for q in eqs if q.theory is Theory.STD]
        acun_eqs = [q for q in eqs if q.theory is Theory.ACUN]
        assert len(std_eqs) == 4 and len(acun_eqs) == 1
        # four abstraction equations bind fresh variables to the alien subterms
        assert {q.right for q in std_eqs} == {
            penc(seq(one, n_a), pk(B)),
            penc(seq(one, N_B), pk(a)),
            seq(two, A),
            seq(two, b),
        }
        assert all(isinstance(q.left, Var) for q in std_eqs)
        # the main equation relates the abstraction of the left side to an
        # XOR of the other three abstraction variables
        (main,) = acun_eqs
        assert isinstance(main.left, Var)
        assert isinstance(main.right, Xor) and len(main.right.items) == 3
        assert all(isinstance(it, Var) for it in main.right.items)
        # the first emitted equation abstracts the left-hand encryption
        assert std_eqs[0].right == lhs and std_eqs[0].left == main.left


class TestIdentifications:
    def test_counts_follow_bell_numbers(self):
        vs = [X, Y, Z]
        parts = list(enumerate_identifications(vs))
        assert len(parts) == 5
        assert parts[0] == ((X,), (Y,), (Z,))  # identity first
        assert parts[-1] == ((X, Y, Z),)
        assert len(list(enumerate_identifications([X, Y, Z, W]))) == 15

    def test_empty_and_singleton(self):
        assert list(enumerate_identifications([])) == [()]
        assert list(enumerate_identifications([X])) == [((X,),)]

    def test_limit(self):
        vs = [var(f"V{i}") for i in range(13)]
        with pytest.raises(PartitionSpaceExceeded):
            list(enumerate_identifications(vs))

    def test_partition_to_subst(self):
        s = partition_to_subst(((X, Y), (Z,)))
        assert s.apply(Y) == X and s.apply(Z) == Z


class TestCombine:
    def test_back_substitution_through_grounding(self):
        x_c = Const("x", Sort.DATA)
        y_c = Const("y", Sort.DATA)
        s1 = Substitution({X: seq(c, d)})
        s2 = Substitution({W: xor(x_c, y_c)})
        beta = Substitution({X: x_c, Y: y_c})
        combined = combine_unifiers(s1, s2, [X, Y, W], ([X, Y], [W]), grounding=beta)
        assert combined.apply(W) == xor(seq(c, d), Y)

    def test_order_cycle(self):
        s1 = Substitution({X: seq(Y, c)})
        s2 = Substitution({Y: seq(X, d)})
        with pytest.raises(OrderCycle):
            combine_unifiers(s1, s2, [X, Y], ([X], [Y]))

    def test_free_variables_pass_through(self):
        s1 = Substitution({X: seq(Y, c)})
        combined = combine_unifiers(s1, Substitution(), [X], ([X], []))
        assert combined.apply(X) == seq(Y, c)


class TestBsca:
    def test_running_example(self):
        lhs = penc(seq(one, n_a), pk(B))
        rhs = xor(penc(seq(one, N_B), pk(a)), seq(two, A), seq(two, b))
        unifiers, trace = bsca_unify(sua_problem((lhs, rhs)))
        expected = Substitution({B: a, N_B: n_a, A: b})
        assert unifiers == (expected,)
        assert len(trace.gamma1) == 5
        assert trace.complete
        # the successful identification merges the two encryption abstractions
        # and the two sequence abstractions
        assert sorted(len(block) for block in trace.var_idp) == [2, 2]
        assert trace.gamma4_2 == ()  # XOR part became trivial and dropped out
        for eq in (Equation(lhs, rhs, Theory.SUA),):
            assert equal_mod(Theory.SUA, expected.apply(eq.left), expected.apply(eq.right))

    def test_pure_std_shortcut(self):
        unifiers, trace = bsca_unify(sua_problem((seq(A, c), seq(a, c))))
        assert trace.shortcut == "std"
        assert unifiers == (Substitution({A: a}),)

    def test_pure_acun_shortcut(self):
        unifiers, trace = bsca_unify(sua_problem((X, xor(c, d))))
        assert trace.shortcut == "acun"
        assert unifiers == (Substitution({X: xor(c, d)}),)

    def test_mixed_solved_through_shared_variable(self):
        # [X,c] against [c+d,c]: X must take the XOR value
        unifiers, trace = bsca_unify(sua_problem((seq(X, c), seq(xor(c, d), c))))
        assert unifiers == (Substitution({X: xor(c, d)}),)

    def test_definitive_failure_is_not_an_error(self):
        unifiers, trace = bsca_unify(sua_problem((penc(c, pk(a)), xor(c, d))))
        assert unifiers == ()
        assert trace.complete

    def test_budget_exhaustion_raises(self):
        lhs = penc(seq(one, n_a), pk(B))
        rhs = xor(penc(seq(one, N_B), pk(a)), seq(two, A), seq(two, b))
        with pytest.raises(BudgetExhausted):
            bsca_unify(sua_problem((lhs, rhs)), SearchBudget(max_configs=1))

    def test_agent_variable_never_bound_to_xor(self):
        unifiers, _ = bsca_unify(sua_problem((A, xor(c, d))))
        assert unifiers == ()

    def test_nilpotent_collapse_found(self):
        # (X + c) unified with zero forces X = c
        unifiers, _ = bsca_unify(sua_problem((xor(X, c), ZERO)))
        assert unifiers == (Substitution({X: c}),)

    def test_xor_inside_encryption(self):
        lhs = penc(xor(X, c), pk(a))
        rhs = penc(xor(d, c), pk(a))
        unifiers, _ = bsca_unify(sua_problem((lhs, rhs)))
        assert Substitution({X: d}) in unifiers
        for s in unifiers:
            assert equal_mod(Theory.SUA, s.apply(lhs), s.apply(rhs))

    def test_trace_json_round_trip(self):
        _, trace = bsca_unify(sua_problem((seq(X, c), seq(xor(c, d), c))))
        js = trace.to_json_dict()
        assert set(js) >= {"gamma1", "gamma2", "gamma3", "gamma4_1", "gamma4_2",
                           "gamma5_1", "gamma5_2", "beta", "var_idp", "unifiers"}


class TestUnifySua:
    def test_std_route(self):
        unifiers, complete = unify_sua(seq(A, c), seq(a, c))
        assert complete and unifiers == (Substitution({A: a}),)

    def test_budget_swallowed(self):
        lhs = penc(seq(one, n_a), pk(B))
        rhs = xor(penc(seq(one, N_B), pk(a)), seq(two, A), seq(two, b))
        unifiers, complete = unify_sua(lhs, rhs, SearchBudget(max_configs=1))
        assert unifiers == () and not complete


# -- randomized soundness sweep ---------------------------------------------------

_pool_atoms = st.sampled_from([a, b, c, d, n_a, A, B, X, Y, N_B])


def _mixed(kids):
    return st.one_of(
        st.tuples(kids, kids).map(lambda p: seq(*p)),
        st.tuples(kids, kids).map(lambda p: normalize(Xor(p))),
        st.tuples(kids).map(lambda p: penc(p[0], pk(a))),
        st.tuples(kids, kids).map(lambda p: senc(p[0], sh(a, b))),
    )


_mixed_terms = st.recursive(_pool_atoms, _mixed, max_leaves=6)


@given(_mixed_terms, _mixed_terms)
@settings(max_examples=120, deadline=None)
def test_every_returned_unifier_validates(t1, t2):
    try:
        unifiers, _ = bsca_unify(sua_problem((t1, t2)), SearchBudget(max_configs=2000))
    except BudgetExhausted:
        return
    for s in unifiers:
        assert equal_mod(Theory.SUA, s.apply(t1), s.apply(t2))
        assert s.is_idempotent()


@given(_mixed_terms)
@settings(max_examples=60, deadline=None)
def test_reflexive_problems_unify_with_empty_substitution(t):
    unifiers, _ = bsca_unify(sua_problem((t, t)))
    assert Substitution() in unifiers


def test_is_instance_of():
    general = Substitution({X: seq(Y, c)})
    special = Substitution({X: seq(d, c), Y: d})
    assert is_instance_of(special, general, [X, Y])
    assert not is_instance_of(general, special, [X, Y])
