"""Protocol text format: parsing, sort inference, rendering, round-trips."""

from pathlib import Path

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from xorsleuth.dsl import (
    DuplicateRole,
    ProtocolSyntaxError,
    UndeclaredIdentifier,
    parse_protocol,
    parse_protocol_file,
    render_protocol,
)
from xorsleuth.terms import Const, Sort, SortError, Var, to_text

FIXTURES = Path(__file__).resolve().parents[1] / "src" / "xorsleuth" / "fixtures"

MINATURE = """
protocol mini
vars A:Agent NA:Nonce
fresh NA
secret NA
role A:
  send penc(seq(A, NA), pk(b))
"""


class TestParsing:
    def test_minimal_protocol(self):
        p = parse_protocol(MINATURE)
        assert p.name == "mini"
        assert [rn for rn, _ in p.roles] == ["A"]
        assert p.fresh_vars == {Var("NA", Sort.NONCE)}
        assert p.secret_vars == {Var("NA", Sort.NONCE)}
        assert to_text(p.node_terms()[0]) == (
            "penc(seq(var(A:Agent),var(NA:Nonce)),pk(const(b:Agent)))"
        )

    def test_all_fixtures_parse(self):
        for f in sorted(FIXTURES.glob("*.proto")):
            p = parse_protocol_file(f)
            assert p.roles

    def test_comments_and_whitespace_ignored(self):
        p = parse_protocol("# heading\nprotocol x # trailing\nrole A:\n\tsend a\n")
        assert p.name == "x"

    def test_case_decides_variable_vs_constant(self):
        p = parse_protocol("protocol x\nvars N:Nonce\nrole A:\n send seq(N, n, 1)\n")
        items = p.node_terms()[0].items
        assert items[0] == Var("N", Sort.NONCE)
        assert items[1] == Const("n", Sort.DATA)
        assert items[2] == Const("1", Sort.DATA)

    def test_agent_sort_inferred_in_key_positions(self):
        p = parse_protocol("protocol x\nrole A:\n send seq(sh(a, b), pk(c), a)\n")
        items = p.node_terms()[0].items
        consts = {c.name: c.sort for it in items for c in _atoms(it)}
        assert consts == {"a": Sort.AGENT, "b": Sort.AGENT, "c": Sort.AGENT}

    def test_sort_annotation(self):
        p = parse_protocol("protocol x\nrole A:\n send seq(t:Tag, k:Key, d)\n")
        sorts = [it.sort for it in p.node_terms()[0].items]
        assert sorts == [Sort.TAG, Sort.KEY, Sort.DATA]

    def test_zero_keyword(self):
        p = parse_protocol("protocol x\nrole A:\n send xor(a, zero, zero)\n")
        assert to_text(p.node_terms()[0]) == "const(a:Data)"


class TestErrors:
    def test_empty_xor_is_syntax_error(self):
        with pytest.raises(ProtocolSyntaxError):
            parse_protocol("protocol x\nrole A:\n send xor()\n")

    def test_single_argument_xor_rejected(self):
        with pytest.raises(ProtocolSyntaxError):
            parse_protocol("protocol x\nrole A:\n send xor(a)\n")

    def test_undeclared_variable_with_position(self):
        with pytest.raises(UndeclaredIdentifier) as exc:
            parse_protocol("protocol x\nrole A:\n send seq(a, NA)\n")
        assert exc.value.line == 3 and exc.value.col > 0

    def test_duplicate_role(self):
        with pytest.raises(DuplicateRole):
            parse_protocol("protocol x\nrole A:\n send a\nrole A:\n send b\n")

    def test_conflicting_annotations(self):
        with pytest.raises(SortError):
            parse_protocol("protocol x\nrole A:\n send seq(k:Key, k:Tag)\n")

    def test_agent_position_conflicts_with_annotation(self):
        with pytest.raises(SortError):
            parse_protocol("protocol x\nrole A:\n send pk(a:Key)\n")

    def test_non_agent_variable_in_key_position(self):
        with pytest.raises(SortError):
            parse_protocol("protocol x\nvars N:Nonce\nrole A:\n send pk(N)\n")

    def test_secret_not_fresh_rejected(self):
        with pytest.raises(ProtocolSyntaxError):
            parse_protocol(
                "protocol x\nvars N:Nonce\nsecret N\nrole A:\n send N\n"
            )

    def test_reserved_prefix_unwritable(self):
        # '#' starts a comment, so reserved #v / #c names cannot be expressed.
        with pytest.raises(ProtocolSyntaxError):
            parse_protocol("protocol x\nrole A:\n send #v0\n")

    def test_variable_sort_annotation_inline_rejected(self):
        with pytest.raises(ProtocolSyntaxError):
            parse_protocol("protocol x\nvars N:Nonce\nrole A:\n send N:Nonce\n")

    def test_unknown_sort(self):
        with pytest.raises(ProtocolSyntaxError):
            parse_protocol("protocol x\nvars N:Widget\nrole A:\n send N\n")

    def test_missing_role(self):
        with pytest.raises(ProtocolSyntaxError):
            parse_protocol("protocol x\n")

    def test_trailing_garbage(self):
        with pytest.raises(ProtocolSyntaxError):
            parse_protocol("protocol x\nrole A:\n send a\nstray\n")

    def test_wrong_arity(self):
        with pytest.raises(ProtocolSyntaxError):
            parse_protocol("protocol x\nrole A:\n send pk(a, b)\n")
        with pytest.raises(ProtocolSyntaxError):
            parse_protocol("protocol x\nrole A:\n send seq(a)\n")

    @given(st.binary(max_size=300))
    @settings(max_examples=200, deadline=None)
    def test_parser_never_panics(self, blob):
        try:
            text = blob.decode("utf-8")
        except UnicodeDecodeError:
            return
        try:
            parse_protocol(text)
        except (ProtocolSyntaxError, SortError):
            pass


class TestRoundTrip:
    def test_fixture_round_trips(self):
        for f in sorted(FIXTURES.glob("*.proto")):
            p = parse_protocol_file(f)
            assert parse_protocol(render_protocol(p)) == p, f.name

    def test_render_is_stable(self):
        p = parse_protocol_file(FIXTURES / "nslx.proto")
        once = render_protocol(p)
        assert render_protocol(parse_protocol(once)) == once


def _atoms(t):
    from xorsleuth.terms import subterms

    return [s for s in subterms(t) if isinstance(s, Const)]
