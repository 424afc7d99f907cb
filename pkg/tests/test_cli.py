"""Command-line behavior: exit codes, reports, golden files, round-trips."""

import json
import subprocess
import sys
from pathlib import Path

import pytest

from xorsleuth.cli import run_command
from xorsleuth.dsl import parse_protocol, parse_protocol_file, render_protocol
from xorsleuth.protocol import tag_protocol

FIXTURES = Path(__file__).resolve().parent.parent / "src" / "xorsleuth" / "fixtures"
GOLDEN = Path(__file__).resolve().parent / "golden"


def fx(name: str) -> str:
    return str(FIXTURES / name)


def strip_elapsed(doc):
    if isinstance(doc, dict):
        return {k: strip_elapsed(v) for k, v in doc.items() if k != "elapsed_ms"}
    if isinstance(doc, list):
        return [strip_elapsed(v) for v in doc]
    return doc


class TestParseCommand:
    def test_parse_ok(self, capsys):
        assert run_command(["parse", fx("nslx.proto")]) == 0
        out = capsys.readouterr().out
        assert out.startswith("protocol nslx")

    def test_parse_output_reparses_identically(self, capsys, tmp_path):
        assert run_command(["parse", fx("nslx.proto")]) == 0
        out = capsys.readouterr().out
        assert parse_protocol(out) == parse_protocol_file(fx("nslx.proto"))

    def test_missing_file_is_usage_error(self, capsys):
        assert run_command(["parse", "/nonexistent/x.proto"]) == 2
        assert "error:" in capsys.readouterr().err

    def test_syntax_error_is_usage_error(self, tmp_path, capsys):
        bad = tmp_path / "bad.proto"
        bad.write_text("protocol p\nrole A:\n  send xor()\n")
        assert run_command(["parse", str(bad)]) == 2
        assert "error:" in capsys.readouterr().err


class TestCheckAssumptions:
    def test_p1_violated(self):
        assert run_command(["check-assumptions", fx("p1.proto")]) == 1

    def test_nslx_passes(self):
        assert run_command(["check-assumptions", fx("nslx.proto")]) == 0

    def test_keyleak_violated(self):
        assert run_command(["check-assumptions", fx("keyleak.proto")]) == 1

    @pytest.mark.parametrize(
        "fixture,golden",
        [
            ("p1.proto", "assumptions_p1.json"),
            ("nslx.proto", "assumptions_nslx.json"),
            ("keyleak.proto", "assumptions_keyleak.json"),
        ],
    )
    def test_golden_report(self, tmp_path, fixture, golden):
        out = tmp_path / "report.json"
        run_command(["check-assumptions", fx(fixture), "--json", str(out)])
        assert json.loads(out.read_text()) == json.loads((GOLDEN / golden).read_text())


class TestCheckMunut:
    def test_untagged_self_pair_violated(self):
        assert run_command(["check-munut", fx("nslx.proto"), fx("nslx.proto")]) == 1

    def test_tagged_pair_satisfied(self):
        assert run_command(["check-munut", fx("nslx_nslx.proto"), fx("nslx_other.proto")]) == 0

    def test_untagged_report_has_unifier_witness(self, tmp_path):
        out = tmp_path / "report.json"
        run_command(["check-munut", fx("nslx.proto"), fx("nslx.proto"), "--json", str(out)])
        doc = json.loads(out.read_text())
        assert doc["results"]["status"] == "violated"
        assert any(w["unifier"] for w in doc["results"]["witnesses"])

    @pytest.mark.parametrize(
        "files,golden",
        [
            (("nslx.proto", "nslx.proto"), "munut_untagged.json"),
            (("nslx_nslx.proto", "nslx_other.proto"), "munut_tagged.json"),
        ],
    )
    def test_golden_report(self, tmp_path, files, golden):
        out = tmp_path / "report.json"
        run_command(["check-munut", fx(files[0]), fx(files[1]), "--json", str(out)])
        assert json.loads(out.read_text()) == json.loads((GOLDEN / golden).read_text())


class TestTagCommand:
    def test_tag_to_stdout_matches_library(self, capsys):
        assert run_command(["tag", fx("nslx.proto"), "--label", "t1"]) == 0
        out = capsys.readouterr().out
        expected = render_protocol(tag_protocol(parse_protocol_file(fx("nslx.proto")), "t1"))
        assert out == expected

    def test_tag_to_file_parses(self, tmp_path):
        out = tmp_path / "tagged.proto"
        assert run_command(["tag", fx("p2.proto"), "--label", "t7", "-o", str(out)]) == 0
        p = parse_protocol_file(str(out))
        assert p.name == "p2_t7"

    def test_tag_collision_is_input_error(self, tmp_path, capsys):
        out = tmp_path / "tagged.proto"
        run_command(["tag", fx("p2.proto"), "--label", "t7", "-o", str(out)])
        assert run_command(["tag", str(out), "--label", "t7"]) == 2
        assert "error:" in capsys.readouterr().err


class TestAnalyzeCommand:
    def test_combined_attack_exits_1(self):
        code = run_command(
            ["analyze", fx("p1.proto"), "--combined", fx("p2.proto"), "--sessions", "1", "--secret", "NA"]
        )
        assert code == 1

    def test_isolated_secure_exits_0(self):
        assert run_command(["analyze", fx("p2.proto")]) == 0

    def test_attack_trace_contents(self, tmp_path, capsys):
        out = tmp_path / "attack.json"
        run_command(
            [
                "analyze", fx("p1.proto"), "--combined", fx("p2.proto"),
                "--sessions", "1", "--secret", "NA", "--json", str(out), "--oracle-verify",
            ]
        )
        doc = json.loads(out.read_text())
        attack = doc["results"]["attack"]
        # the long-term key is in the final knowledge and the nonce is the goal
        final = attack["constraints"][-1]
        assert "sh(const(a:Agent),const(s:Agent))" in final["term_set"]
        assert attack["secret"] == "const(na1:Nonce)"
        assert doc["results"]["oracle_verified"] is True
        assert doc["exit_code"] == 1

    def test_zero_sessions_usage_error(self):
        assert run_command(["analyze", fx("p2.proto"), "--sessions", "0"]) == 2

    def test_unknown_secret_usage_error(self):
        assert run_command(["analyze", fx("p2.proto"), "--secret", "NOPE"]) == 2

    def test_no_secrets_usage_error(self):
        assert run_command(["analyze", fx("p1.proto")]) == 2

    def test_tiny_budget_inconclusive_exits_3(self):
        code = run_command(
            ["analyze", fx("nslx.proto"), "--secret", "NB", "--branch-budget", "1", "--node-budget", "3"]
        )
        assert code == 3

    def test_reports_byte_identical_modulo_elapsed(self, tmp_path):
        docs = []
        for i in range(2):
            out = tmp_path / f"r{i}.json"
            run_command(
                ["analyze", fx("p1.proto"), "--combined", fx("p2.proto"), "--secret", "NA", "--json", str(out)]
            )
            docs.append(json.dumps(strip_elapsed(json.loads(out.read_text())), sort_keys=False))
        assert docs[0] == docs[1]


class TestOracleVerifyCommand:
    def test_round_trip_confirms(self, tmp_path):
        out = tmp_path / "attack.json"
        run_command(
            ["analyze", fx("p1.proto"), "--combined", fx("p2.proto"), "--secret", "NA", "--json", str(out)]
        )
        assert run_command(["oracle-verify", str(out)]) == 0

    def test_tampered_trace_rejected(self, tmp_path):
        out = tmp_path / "attack.json"
        run_command(
            ["analyze", fx("p1.proto"), "--combined", fx("p2.proto"), "--secret", "NA", "--json", str(out)]
        )
        doc = json.loads(out.read_text())
        # claim a different, underivable secret
        doc["results"]["attack"]["constraints"][-1]["target"] = "const(never:Nonce)"
        tampered = tmp_path / "tampered.json"
        tampered.write_text(json.dumps(doc))
        assert run_command(["oracle-verify", str(tampered)]) == 1

    def test_secure_report_is_input_error(self, tmp_path, capsys):
        out = tmp_path / "secure.json"
        run_command(["analyze", fx("p2.proto"), "--json", str(out)])
        assert run_command(["oracle-verify", str(out)]) == 2
        assert "no attack trace" in capsys.readouterr().err


class TestInstalledScript:
    def test_console_entry_point(self):
        proc = subprocess.run(
            [sys.executable, "-m", "xorsleuth.cli", "parse", fx("p1.proto")],
            capture_output=True,
            text=True,
        )
        assert proc.returncode == 0
        assert proc.stdout.startswith("protocol p1")
