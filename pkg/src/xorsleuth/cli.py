"""Command-line frontend.

Subcommands wire the protocol parser, the static checkers, the secrecy
solver, and the ground-derivation oracle into reproducible reports.  Exit
codes: 0 = secure / check passed, 1 = attack found / check violated,
2 = usage or input error, 3 = inconclusive (a budget was exhausted).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from typing import Sequence

from .dsl import parse_protocol_file, render_protocol
from .oracle import verify_solution
from .protocol import Protocol, check_assumptions, check_munut, tag_protocol
from .solver import (
    AnalysisConfig,
    Constraint,
    ConstraintSequence,
    SolverBudget,
    check_secrecy,
)
from .terms import Substitution, XorsleuthError, from_text, to_text
from .unify import SearchBudget

EXIT_OK = 0
EXIT_VIOLATED = 1
EXIT_USAGE = 2
EXIT_INCONCLUSIVE = 3


def _sha256(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def _envelope(command: str, paths: Sequence[str], config: dict, results, exit_code: int) -> dict:
    return {
        "command": command,
        "inputs": {os.path.basename(p): _sha256(p) for p in paths},
        "config": config,
        "results": results,
        "exit_code": exit_code,
    }


def _emit(envelope: dict, json_path: str | None) -> None:
    if json_path:
        with open(json_path, "w", encoding="utf-8") as f:
            json.dump(envelope, f, indent=2)
            f.write("\n")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="xorsleuth",
        description="Symbolic secrecy analysis of protocols using XOR",
    )
    sub = ap.add_subparsers(dest="command", required=True)

    p_parse = sub.add_parser("parse", help="parse protocol files and print their canonical form")
    p_parse.add_argument("files", nargs="+")
    p_parse.add_argument("--json", metavar="PATH")

    p_ass = sub.add_parser(
        "check-assumptions", help="check the long-term-key transmission and key-derivability assumptions"
    )
    p_ass.add_argument("files", nargs="+")
    p_ass.add_argument("--json", metavar="PATH")

    p_mu = sub.add_parser("check-munut", help="check non-unifiability tagging between two protocols")
    p_mu.add_argument("file1")
    p_mu.add_argument("file2")
    p_mu.add_argument("--json", metavar="PATH")

    p_tag = sub.add_parser("tag", help="rewrite a protocol with a tagging label")
    p_tag.add_argument("file")
    p_tag.add_argument("--label", required=True)
    p_tag.add_argument("-o", "--output", metavar="PATH")
    p_tag.add_argument("--json", metavar="PATH")

    p_an = sub.add_parser("analyze", help="bounded-session secrecy analysis")
    p_an.add_argument("file")
    p_an.add_argument("--combined", metavar="FILE", action="append", default=[])
    p_an.add_argument("--sessions", type=int, default=1)
    p_an.add_argument("--secret", metavar="NAME", action="append", default=[])
    p_an.add_argument("--branch-budget", type=int, default=64, help="max rule applications per branch")
    p_an.add_argument("--node-budget", type=int, default=200_000, help="max search nodes per sequence")
    p_an.add_argument("--json", metavar="PATH")
    p_an.add_argument("--oracle-verify", action="store_true", help="re-check any attack with the ground oracle")

    p_ov = sub.add_parser("oracle-verify", help="re-check a saved attack trace with the ground oracle")
    p_ov.add_argument("trace", metavar="TRACE.json")
    p_ov.add_argument("--json", metavar="PATH")

    return ap


def _cmd_parse(args) -> int:
    results = []
    blocks = []
    for path in args.files:
        p = parse_protocol_file(path)
        blocks.append(render_protocol(p))
        results.append(
            {
                "protocol": p.name,
                "roles": [name for name, _ in p.roles],
                "fresh": sorted(v.name for v in p.fresh_vars),
                "secret": sorted(v.name for v in p.secret_vars),
            }
        )
    print("\n".join(blocks), end="")
    env = _envelope("parse", args.files, {}, results, EXIT_OK)
    _emit(env, args.json)
    return EXIT_OK


def _cmd_check_assumptions(args) -> int:
    results = []
    worst = EXIT_OK
    for path in args.files:
        p = parse_protocol_file(path)
        report = check_assumptions(p)
        results.append(report.to_json_dict())
        print(f"{p.name}: assumptions {'passed' if report.ok() else 'violated'}")
        for v in report.violations:
            print(f"  assumption {v.assumption}: {to_text(v.witness)} — {v.detail}")
        if not report.ok():
            worst = EXIT_VIOLATED
    env = _envelope("check-assumptions", args.files, {}, results, worst)
    _emit(env, args.json)
    return worst


def _cmd_check_munut(args) -> int:
    p1 = parse_protocol_file(args.file1)
    p2 = parse_protocol_file(args.file2)
    report = check_munut(p1, p2)
    code = EXIT_OK if report.ok() else EXIT_VIOLATED
    print(f"{p1.name} / {p2.name}: munut {'satisfied' if report.ok() else 'violated'}")
    for v in report.violations:
        uni = ", ".join(f"{to_text(w)} := {to_text(t)}" for w, t in v.unifier.items())
        print(f"  condition {v.condition}: {to_text(v.left)} ~ {to_text(v.right)}  [{uni}]")
    env = _envelope(
        "check-munut", [args.file1, args.file2], {}, report.to_json_dict(), code
    )
    _emit(env, args.json)
    return code


def _cmd_tag(args) -> int:
    p = parse_protocol_file(args.file)
    tagged = tag_protocol(p, args.label)
    text = render_protocol(tagged)
    if args.output:
        with open(args.output, "w", encoding="utf-8") as f:
            f.write(text)
    else:
        print(text, end="")
    env = _envelope(
        "tag",
        [args.file],
        {"label": args.label},
        {"protocol": tagged.name, "output": args.output or "-"},
        EXIT_OK,
    )
    _emit(env, args.json)
    return EXIT_OK


def _cmd_analyze(args) -> int:
    paths = [args.file, *args.combined]
    protocols = [parse_protocol_file(p) for p in paths]
    config = AnalysisConfig(
        sessions=args.sessions,
        secrets=tuple(args.secret),
        budget=SolverBudget(
            max_depth=args.branch_budget,
            max_nodes=args.node_budget,
            unify=SearchBudget(),
        ),
    )
    result = check_secrecy(protocols, config)
    results = result.to_json_dict()

    if result.verdict == "attack":
        code = EXIT_VIOLATED
        print(f"attack: {results['attack']['secret']} derivable "
              f"({'+'.join(results['attack']['protocols'])}, {args.sessions} session(s) per role)")
        print(f"  interleaving: {' '.join(results['attack']['interleaving'])}")
        for step in results["attack"]["rules"]:
            uni = ""
            if "unifier" in step and step["unifier"]:
                uni = "  " + ", ".join(f"{v} := {t}" for v, t in step["unifier"].items())
            print(f"  {step['rule']} @ {step['site']}{uni}")
        if results["attack"]["substitution"]:
            print("  substitution:")
            for v, t in results["attack"]["substitution"].items():
                print(f"    {v} := {t}")
    elif result.verdict == "secure":
        code = EXIT_OK
        print(f"secure up to {result.bound} session(s) per role "
              f"(secrets: {', '.join(result.secrets_checked)})")
    else:
        code = EXIT_INCONCLUSIVE
        print("inconclusive: search budget exhausted before a verdict")

    if args.oracle_verify and result.attack is not None:
        cs = ConstraintSequence(result.attack.constraints, result.attack.substitution)
        confirmed = verify_solution(cs, result.attack.substitution)
        results["oracle_verified"] = confirmed
        print(f"  oracle: {'confirmed' if confirmed else 'NOT confirmed'}")

    env = _envelope(
        "analyze",
        paths,
        {
            "sessions": args.sessions,
            "secrets": list(args.secret),
            "branch_budget": args.branch_budget,
            "node_budget": args.node_budget,
            "oracle_verify": bool(args.oracle_verify),
        },
        results,
        code,
    )
    _emit(env, args.json)
    return code


def _load_trace(path: str) -> dict:
    with open(path, encoding="utf-8") as f:
        doc = json.load(f)
    if "results" in doc and isinstance(doc["results"], dict):
        doc = doc["results"]
    if "attack" in doc and isinstance(doc["attack"], dict):
        doc = doc["attack"]
    if "constraints" not in doc:
        raise XorsleuthError(f"{path}: no attack trace found in file")
    return doc


def _cmd_oracle_verify(args) -> int:
    trace = _load_trace(args.trace)
    constraints = tuple(
        Constraint(from_text(c["target"]), tuple(from_text(t) for t in c["term_set"]))
        for c in trace["constraints"]
    )
    subst = Substitution(
        {from_text(v): from_text(t) for v, t in trace.get("substitution", {}).items()}
    )
    cs = ConstraintSequence(constraints, subst)
    confirmed = verify_solution(cs, subst)
    code = EXIT_OK if confirmed else EXIT_VIOLATED
    print("trace confirmed" if confirmed else "trace NOT confirmed")
    env = _envelope(
        "oracle-verify", [args.trace], {}, {"confirmed": confirmed}, code
    )
    _emit(env, args.json)
    return code


_HANDLERS = {
    "parse": _cmd_parse,
    "check-assumptions": _cmd_check_assumptions,
    "check-munut": _cmd_check_munut,
    "tag": _cmd_tag,
    "analyze": _cmd_analyze,
    "oracle-verify": _cmd_oracle_verify,
}


def run_command(argv: Sequence[str]) -> int:
    os.environ.get("XORSLEUTH_SEED")  # no randomized tie-breaking exists to seed
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        return _HANDLERS[args.command](args)
    except XorsleuthError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, json.JSONDecodeError, KeyError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE


def main() -> None:
    sys.exit(run_command(sys.argv[1:]))


if __name__ == "__main__":
    main()
