"""Scripted reproduction runs checked against golden expectations.

A golden record names a fixed CLI command sequence (seeds pinned) and the
JSON fields its final command must produce, each with an absolute tolerance.
``run_repro`` executes the sequence in a scratch directory and reports every
deviation; ``bless`` is the only way golden values are ever rewritten, so a
drifting build shows up as a failing diff instead of silently updating the
reference.

Two command kinds are supported, both plain argv lists:

    ["ptanet", ...]   the package CLI, run in this process
    ["pytest", ...]   a pytest selection, run as a subprocess (requires a
                      source checkout with the tests/ directory)

Interval-style bounds are expressed through tolerances: an expectation of
0.5 with tolerance 0.45 accepts anything in [0.05, 0.95].
"""

import argparse
import io
import json
import os
import subprocess
import sys
import tempfile
import time
from contextlib import redirect_stderr, redirect_stdout
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple, Union

Scalar = Union[int, float, str, bool, None]

GOLDEN_DIR = os.path.join(os.path.dirname(os.path.abspath(__file__)), "goldens")


@dataclass(frozen=True)
class Expectation:
    value: Scalar
    tol: float = 0.0


@dataclass(frozen=True)
class GoldenRecord:
    script: str
    description: str
    seeds: Tuple[int, ...]
    checks: Tuple[str, ...]
    commands: Tuple[Tuple[str, ...], ...]
    expect: Dict[str, Expectation]

    @staticmethod
    def from_json(path: str) -> "GoldenRecord":
        """Parse and validate one golden file; any schema defect raises ValueError."""
        name = os.path.basename(path)
        try:
            with open(path, "r", encoding="utf-8") as f:
                doc = json.load(f)
        except (OSError, json.JSONDecodeError) as e:
            raise ValueError(f"golden record {name}: unreadable ({e})") from e
        if not isinstance(doc, dict):
            raise ValueError(f"golden record {name}: top level must be an object")
        for key in ("script", "description", "seeds", "checks", "commands", "expect"):
            if key not in doc:
                raise ValueError(f"golden record {name}: missing key {key!r}")
        if not isinstance(doc["script"], str) or not doc["script"]:
            raise ValueError(f"golden record {name}: 'script' must be a non-empty string")
        if not isinstance(doc["seeds"], list) or not all(
            isinstance(s, int) for s in doc["seeds"]
        ):
            raise ValueError(f"golden record {name}: 'seeds' must be a list of ints")
        if not isinstance(doc["checks"], list) or not all(
            isinstance(c, str) for c in doc["checks"]
        ):
            raise ValueError(f"golden record {name}: 'checks' must be a list of strings")
        commands = doc["commands"]
        if not isinstance(commands, list) or not commands:
            raise ValueError(f"golden record {name}: 'commands' must be a non-empty list")
        for cmd in commands:
            if (
                not isinstance(cmd, list)
                or not cmd
                or not all(isinstance(a, str) for a in cmd)
            ):
                raise ValueError(
                    f"golden record {name}: each command must be a non-empty list of strings"
                )
            if cmd[0] not in ("ptanet", "pytest"):
                raise ValueError(
                    f"golden record {name}: unknown command kind {cmd[0]!r} "
                    "(expected 'ptanet' or 'pytest')"
                )
        expect_doc = doc["expect"]
        if not isinstance(expect_doc, dict):
            raise ValueError(f"golden record {name}: 'expect' must be an object")
        expect: Dict[str, Expectation] = {}
        for key, entry in expect_doc.items():
            if not isinstance(entry, dict) or "value" not in entry:
                raise ValueError(
                    f"golden record {name}: expect entry {key!r} needs a 'value'"
                )
            value = entry["value"]
            if not isinstance(value, (int, float, str, bool)) and value is not None:
                raise ValueError(
                    f"golden record {name}: expect entry {key!r} value must be scalar"
                )
            tol = entry.get("tol", 0.0)
            if not isinstance(tol, (int, float)) or tol < 0:
                raise ValueError(
                    f"golden record {name}: expect entry {key!r} tol must be >= 0"
                )
            expect[key] = Expectation(value=value, tol=float(tol))
        if expect and commands[-1][0] != "ptanet":
            raise ValueError(
                f"golden record {name}: expectations need a final 'ptanet' command"
            )
        return GoldenRecord(
            script=doc["script"],
            description=str(doc["description"]),
            seeds=tuple(doc["seeds"]),
            checks=tuple(doc["checks"]),
            commands=tuple(tuple(c) for c in commands),
            expect=expect,
        )


@dataclass
class ReproResult:
    script: str
    passed: bool
    diffs: List[str] = field(default_factory=list)
    elapsed_sec: float = 0.0


def _golden_path(script: str, golden_dir: Optional[str]) -> str:
    return os.path.join(golden_dir or GOLDEN_DIR, f"{script}.json")


def load_golden(script: str, golden_dir: Optional[str] = None) -> GoldenRecord:
    path = _golden_path(script, golden_dir)
    if not os.path.isfile(path):
        known = ", ".join(list_scripts(golden_dir)) or "none"
        raise ValueError(f"no golden record {script!r} (known: {known})")
    return GoldenRecord.from_json(path)


def list_scripts(golden_dir: Optional[str] = None) -> List[str]:
    d = golden_dir or GOLDEN_DIR
    if not os.path.isdir(d):
        return []
    return sorted(
        os.path.splitext(f)[0] for f in os.listdir(d) if f.endswith(".json")
    )


def resolve_path(doc, dotted: str):
    """Walk a dotted path through nested dicts and lists; KeyError if absent."""
    node = doc
    for part in dotted.split("."):
        if isinstance(node, dict):
            if part not in node:
                raise KeyError(dotted)
            node = node[part]
        elif isinstance(node, list):
            try:
                idx = int(part)
            except ValueError:
                raise KeyError(dotted) from None
            if not -len(node) <= idx < len(node):
                raise KeyError(dotted)
            node = node[idx]
        else:
            raise KeyError(dotted)
    return node


def _compare(path: str, got, exp: Expectation) -> Optional[str]:
    want = exp.value
    if isinstance(want, bool) or want is None or isinstance(want, str):
        if got != want:
            return f"{path}: got {got!r}, want {want!r}"
        return None
    if not isinstance(got, (int, float)) or isinstance(got, bool):
        return f"{path}: got {got!r}, want a number near {want}"
    if abs(float(got) - float(want)) > exp.tol + 1e-12:
        return f"{path}: got {got}, want {want} +/- {exp.tol}"
    return None


def _run_commands(record: GoldenRecord, workdir: str) -> Tuple[Optional[dict], List[str]]:
    """Execute the command sequence; returns (last ptanet stdout JSON, diffs)."""
    from . import cli

    last_json: Optional[dict] = None
    prev_cwd = os.getcwd()
    for i, cmd in enumerate(record.commands):
        label = f"command {i + 1} ({' '.join(cmd)})"
        if cmd[0] == "ptanet":
            out, err = io.StringIO(), io.StringIO()
            try:
                os.chdir(workdir)
                with redirect_stdout(out), redirect_stderr(err):
                    code = cli.main(list(cmd[1:]))
            finally:
                os.chdir(prev_cwd)
            if code != 0:
                tail = err.getvalue().strip().splitlines()[-3:]
                return None, [f"{label} exited {code}: " + " | ".join(tail)]
            text = out.getvalue().strip()
            if text:
                try:
                    last_json = json.loads(text)
                except json.JSONDecodeError as e:
                    return None, [f"{label}: stdout is not JSON ({e})"]
        else:
            proc = subprocess.run(
                [sys.executable, "-m", "pytest", *cmd[1:]],
                capture_output=True,
                text=True,
            )
            if proc.returncode != 0:
                tail = (proc.stdout + proc.stderr).strip().splitlines()[-8:]
                return None, [f"{label} exited {proc.returncode}:"] + [
                    "  " + line for line in tail
                ]
    return last_json, []


def run_repro(script: str, golden_dir: Optional[str] = None) -> ReproResult:
    """Run one golden script end to end and diff the result against the record."""
    record = load_golden(script, golden_dir)
    start = time.perf_counter()
    with tempfile.TemporaryDirectory(prefix=f"repro-{script}-") as workdir:
        doc, diffs = _run_commands(record, workdir)
    if not diffs and record.expect:
        if doc is None:
            diffs.append("no JSON output to compare against expectations")
        else:
            for path in sorted(record.expect):
                try:
                    got = resolve_path(doc, path)
                except KeyError:
                    diffs.append(f"{path}: missing from output")
                    continue
                problem = _compare(path, got, record.expect[path])
                if problem:
                    diffs.append(problem)
    return ReproResult(
        script=script,
        passed=not diffs,
        diffs=diffs,
        elapsed_sec=time.perf_counter() - start,
    )


def bless(script: str, golden_dir: Optional[str] = None) -> GoldenRecord:
    """Re-run a script and rewrite the golden values (tolerances are kept).

    This is deliberately the only write path for golden numbers; the normal
    runner only ever compares.
    """
    record = load_golden(script, golden_dir)
    path = _golden_path(script, golden_dir)
    if not record.expect:
        return record
    with tempfile.TemporaryDirectory(prefix=f"bless-{script}-") as workdir:
        doc, diffs = _run_commands(record, workdir)
    if diffs:
        raise RuntimeError(f"cannot bless {script}: " + "; ".join(diffs))
    if doc is None:
        raise RuntimeError(f"cannot bless {script}: no JSON output")
    with open(path, "r", encoding="utf-8") as f:
        raw = json.load(f)
    for key in record.expect:
        raw["expect"][key]["value"] = resolve_path(doc, key)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(raw, f, indent=2, sort_keys=True)
        f.write("\n")
    return GoldenRecord.from_json(path)


def main(argv: Optional[List[str]] = None) -> int:
    parser = argparse.ArgumentParser(
        prog="ptanet-repro",
        description="Run scripted reproduction checks against golden records.",
    )
    parser.add_argument("scripts", nargs="*", help="script names (default: all)")
    parser.add_argument("--list", action="store_true", help="list known scripts")
    parser.add_argument("--bless", action="store_true",
                        help="rewrite golden values from a fresh run")
    parser.add_argument("--golden-dir", default=None)
    args = parser.parse_args(argv)

    if args.list:
        for name in list_scripts(args.golden_dir):
            rec = load_golden(name, args.golden_dir)
            print(f"{name}: {rec.description} [checks: {', '.join(rec.checks)}]")
        return 0

    names = args.scripts or list_scripts(args.golden_dir)
    if not names:
        print("no golden records found", file=sys.stderr)
        return 1

    failed = False
    for name in names:
        if args.bless:
            try:
                bless(name, args.golden_dir)
                print(f"BLESSED {name}")
            except (ValueError, RuntimeError) as e:
                print(f"FAIL {name}: {e}")
                failed = True
            continue
        try:
            result = run_repro(name, args.golden_dir)
        except ValueError as e:
            print(f"FAIL {name}: {e}")
            failed = True
            continue
        if result.passed:
            print(f"PASS {name} ({result.elapsed_sec:.1f}s)")
        else:
            failed = True
            print(f"FAIL {name} ({result.elapsed_sec:.1f}s)")
            for diff in result.diffs:
                print(f"  {diff}")
    return 1 if failed else 0


if __name__ == "__main__":
    sys.exit(main())
