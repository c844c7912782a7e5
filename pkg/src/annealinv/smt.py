"""SMT-LIB 2 encodings of the three CHC clauses and a z3-style subprocess
transport."""

from __future__ import annotations

import os
import queue
import re
import shutil
import subprocess
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from .ir import smt_dnf
from .lia import ChcSystem, DnfFormula, LinearMap

SOLVER_ENV = "ANNEALINV_SOLVER"
CLAUSES = ("fact", "inductive", "query")


class SolverError(RuntimeError):
    pass


class SolverTimeout(SolverError):
    pass


class SolverProtocolError(SolverError):
    pass


def state_names(n: int, primed: bool = False) -> list[str]:
    return [f"{'sp' if primed else 's'}{i}" for i in range(n)]


def _int(v: int) -> str:
    return str(v) if v >= 0 else f"(- {-v})"


def _affine(row: Sequence[int], const: int, names: Sequence[str]) -> str:
    terms = [n if a == 1 else f"(* {_int(a)} {n})" for a, n in zip(row, names) if a != 0]
    if const or not terms:
        terms.append(_int(const))
    return terms[0] if len(terms) == 1 else "(+ " + " ".join(terms) + ")"


def _map_term(m: LinearMap, src: Sequence[str], dst: Sequence[str]) -> str:
    eqs = [f"(= {d} {_affine(row, o, src)})" for d, row, o in zip(dst, m.matrix, m.offset)]
    return "(and " + " ".join(eqs) + ")"


def _trans_term(system: ChcSystem, src, dst) -> str:
    blocks = []
    for block in system.trans.blocks:
        maps = " ".join(_map_term(m, src, dst) for m in block.maps)
        blocks.append(f"(and {smt_dnf(block.guard, src, True)} (or {maps}))")
    return "(or " + " ".join(blocks) + ")" if blocks else "false"


def _box(system: ChcSystem, names) -> list[str]:
    lo, hi = system.space.lo, system.space.hi
    return [f"(assert (and (<= {_int(lo)} {v}) (<= {v} {_int(hi)})))" for v in names]


def encode_clause(kind: str, inv: DnfFormula, system: ChcSystem) -> str:
    """Refutation script for one clause: ``sat`` means the clause fails."""
    if kind not in CLAUSES:
        raise ValueError(f"unknown clause kind {kind!r}")
    n = system.dim
    s = state_names(n)
    lines = ["(set-logic QF_LIA)"]
    lines += [f"(declare-const {v} Int)" for v in s]
    lines += _box(system, s)
    if kind == "fact":
        lines.append(f"(assert {smt_dnf(system.pre, s, True)})")
        lines.append(f"(assert (not {smt_dnf(inv, s, True)}))")
    elif kind == "query":
        lines.append(f"(assert {smt_dnf(inv, s, True)})")
        lines.append(f"(assert (not {smt_dnf(system.post, s, True)}))")
    else:
        sp = state_names(n, primed=True)
        lines += [f"(declare-const {v} Int)" for v in sp]
        lines += _box(system, sp)
        lines.append(f"(assert {smt_dnf(inv, s, True)})")
        lines.append(f"(assert {smt_dnf(system.guard, s, True)})")
        lines.append(f"(assert {_trans_term(system, s, sp)})")
        lines.append(f"(assert (not {smt_dnf(inv, sp, True)}))")
    lines.append("(check-sat)")
    return "\n".join(lines) + "\n"


def dispersion_constraint(tag: str, point: Sequence[int], names: Sequence[str], d0: int) -> str:
    """Declarations and assertion forcing L1 distance >= d0 from ``point``."""
    out = []
    absvals = []
    for i, (v, p) in enumerate(zip(names, point)):
        a = f"a_{tag}_{i}"
        u = f"(- {v} {_int(p)})"
        out.append(f"(declare-const {a} Int)")
        out.append(f"(assert (and (>= {a} {u}) (>= {a} (- {u})) (or (= {a} {u}) (= {a} (- {u})))))")
        absvals.append(a)
    total = absvals[0] if len(absvals) == 1 else "(+ " + " ".join(absvals) + ")"
    out.append(f"(assert (>= {total} {d0}))")
    return "\n".join(out) + "\n"


# ---------------------------------------------------------------------------
# transport

_SEXP_TOKEN = re.compile(r"\(|\)|[^\s()]+")


def parse_sexp(text: str):
    tokens = _SEXP_TOKEN.findall(text)
    pos = 0

    def walk():
        nonlocal pos
        tok = tokens[pos]
        pos += 1
        if tok == "(":
            items = []
            while tokens[pos] != ")":
                items.append(walk())
            pos += 1
            return items
        return tok

    out = walk()
    if pos != len(tokens):
        raise SolverProtocolError(f"trailing tokens in solver response: {text!r}")
    return out


def _value(node) -> int:
    if isinstance(node, str):
        return int(node)
    if len(node) == 2 and node[0] == "-":
        return -_value(node[1])
    raise SolverProtocolError(f"unexpected model value {node!r}")


def parse_model(text: str) -> dict[str, int]:
    """Parse a ``(get-value ...)`` response into a name -> int map."""
    try:
        tree = parse_sexp(text)
        return {name: _value(val) for name, val in tree}
    except (ValueError, IndexError, TypeError) as e:
        raise SolverProtocolError(f"cannot parse model {text!r}") from e


def find_solver(path: str | None = None) -> str:
    cand = path or os.environ.get(SOLVER_ENV) or shutil.which("z3")
    if not cand:
        raise SolverError(f"no SMT solver found; pass a path or set {SOLVER_ENV}")
    return cand


@dataclass
class Solver:
    """Launches one interactive solver process per session."""

    path: str | None = None
    args: tuple = ("-in", "-smt2")
    timeout_ms: int = 60_000
    audit_dir: str | None = None
    _count: int = field(default=0, repr=False)

    def __post_init__(self):
        self.path = find_solver(self.path)

    def session(self, label: str) -> SolverSession:
        self._count += 1
        audit = None
        if self.audit_dir:
            Path(self.audit_dir).mkdir(parents=True, exist_ok=True)
            audit = Path(self.audit_dir) / f"{self._count:05d}_{label}.smt2"
        return SolverSession([self.path, *self.args], self.timeout_ms, audit)


class SolverSession:
    def __init__(self, cmd, timeout_ms: int, audit: Path | None):
        self.timeout = timeout_ms / 1000 + 5.0
        self.audit = open(audit, "w") if audit else None
        try:
            self.proc = subprocess.Popen(cmd, stdin=subprocess.PIPE, stdout=subprocess.PIPE,
                                         stderr=subprocess.STDOUT, text=True, bufsize=1)
        except OSError as e:
            raise SolverError(f"cannot start solver {cmd[0]}: {e}") from e
        self.lines: queue.Queue = queue.Queue()
        threading.Thread(target=self._pump, daemon=True).start()
        self.send(f"(set-option :timeout {timeout_ms})\n(set-option :produce-models true)\n")

    def _pump(self):
        for line in self.proc.stdout:
            self.lines.put(line)
        self.lines.put(None)

    def send(self, text: str):
        if self.audit:
            self.audit.write(text)
        try:
            self.proc.stdin.write(text)
            self.proc.stdin.flush()
        except BrokenPipeError as e:
            raise SolverProtocolError("solver closed its input") from e

    def _read_response(self) -> str:
        buf, depth = [], 0
        while True:
            try:
                line = self.lines.get(timeout=self.timeout)
            except queue.Empty:
                self.close()
                raise SolverTimeout("solver did not answer in time") from None
            if line is None:
                raise SolverProtocolError("solver exited: " + "".join(buf))
            if not line.strip():
                continue
            buf.append(line)
            depth += line.count("(") - line.count(")")
            if depth <= 0:
                text = "".join(buf).strip()
                if text.startswith("(error"):
                    raise SolverProtocolError(text)
                return text

    def check(self, script: str) -> str:
        """Send commands ending in one ``(check-sat)`` and return the verdict."""
        self.send(script)
        verdict = self._read_response()
        if verdict == "unknown":
            raise SolverTimeout("solver returned unknown (timeout or incompleteness)")
        if verdict not in ("sat", "unsat"):
            raise SolverProtocolError(f"unexpected solver answer {verdict!r}")
        return verdict

    def values(self, names: Sequence[str]) -> dict[str, int]:
        self.send(f"(get-value ({' '.join(names)}))\n")
        return parse_model(self._read_response())

    def close(self):
        if self.audit:
            self.audit.close()
            self.audit = None
        if self.proc.poll() is None:
            try:
                self.proc.stdin.write("(exit)\n")
                self.proc.stdin.flush()
            except (BrokenPipeError, ValueError):
                pass
            try:
                self.proc.wait(timeout=2)
            except subprocess.TimeoutExpired:
                self.proc.kill()
                self.proc.wait()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
