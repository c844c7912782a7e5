"""S-expression input format for single-loop CHC systems.

A document looks like::

    (chc
      (vars x y)
      (bound 64)
      (pre (and (= x 1) (= y 1)))
      (guard true)
      (trans (block true ((x (+ x y)) (y (+ x y)))))
      (post (>= y 1)))

Each ``block`` has a guard formula followed by one or more parenthesized
assignment sets; every set is one nondeterministic branch. Assignments are
simultaneous and variables not mentioned keep their value.
"""

from __future__ import annotations

import itertools
import logging
import math
import re
from dataclasses import dataclass
from typing import Union

import numpy as np

from .lia import (DEFAULT_NEGATION_CAP, ChcSystem, Cube, DnfFormula, LinearMap, LinearPredicate,
                  NegationTooLarge, StateSpace, TransitionBlock, TransitionRelation, _cube_key,
                  box_chunks, dnf_mask)

log = logging.getLogger(__name__)

DEFAULT_INT_BOUND = 1000
DEFAULT_OVERLAP_LIMIT = 20_000_000

COMPARATORS = ("<=", "<", ">", ">=", "=")


class ParseError(ValueError):
    def __init__(self, msg: str, line: int = 0, col: int = 0):
        self.line, self.col = line, col
        super().__init__(f"{line}:{col}: {msg}" if line else msg)


class GuardOverlap(ValueError):
    pass


# ---------------------------------------------------------------------------
# surface syntax trees

@dataclass(frozen=True)
class Num:
    value: int


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Add:
    args: tuple


@dataclass(frozen=True)
class Sub:
    args: tuple  # one argument is negation


@dataclass(frozen=True)
class Mul:
    factor: int
    var: str


Term = Union[Num, Var, Add, Sub, Mul]


@dataclass(frozen=True)
class BoolConst:
    value: bool


@dataclass(frozen=True)
class Atom:
    op: str
    lhs: Term
    rhs: Term


@dataclass(frozen=True)
class Not:
    args: tuple


@dataclass(frozen=True)
class And:
    args: tuple


@dataclass(frozen=True)
class Or:
    args: tuple


Formula = Union[BoolConst, Atom, Not, And, Or]


@dataclass(frozen=True)
class Block:
    guard: Formula
    branches: tuple  # tuple of tuples of (name, Term)


@dataclass(frozen=True)
class ChcDocument:
    variables: tuple
    int_bound: int
    pre: Formula
    guard: Formula
    trans: tuple
    post: Formula
    bound_given: bool = True


# ---------------------------------------------------------------------------
# reader

_TOKEN = re.compile(r"\s+|;[^\n]*|\(|\)|[^\s();]+")
_INT = re.compile(r"-?\d+$")
_IDENT = re.compile(r"[A-Za-z_][A-Za-z0-9_.'!]*$")
_RESERVED = {"chc", "vars", "bound", "pre", "guard", "trans", "post", "block", "true", "false",
             "and", "or", "not", "+", "-", "*"} | set(COMPARATORS)


@dataclass
class _Sexp:
    items: list
    line: int
    col: int


@dataclass
class _Tok:
    text: str
    line: int
    col: int


def _read(text: str):
    stack: list[_Sexp] = [_Sexp([], 1, 1)]
    line, line_start = 1, 0
    for m in _TOKEN.finditer(text):
        tok = m.group()
        col = m.start() - line_start + 1
        if tok[0].isspace() or tok[0] == ";":
            nl = tok.count("\n")
            if nl:
                line += nl
                line_start = m.start() + tok.rfind("\n") + 1
            continue
        if tok == "(":
            stack.append(_Sexp([], line, col))
        elif tok == ")":
            if len(stack) == 1:
                raise ParseError("unbalanced ')'", line, col)
            done = stack.pop()
            stack[-1].items.append(done)
        else:
            stack[-1].items.append(_Tok(tok, line, col))
    if len(stack) > 1:
        raise ParseError("unclosed '('", stack[-1].line, stack[-1].col)
    return stack[0].items


def _pos(node):
    return node.line, node.col


def _head(node) -> str | None:
    if isinstance(node, _Sexp) and node.items and isinstance(node.items[0], _Tok):
        return node.items[0].text
    return None


class _Parser:
    def __init__(self, variables):
        self.variables = set(variables)

    def ident(self, node) -> str:
        if not isinstance(node, _Tok) or not _IDENT.match(node.text) or node.text in _RESERVED:
            raise ParseError("expected identifier", *_pos(node))
        if node.text not in self.variables:
            raise ParseError(f"unknown variable '{node.text}'", *_pos(node))
        return node.text

    def term(self, node) -> Term:
        if isinstance(node, _Tok):
            if _INT.match(node.text):
                return Num(int(node.text))
            return Var(self.ident(node))
        op = _head(node)
        args = node.items[1:]
        if op == "+":
            if not args:
                raise ParseError("'+' needs at least one argument", *_pos(node))
            return Add(tuple(self.term(a) for a in args))
        if op == "-":
            if len(args) not in (1, 2):
                raise ParseError("'-' takes one or two arguments", *_pos(node))
            return Sub(tuple(self.term(a) for a in args))
        if op == "*":
            if len(args) != 2:
                raise ParseError("'*' takes an integer and a variable", *_pos(node))
            k, v = args
            if not (isinstance(k, _Tok) and _INT.match(k.text)):
                raise ParseError("non-linear term: '*' needs an integer literal first", *_pos(node))
            if not isinstance(v, _Tok) or _INT.match(v.text):
                raise ParseError("non-linear term: '*' needs a variable second", *_pos(node))
            return Mul(int(k.text), self.ident(v))
        raise ParseError(f"expected linear term, got '{op}'", *_pos(node))

    def formula(self, node) -> Formula:
        if isinstance(node, _Tok):
            if node.text in ("true", "false"):
                return BoolConst(node.text == "true")
            raise ParseError(f"expected formula, got '{node.text}'", *_pos(node))
        op = _head(node)
        args = node.items[1:]
        if op in ("and", "or", "not"):
            if not args:
                raise ParseError(f"'{op}' needs at least one argument", *_pos(node))
            if op == "not" and len(args) != 1:
                raise ParseError("'not' takes exactly one formula", *_pos(node))
            sub = tuple(self.formula(a) for a in args)
            return {"and": And, "or": Or, "not": Not}[op](sub)
        if op in COMPARATORS:
            if len(args) != 2:
                raise ParseError(f"'{op}' takes two terms", *_pos(node))
            return Atom(op, self.term(args[0]), self.term(args[1]))
        raise ParseError(f"expected formula, got '{op}'", *_pos(node))

    def assign_set(self, node) -> tuple:
        if not isinstance(node, _Sexp) or not node.items:
            raise ParseError("expected assignment list", *_pos(node))
        seen = set()
        out = []
        for a in node.items:
            if not isinstance(a, _Sexp) or len(a.items) != 2:
                raise ParseError("assignment must be (var term)", *_pos(a))
            name = self.ident(a.items[0])
            if name in seen:
                raise ParseError(f"variable '{name}' assigned twice", *_pos(a))
            seen.add(name)
            out.append((name, self.term(a.items[1])))
        return tuple(out)

    def block(self, node) -> Block:
        if _head(node) != "block" or len(node.items) < 3:
            raise ParseError("expected (block guard (assignments)+)", *_pos(node))
        guard = self.formula(node.items[1])
        return Block(guard, tuple(self.assign_set(s) for s in node.items[2:]))


def _section(node, name):
    if _head(node) != name:
        raise ParseError(f"expected ({name} ...)", *_pos(node))
    return node.items[1:]


def parse_chc(text: str) -> ChcDocument:
    top = _read(text)
    if len(top) != 1 or _head(top[0]) != "chc":
        where = _pos(top[0]) if top else (1, 1)
        raise ParseError("expected a single (chc ...) form", *where)
    doc = top[0]
    parts = list(doc.items[1:])
    if not parts:
        raise ParseError("empty chc document", *_pos(doc))
    var_toks = _section(parts.pop(0), "vars")
    if not var_toks:
        raise ParseError("at least one variable must be declared", *_pos(doc.items[1]))
    names = []
    for t in var_toks:
        if not isinstance(t, _Tok) or not _IDENT.match(t.text) or t.text in _RESERVED:
            raise ParseError("bad variable name", *_pos(t))
        if t.text in names:
            raise ParseError(f"duplicate variable '{t.text}'", *_pos(t))
        names.append(t.text)
    p = _Parser(names)

    bound_given = bool(parts) and _head(parts[0]) == "bound"
    if bound_given:
        node = parts.pop(0)
        args = node.items[1:]
        if len(args) != 1 or not isinstance(args[0], _Tok) or not _INT.match(args[0].text) \
                or int(args[0].text) < 1:
            raise ParseError("bound must be a positive integer", *_pos(node))
        int_bound = int(args[0].text)
    else:
        int_bound = DEFAULT_INT_BOUND
        log.warning("no (bound ...) given; using int_bound = %d", DEFAULT_INT_BOUND)

    def one_formula(name):
        if not parts:
            raise ParseError(f"missing ({name} ...)", *_pos(doc))
        node = parts.pop(0)
        args = _section(node, name)
        if len(args) != 1:
            raise ParseError(f"({name} ...) takes one formula", *_pos(node))
        return p.formula(args[0])

    pre = one_formula("pre")
    guard = one_formula("guard")
    if not parts:
        raise ParseError("missing (trans ...)", *_pos(doc))
    tnode = parts.pop(0)
    blocks = _section(tnode, "trans")
    if not blocks:
        raise ParseError("(trans ...) needs at least one block", *_pos(tnode))
    trans = tuple(p.block(b) for b in blocks)
    post = one_formula("post")
    if parts:
        raise ParseError("unexpected trailing form", *_pos(parts[0]))
    return ChcDocument(tuple(names), int_bound, pre, guard, trans, post, bound_given)


def parse_formula(text: str, variables) -> Formula:
    top = _read(text)
    if len(top) != 1:
        raise ParseError("expected exactly one formula")
    return _Parser(variables).formula(top[0])


# ---------------------------------------------------------------------------
# printer

def print_term(t: Term) -> str:
    if isinstance(t, Num):
        return str(t.value)
    if isinstance(t, Var):
        return t.name
    if isinstance(t, Mul):
        return f"(* {t.factor} {t.var})"
    op = "+" if isinstance(t, Add) else "-"
    return "(" + " ".join([op] + [print_term(a) for a in t.args]) + ")"


def print_formula(f: Formula) -> str:
    if isinstance(f, BoolConst):
        return "true" if f.value else "false"
    if isinstance(f, Atom):
        return f"({f.op} {print_term(f.lhs)} {print_term(f.rhs)})"
    op = {And: "and", Or: "or", Not: "not"}[type(f)]
    return "(" + " ".join([op] + [print_formula(a) for a in f.args]) + ")"


def print_document(doc: ChcDocument) -> str:
    lines = ["(chc", f"  (vars {' '.join(doc.variables)})"]
    if doc.bound_given:
        lines.append(f"  (bound {doc.int_bound})")
    lines.append(f"  (pre {print_formula(doc.pre)})")
    lines.append(f"  (guard {print_formula(doc.guard)})")
    lines.append("  (trans")
    for b in doc.trans:
        sets = " ".join("(" + " ".join(f"({v} {print_term(t)})" for v, t in s) + ")"
                        for s in b.branches)
        lines.append(f"    (block {print_formula(b.guard)} {sets})")
    lines[-1] += ")"
    lines.append(f"  (post {print_formula(doc.post)}))")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# lowering

def linearize(t: Term, variables) -> tuple[tuple[int, ...], int]:
    """Coefficient vector and constant of a linear term."""
    index = {v: i for i, v in enumerate(variables)}
    coeffs = [0] * len(index)

    def walk(node, sign) -> int:
        if isinstance(node, Num):
            return sign * node.value
        if isinstance(node, Var):
            coeffs[index[node.name]] += sign
            return 0
        if isinstance(node, Mul):
            coeffs[index[node.var]] += sign * node.factor
            return 0
        if isinstance(node, Add):
            return sum(walk(a, sign) for a in node.args)
        if len(node.args) == 1:
            return walk(node.args[0], -sign)
        return walk(node.args[0], sign) + walk(node.args[1], -sign)

    const = walk(t, 1)
    return tuple(coeffs), const


def desugar_atom(atom: Atom, variables) -> list[LinearPredicate]:
    """Rewrite a comparison as one or two ``w.x <= b`` predicates."""
    lw, lc = linearize(atom.lhs, variables)
    rw, rc = linearize(atom.rhs, variables)
    w = tuple(a - b for a, b in zip(lw, rw))
    b = rc - lc  # atom reads w.x (op) b
    neg = tuple(-a for a in w)
    if atom.op == "<=":
        return [LinearPredicate(w, b)]
    if atom.op == "<":
        return [LinearPredicate(w, b - 1)]
    if atom.op == ">=":
        return [LinearPredicate(neg, -b)]
    if atom.op == ">":
        return [LinearPredicate(neg, -b - 1)]
    if atom.op == "=":
        return [LinearPredicate(w, b), LinearPredicate(neg, -b)]
    raise ValueError(f"unknown comparator {atom.op}")


def to_dnf(f: Formula, variables, cap: int = DEFAULT_NEGATION_CAP) -> DnfFormula:
    """Equivalent DNF with deduplicated, lexicographically ordered cubes."""

    def conj(parts):
        size = math.prod(len(p) for p in parts)
        if size > cap:
            raise NegationTooLarge(f"DNF conversion would produce {size} cubes (cap {cap})")
        out = {frozenset().union(*combo) for combo in itertools.product(*parts)}
        return list(out)

    def disj(parts):
        out = set()
        for p in parts:
            out.update(p)
        if len(out) > cap:
            raise NegationTooLarge(f"DNF conversion would produce {len(out)} cubes (cap {cap})")
        return list(out)

    def walk(node, positive: bool):
        if isinstance(node, BoolConst):
            return [frozenset()] if node.value == positive else []
        if isinstance(node, Atom):
            preds = desugar_atom(node, variables)
            if positive:
                return [frozenset(preds)]
            return [frozenset([p.negate()]) for p in preds]
        if isinstance(node, Not):
            return walk(node.args[0], not positive)
        inner = [walk(a, positive) for a in node.args]
        if isinstance(node, And) == positive:
            return conj(inner)
        return disj(inner)

    cubes = {Cube(tuple(sorted(c))) for c in walk(f, True)}
    return DnfFormula(tuple(sorted(cubes, key=_cube_key)))


def eval_formula(f: Formula, variables, state) -> bool:
    """Direct evaluation of a surface formula (independent of ``to_dnf``)."""
    env = dict(zip(variables, state))

    def term(t):
        if isinstance(t, Num):
            return t.value
        if isinstance(t, Var):
            return env[t.name]
        if isinstance(t, Mul):
            return t.factor * env[t.var]
        if isinstance(t, Add):
            return sum(term(a) for a in t.args)
        if len(t.args) == 1:
            return -term(t.args[0])
        return term(t.args[0]) - term(t.args[1])

    def walk(node):
        if isinstance(node, BoolConst):
            return node.value
        if isinstance(node, Atom):
            a, b = term(node.lhs), term(node.rhs)
            return {"<=": a <= b, "<": a < b, ">": a > b, ">=": a >= b, "=": a == b}[node.op]
        if isinstance(node, Not):
            return not walk(node.args[0])
        if isinstance(node, And):
            return all(walk(a) for a in node.args)
        return any(walk(a) for a in node.args)

    return walk(f)


def _branch_map(branch, variables) -> LinearMap:
    n = len(variables)
    assigned = dict(branch)
    rows, offset = [], []
    for i, v in enumerate(variables):
        if v in assigned:
            w, c = linearize(assigned[v], variables)
        else:
            w, c = tuple(int(j == i) for j in range(n)), 0
        rows.append(w)
        offset.append(c)
    return LinearMap(tuple(rows), tuple(offset))


def check_guard_overlap(system: ChcSystem, limit: int = DEFAULT_OVERLAP_LIMIT) -> bool | None:
    """True if two transition blocks both fire at some state of the box inside
    the loop guard; None when the box is too large to enumerate."""
    blocks = system.trans.blocks
    if len(blocks) < 2:
        return False
    if system.space.cardinality > limit:
        return None
    for pts in box_chunks(system.space):
        live = pts[dnf_mask(system.guard, pts)]
        fired = sum(dnf_mask(b.guard, live).astype(np.int64) for b in blocks)
        if np.any(fired > 1):
            return True
    return False


def lower_document(doc: ChcDocument, overlap_limit: int = DEFAULT_OVERLAP_LIMIT,
                   int_bound: int | None = None) -> ChcSystem:
    """Turn a parsed document into a :class:`ChcSystem`.

    ``int_bound`` overrides the document's bound when given.
    """
    v = doc.variables
    blocks = tuple(TransitionBlock(to_dnf(b.guard, v), tuple(_branch_map(br, v) for br in b.branches))
                   for b in doc.trans)
    space = StateSpace(len(v), int_bound if int_bound is not None else doc.int_bound)
    system = ChcSystem(space, to_dnf(doc.pre, v), to_dnf(doc.guard, v),
                       TransitionRelation(blocks), to_dnf(doc.post, v))
    overlap = check_guard_overlap(system, overlap_limit)
    if overlap:
        raise GuardOverlap("transition blocks overlap inside the loop guard")
    if overlap is None:
        log.warning("box too large to check block disjointness; relying on the verifier")
    return system


def load_system(text: str, **kw) -> ChcSystem:
    return lower_document(parse_chc(text), **kw)


# ---------------------------------------------------------------------------
# invariant output

def _text_pred(p: LinearPredicate, variables) -> str:
    parts = []
    for w, name in zip(p.coeffs, variables):
        if w == 0:
            continue
        mag = abs(w)
        body = name if mag == 1 else f"{mag}*{name}"
        if not parts:
            parts.append(body if w > 0 else f"-{body}")
        else:
            parts.append(("+ " if w > 0 else "- ") + body)
    lhs = " ".join(parts) if parts else "0"
    return f"{lhs} <= {p.bound}"


def _num(v: int, strict: bool) -> str:
    return f"(- {-v})" if strict and v < 0 else str(v)


def _smt_lhs(p: LinearPredicate, variables, strict: bool) -> str:
    terms = [f"(* {_num(w, strict)} {name})" for w, name in zip(p.coeffs, variables) if w != 0]
    if not terms:
        return "0"
    return terms[0] if len(terms) == 1 else "(+ " + " ".join(terms) + ")"


def smt_predicate(p: LinearPredicate, variables, strict: bool = False) -> str:
    return f"(<= {_smt_lhs(p, variables, strict)} {_num(p.bound, strict)})"


def smt_dnf(inv: DnfFormula, variables, strict: bool = False) -> str:
    """SMT-LIB term for ``inv``. ``strict`` writes negative numerals as
    ``(- k)``; otherwise they are printed as ``-k``, which z3 and the
    document parser also accept."""
    if not inv.cubes:
        return "false"
    cubes = []
    for cube in inv:
        if not len(cube):
            cubes.append("true")
        else:
            cubes.append("(and " + " ".join(smt_predicate(p, variables, strict) for p in cube) + ")")
    return "(or " + " ".join(cubes) + ")"


def serialize_invariant(inv: DnfFormula, variables, fmt: str = "dnf-text") -> str:
    if fmt == "smtlib-term":
        return smt_dnf(inv, variables)
    if fmt != "dnf-text":
        raise ValueError(f"unknown format {fmt!r}")
    if not inv.cubes:
        return "false"
    cubes = []
    for cube in inv:
        if not len(cube):
            cubes.append("(true)")
        else:
            cubes.append("(" + " and ".join(_text_pred(p, variables) for p in cube) + ")")
    return " or ".join(cubes)
