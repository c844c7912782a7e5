"""Clause checking: SMT-backed verifier with dispersed counterexamples, and a
brute-force oracle over the bounded box."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .lia import (ChcSystem, DnfFormula, StateSpace, TransitionRelation, apply_transition,
                  box_chunks, dnf_mask)
from .smt import CLAUSES, Solver, dispersion_constraint, encode_clause, state_names

log = logging.getLogger(__name__)


class OracleTooLarge(ValueError):
    pass


@dataclass(frozen=True)
class VerifierConfig:
    cex_max: int = 5
    d0: int = 5
    k0: int = 3
    solver_timeout_ms: int = 60_000
    oracle_limit: int = 20_000_000


@dataclass(frozen=True)
class CexDataset:
    plus_cex: frozenset = field(default_factory=frozenset)
    ice_cex: frozenset = field(default_factory=frozenset)
    minus_cex: frozenset = field(default_factory=frozenset)

    @property
    def empty(self) -> bool:
        return not (self.plus_cex or self.ice_cex or self.minus_cex)

    @property
    def counts(self) -> dict[str, int]:
        return {"plus": len(self.plus_cex), "implications": len(self.ice_cex),
                "minus": len(self.minus_cex)}


def chc_verify_clause(kind: str, inv: DnfFormula, system: ChcSystem, cfg: VerifierConfig,
                      solver: Solver) -> tuple[bool, list]:
    """Check one clause. Returns ``(valid, cex)``; inductive cex are
    ``(head, tail)`` pairs whose heads are pairwise at L1 distance >= d0."""
    n = system.dim
    s = state_names(n)
    sp = state_names(n, primed=True)
    names = s + sp if kind == "inductive" else s
    cex = []
    with solver.session(kind) as sess:
        verdict = sess.check(encode_clause(kind, inv, system))
        while verdict == "sat":
            vals = sess.values(names)
            head = tuple(vals[v] for v in s)
            if kind == "inductive":
                cex.append((head, tuple(vals[v] for v in sp)))
            else:
                cex.append(head)
            if len(cex) >= cfg.cex_max:
                break
            verdict = sess.check(dispersion_constraint(str(len(cex)), head, s, cfg.d0)
                                 + "(check-sat)\n")
    return not cex, cex


def iterated_implication_pairs(trans: TransitionRelation, guard: DnfFormula, ice, k0: int,
                               rng: np.random.Generator, space: StateSpace | None = None) -> list:
    """Extend each pair's tail by up to ``k0 - 1`` random guarded steps."""
    if k0 < 1:
        raise ValueError("k0 must be >= 1")
    out = []
    for head, tail in ice:
        cur = tuple(tail)
        for _ in range(k0 - 1):
            if not guard.holds(cur):
                break
            succ = sorted(apply_transition(trans, cur, space))
            if not succ:
                break
            nxt = succ[int(rng.integers(len(succ)))]
            if not guard.holds(nxt):
                break
            cur = nxt
        out.append((tuple(head), cur))
    return out


def verifier(inv: DnfFormula, system: ChcSystem, cfg: VerifierConfig, solver: Solver,
             rng: np.random.Generator) -> tuple[bool, CexDataset]:
    found = {}
    for kind in CLAUSES:
        _, found[kind] = chc_verify_clause(kind, inv, system, cfg, solver)
    ice = list(found["inductive"])
    if ice and cfg.k0 > 1:
        ice += iterated_implication_pairs(system.trans, system.guard, ice, cfg.k0, rng, system.space)
    cex = CexDataset(frozenset(found["fact"]), frozenset(ice), frozenset(found["query"]))
    return cex.empty, cex


def brute_force_verify(inv: DnfFormula, system: ChcSystem,
                       cfg: VerifierConfig | None = None) -> tuple[bool, CexDataset]:
    """Enumerate the whole box; counterexample sets are complete."""
    cfg = cfg or VerifierConfig()
    space = system.space
    if space.cardinality > cfg.oracle_limit:
        raise OracleTooLarge(f"box has {space.cardinality} states (limit {cfg.oracle_limit})")
    plus, minus, ice = set(), set(), set()
    for pts in box_chunks(space):
        in_inv = dnf_mask(inv, pts)
        plus.update(map(tuple, pts[dnf_mask(system.pre, pts) & ~in_inv].tolist()))
        minus.update(map(tuple, pts[in_inv & ~dnf_mask(system.post, pts)].tolist()))
        heads = pts[in_inv & dnf_mask(system.guard, pts)]
        for block in system.trans.blocks:
            hb = heads[dnf_mask(block.guard, heads)]
            for m in block.maps:
                tails = hb @ np.array(m.matrix, dtype=np.int64).T + np.array(m.offset, dtype=np.int64)
                ok = np.all((tails >= space.lo) & (tails <= space.hi), axis=1)
                bad = ok & ~dnf_mask(inv, tails)
                ice.update(zip(map(tuple, hb[bad].tolist()), map(tuple, tails[bad].tolist())))
    cex = CexDataset(frozenset(plus), frozenset(ice), frozenset(minus))
    return cex.empty, cex
