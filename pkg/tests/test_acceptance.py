"""End-to-end and statistical acceptance checks, one PASS/FAIL line each."""

from __future__ import annotations

import logging
import math
import subprocess
import sys
import time
from collections import Counter
from fractions import Fraction

import numpy as np
from scipy.stats import chisquare

from annealinv.anneal import (AnnealConfig, CandidateInvariant, SearchSpaceParams,
                              TransitionSample, accept, cost, delta_approx, initial_temperature,
                              random_candidate, satisfies_dataset, simulated_annealing)
from annealinv.ir import lower_document, parse_chc
from annealinv.lia import (ChcSystem, Cube, Dataset, DnfFormula, LinearMap, LinearPredicate,
                           StateSpace, TransitionBlock, TransitionRelation, apply_transition,
                           dnf_mask, negate_dnf)
from annealinv.orchestrate import SolveConfig, solve
from annealinv.sampling import (CubeSampler, DiophantineSystem, EmptyRegion, Hyperrectangle,
                                NetParams, diophantine_sample, randomized_epsilon_net)
from annealinv.smt import CLAUSES, Solver
from annealinv.verify import (CexDataset, VerifierConfig, brute_force_verify, chc_verify_clause,
                              iterated_implication_pairs)

from conftest import ACCEPTANCE, CORPUS, corpus_system, grid, requires_z3

# basic_while is solved at this bound; larger bounds are discussed in the README
BASIC_WHILE = {"int_bound": 9, "d": 1, "c": 2}
NONDET_GUARD = {"int_bound": 64, "d": 1, "c": 3}


def report(n: int, what: str, ok: bool, detail: str = ""):
    line = f"{'PASS' if ok else 'FAIL'} criterion {n}: {what}" + (f" ({detail})" if detail else "")
    ACCEPTANCE.append(line)
    print(line)
    assert ok, line


def _random_dnf(rng, n, d, c, wmax=3, bmax=8):
    cubes = []
    for _ in range(d):
        cube = []
        for _ in range(c):
            w = tuple(int(v) for v in rng.integers(-wmax, wmax + 1, n))
            if not any(w):
                w = tuple(int(i == 0) for i in range(n))
            cube.append((w, int(rng.integers(-bmax, bmax + 1))))
        cubes.append(cube)
    return DnfFormula.from_lists(cubes)


# ---------------------------------------------------------------------------

@requires_z3
def test_toy_end_to_end():
    system = corpus_system("toy")
    assert system.space.int_bound == 64
    solved, sound, slowest = 0, True, 0.0
    for seed in range(10):
        tick = time.perf_counter()
        out = solve(system, SolveConfig(d=1, c=2, seed=seed), variables=("x", "y"))
        slowest = max(slowest, time.perf_counter() - tick)
        if out.status == "Invariant":
            solved += 1
            sound &= brute_force_verify(out.invariant, system)[0]
    report(1, "toy solves with defaults", solved >= 8 and sound and slowest < 120,
           f"{solved}/10 solved, all sound={sound}, slowest {slowest:.1f}s")


@requires_z3
def test_corpus_encodings_and_solves(caplog):
    names = ["basic_while", "for_loop", "do_while", "det_conditional", "nondet_conditional",
             "nondet_guard"]
    clean = True
    for name in names:
        caplog.clear()
        with caplog.at_level(logging.WARNING):
            lower_document(parse_chc((CORPUS / f"{name}.chc").read_text()))
        clean &= not caplog.records
    results = {}
    for name, setup in (("basic_while", BASIC_WHILE), ("nondet_guard", NONDET_GUARD)):
        system = corpus_system(name, int_bound=setup["int_bound"])
        results[name] = None
        for seed in range(5):
            tick = time.perf_counter()
            out = solve(system, SolveConfig(d=setup["d"], c=setup["c"], seed=seed))
            took = time.perf_counter() - tick
            if out.status == "Invariant" and took < 600 and brute_force_verify(out.invariant, system)[0]:
                results[name] = (seed, round(took, 1))
                break
    ok = clean and all(v is not None for v in results.values())
    report(2, "corpus lowers cleanly and small-bound systems solve", ok,
           f"diagnostics-free={clean}, solved (seed, s): {results}")


def test_cost_zero_equivalence():
    rng = np.random.default_rng(3)
    bad = 0
    for trial in range(1000):
        n = 2 if trial % 2 else 3
        d, c = int(rng.integers(1, 3)), int(rng.integers(1, 3))
        params = SearchSpaceParams(n, c, d, 2, 20)
        cand = random_candidate(params, rng)
        W, b = cand.arrays()
        b[:] = rng.integers(-6, 7, size=b.shape)
        cand = CandidateInvariant.from_arrays(W, b)

        def pts(k):
            return {tuple(int(v) for v in rng.integers(-4, 5, n)) for _ in range(k)}
        data = Dataset(pts(int(rng.integers(0, 4))), pts(int(rng.integers(0, 4))),
                       set(zip(pts(3), pts(3))))
        bad += (cost(cand, data, 50, 2) == 0.0) != satisfies_dataset(cand.to_dnf(), data)
    report(3, "cost is zero exactly on dataset-consistent candidates", bad == 0,
           f"{bad} violations in 1000 pairs")


def test_delta_approx_under_approximates():
    rng = np.random.default_rng(4)
    tick = time.perf_counter()
    bad = 0
    checked = 0
    while checked < 500:
        n = 2 if checked % 2 else 3
        lo, hi = (-10, 10) if n == 2 else (-6, 6)
        f = _random_dnf(rng, n, int(rng.integers(1, 3)), int(rng.integers(1, 4)), bmax=5)
        box = np.array(list(grid(lo, hi, n)), dtype=np.int64)
        members = box[dnf_mask(f, box)]
        if not len(members):
            continue
        s = tuple(int(v) for v in rng.integers(lo, hi + 1, n))
        dist = float(np.sqrt(((members - np.array(s)) ** 2).sum(axis=1)).min())
        da = delta_approx(f, s)
        bad += da > dist + 1e-9
        bad += (da == 0.0) != f.holds(s)
        checked += 1
    took = time.perf_counter() - tick
    report(4, "delta_approx is below the lattice set distance", bad == 0 and took < 60,
           f"{bad} violations in 500 cases, {took:.1f}s")


def test_delta_approx_figure_values():
    # six faces whose violations at the origin are 0, 0, 0, 2, 8 and 3/sqrt(2)
    cube = [((-1, 0), 5), ((0, -1), 20), ((1, -1), 20), ((1, 0), -2), ((0, 1), -8),
            ((1, 1), -3)]
    f = DnfFormula.from_lists([cube])
    faces = [max(0, w[0] * 0 + w[1] * 0 - b) / math.hypot(*w) for w, b in cube]
    da = delta_approx(f, (0, 0))
    box = np.array(list(grid(-30, 30, 2)), dtype=np.int64)
    true_dist = float(np.sqrt((box[dnf_mask(f, box)] ** 2).sum(axis=1)).min())
    ok = ([round(v, 2) for v in faces] == [0, 0, 0, 2, 8, 2.12] and round(da, 2) == 2.02
          and round(sum(faces) / 6, 2) == 2.02 and da <= 2.23 and da <= true_dist)
    report(5, "per-face distances average to 2.02, below 2.23", ok,
           f"delta_approx={da:.4f}, lattice distance of this cube={true_dist:.2f}")


def test_negation_is_complement():
    rng = np.random.default_rng(6)
    box = np.array(list(grid(-10, 10, 2)), dtype=np.int64)
    bad = 0
    for _ in range(200):
        f = _random_dnf(rng, 2, int(rng.integers(1, 3)), int(rng.integers(1, 4)))
        bad += int(np.sum(dnf_mask(negate_dnf(f), box) == dnf_mask(f, box)))
    report(6, "negate_dnf is the pointwise complement on 21x21", bad == 0,
           f"{bad} disagreeing points over 200 formulas")


def test_samplers():
    rng = np.random.default_rng(7)
    line = DiophantineSystem(((1, 1),), (4,), Hyperrectangle((0, 0), (4, 4)))
    draws = [diophantine_sample(line, rng) for _ in range(5000)]
    valid_a = all(x + y == 4 and 0 <= x <= 4 for x, y in draws)
    p_a = chisquare([Counter(draws)[(x, 4 - x)] for x in range(5)]).pvalue

    space = StateSpace(2, 16)
    tri = Cube((LinearPredicate((-1, 0), 0), LinearPredicate((0, -1), 0),
                LinearPredicate((1, 1), 3)))
    sampler = CubeSampler(tri, space)
    draws = sampler.draw_many(rng, 10_000)
    cells = [(x, y) for x in range(4) for y in range(4) if x + y <= 3]
    valid_b = all(tri.holds(p) for p in draws)
    p_b = chisquare([Counter(draws)[c] for c in cells]).pvalue

    space = StateSpace(2, 10)
    box = np.array(list(grid(space.lo, space.hi, 2)), dtype=np.int64)
    worst, tested = 0.0, 0
    while tested < 20:
        cube = _random_dnf(rng, 2, 1, int(rng.integers(1, 4)), bmax=10).cubes[0]
        try:
            sampler = CubeSampler(cube, space)
        except EmptyRegion:
            continue
        if sampler.diophantine:
            continue
        inside = int(dnf_mask(DnfFormula((cube,)), box).sum())
        expected = sampler.alpha_box.size / inside if inside else math.inf
        if expected > 50:
            continue
        sampler.draw_many(rng, 2000)
        worst = max(worst, abs(sampler.tries / 2000 / expected - 1))
        tested += 1
    ok = valid_a and p_a > 0.01 and valid_b and p_b > 0.01 and worst <= 0.2
    report(7, "samplers are valid and uniform, rejection cost matches", ok,
           f"line p={p_a:.3f}, triangle p={p_b:.3f}, worst tries error {worst:.1%}")


def test_epsilon_net_hits_heavy_discs():
    tick = time.perf_counter()
    rng = np.random.default_rng(8)
    space = StateSpace(2, 64)
    square = DnfFormula.from_lists([[((1, 0), 39), ((-1, 0), 0), ((0, 1), 39), ((0, -1), 0)]])
    lattice = np.array(list(grid(0, 39, 2)), dtype=np.int64)
    # pool of discs holding at least a tenth of the lattice
    centers = rng.uniform(-5, 44, size=(20000, 2))
    radii = rng.uniform(1, 30, size=20000)
    d2 = ((lattice[None, :, :] - centers[:, None, :]) ** 2).sum(axis=2)
    masks = d2 <= radii[:, None] ** 2
    masks = masks[masks.sum(axis=1) >= 0.1 * len(lattice)]
    index = {tuple(p): i for i, p in enumerate(lattice.tolist())}
    p = NetParams(Fraction(1, 10), Fraction(9, 10), 5)
    failed = 0
    for _ in range(200):
        net = randomized_epsilon_net(square, p, space, rng)
        hit = np.zeros(len(lattice), dtype=bool)
        hit[[index[q] for q in net]] = True
        probe = masks[rng.choice(len(masks), 500, replace=False)]
        failed += bool((~(probe & hit).any(axis=1)).any())
    took = time.perf_counter() - tick
    report(8, "epsilon-nets hit every heavy disc", failed / 200 <= 0.2 and took < 300,
           f"{failed}/200 nets missed a disc, {len(masks)} discs in pool, {took:.1f}s")


def _random_system(rng) -> ChcSystem:
    space = StateSpace(2, 8)
    maps = []
    for _ in range(int(rng.integers(1, 3))):
        M = tuple(tuple(int(v) for v in row) for row in rng.integers(-1, 2, (2, 2)))
        maps.append(LinearMap(M, tuple(int(v) for v in rng.integers(-2, 3, 2))))
    trans = TransitionRelation((TransitionBlock(DnfFormula.true(), tuple(maps)),))
    return ChcSystem(space, _random_dnf(rng, 2, 1, 2, wmax=2, bmax=6),
                     _random_dnf(rng, 2, 1, int(rng.integers(1, 3)), wmax=2, bmax=6), trans,
                     _random_dnf(rng, 2, 2, 2, wmax=2, bmax=6))


@requires_z3
def test_solver_agrees_with_enumeration():
    rng = np.random.default_rng(9)
    cfg = VerifierConfig(cex_max=5, d0=5)
    solver = Solver()
    disagree = spread = 0
    for _ in range(50):
        system = _random_system(rng)
        inv = _random_dnf(rng, 2, int(rng.integers(1, 3)), 2, wmax=2, bmax=6)
        _, oracle = brute_force_verify(inv, system)
        truth = {"fact": not oracle.plus_cex, "inductive": not oracle.ice_cex,
                 "query": not oracle.minus_cex}
        for kind in CLAUSES:
            valid, cex = chc_verify_clause(kind, inv, system, cfg, solver)
            disagree += valid != truth[kind]
            heads = [c[0] if kind == "inductive" else c for c in cex]
            for i, a in enumerate(heads):
                for b in heads[i + 1:]:
                    spread += sum(abs(u - v) for u, v in zip(a, b)) < cfg.d0
    report(9, "SMT clause checks agree with enumeration", disagree == 0 and spread == 0,
           f"{disagree} disagreements over 150 clauses, {spread} close counterexample pairs")


def _reachable(system, start, k):
    seen, layer = set(), {start}
    for _ in range(k):
        nxt = set()
        for s in layer:
            if system.guard.holds(s):
                nxt |= apply_transition(system.trans, s, system.space)
        seen |= nxt
        layer = nxt
    return seen


def test_iterated_pairs_are_reachable():
    rng = np.random.default_rng(10)
    k0 = 4
    bad = made = 0
    for name in ("toy", "nondet_branch_body", "nested_conditional", "nondet_guard"):
        system = corpus_system(name, int_bound=40)
        pairs = []
        while len(pairs) < 25:
            h = tuple(int(v) for v in rng.integers(-20, 21, system.dim))
            succ = sorted(apply_transition(system.trans, h, system.space))
            if system.guard.holds(h) and succ:
                pairs.append((h, succ[int(rng.integers(len(succ)))]))
        for h, t in iterated_implication_pairs(system.trans, system.guard, pairs, k0, rng,
                                               system.space):
            bad += t not in _reachable(system, h, k0)
            made += 1
    report(10, "iterated pairs are confirmed by forward search", bad == 0 and made == 100,
           f"{bad} unconfirmed of {made}")


def test_annealing_mechanics():
    rng = np.random.default_rng(11)
    worst_sigma = 0.0
    for c_old, c_new, T in ((0.0, 0.5, 1.0), (1.0, 3.0, 2.0), (0.2, 0.25, 0.01),
                            (2.0, 1.0, 0.5), (0.0, 1.0, 0.3)):
        n = 20_000
        p = math.exp(-max(c_new - c_old, 0.0) / T)
        hits = sum(accept(c_old, c_new, T, rng) for _ in range(n))
        sd = math.sqrt(n * p * (1 - p)) or 1.0
        worst_sigma = max(worst_sigma, abs(hits - n * p) / sd)

    # one predicate on the line, x <= b; only b = 3 separates plus {3} from minus {4}
    data = Dataset({(3,)}, {(4,)}, set())
    params = SearchSpaceParams(1, 1, 1, 1, 8)
    zeros = [b for b in range(-8, 9) for w in (-1, 1)
             if cost(CandidateInvariant((((w,),),), ((b,),)), data, 50, 2) == 0.0]
    start = CandidateInvariant((((1,),),), ((0,),))
    cfg = AnnealConfig(t_max=10_000, workers=1, k_list=(1,), a0=0.9)
    found = sum(simulated_annealing(data, start, params, cfg, np.random.default_rng(s))
                == CandidateInvariant((((1,),),), ((3,),)) for s in range(100))

    T = initial_temperature([TransitionSample(0.0, 1.0)], 0.5, 1e-12)
    ok = worst_sigma <= 3 and zeros == [3] and found >= 95 and abs(T - 1 / math.log(2)) <= 1e-9
    report(11, "acceptance rule, 3-move convergence, temperature algebra", ok,
           f"worst deviation {worst_sigma:.2f} sigma, zero-cost set b={zeros}, "
           f"{found}/100 converged, |T - 1/ln 2|={abs(T - 1 / math.log(2)):.1e}")


@requires_z3
def test_solve_is_deterministic():
    cmd = [sys.executable, "-m", "annealinv.cli", "solve", str(CORPUS / "toy.chc"), "--json",
           "--seed", "5"]
    a = subprocess.run(cmd, capture_output=True, timeout=600)
    b = subprocess.run(cmd, capture_output=True, timeout=600)
    ok = a.returncode == b.returncode == 0 and a.stdout == b.stdout
    report(12, "repeated solve gives byte-identical JSON", ok, f"{len(a.stdout)} bytes")


def test_refinement_schedule():
    system = corpus_system("toy")
    seen = []
    cfg = SolveConfig(t_refine=2, ds_t_max=5, anneal=AnnealConfig(t_max=20_000, parallel="serial"))
    out = solve(system, cfg, verify=lambda inv, s, r: (False, CexDataset()),
                on_iteration=lambda t, data, rec: seen.append(data))
    eps = [Fraction(r["epsilon"]) for r in out.trace]
    e0 = cfg.eps0
    monotone = all(a.issubset(b) for a, b in zip(seen, seen[1:]))
    ok = eps == [e0, e0, e0 / 2, e0 / 2, e0 / 4] and monotone and out.iterations == 5
    report(13, "five forced iterations halve epsilon every second step", ok,
           f"eps={[str(e) for e in eps]}, superset chain={monotone}")
