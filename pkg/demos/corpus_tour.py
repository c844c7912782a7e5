"""Solve two corpus programs and print the per-iteration diagnostics.

Run: python demos/corpus_tour.py   (needs z3 on PATH)
"""

from __future__ import annotations

from pathlib import Path

from annealinv import SolveConfig, brute_force_verify, diagnostics, load_system, parse_chc, \
    serialize_invariant, solve

CORPUS = Path(__file__).resolve().parents[1] / "src" / "annealinv" / "corpus"

for name, bound, d, c in (("nondet_guard", 64, 1, 3), ("basic_while", 9, 1, 2)):
    text = (CORPUS / f"{name}.chc").read_text()
    names = parse_chc(text).variables
    system = load_system(text, int_bound=bound)
    cfg = SolveConfig(d=d, c=c, seed=0)
    out = solve(system, cfg, variables=names)
    print(f"{name} (bound {bound}, d={d}, c={c}): {out.status}")
    if out.invariant is not None:
        print("  invariant:", serialize_invariant(out.invariant, names))
        print("  valid on the whole box:", brute_force_verify(out.invariant, system)[0])
    diag = diagnostics(out.trace, system, cfg)
    for row in diag["rows"]:
        print(f"  t={row['iteration']} eps={row['epsilon']} data={row['dataset']} "
              f"cex={row['cex']} {row['seconds']:.2f}s")
    print(f"  iteration ceiling (non-binding): {diag['iteration_ceiling']:.1f}\n")
