"""One pass of the loop on the toy program, done by hand, then the full solver.

    x = 1; y = 1;
    while (*) { x = x + y; y = x; }
    assert(y >= 1);

Run: python demos/toy_walkthrough.py
"""

from __future__ import annotations

from fractions import Fraction

import numpy as np

from annealinv import (AnnealConfig, SolveConfig, brute_force_verify, load_system,
                       serialize_invariant, solve)
from annealinv.anneal import SearchSpaceParams, initial_invariant, simulated_annealing
from annealinv.sampling import initial_dataset

CORPUS = __import__("pathlib").Path(__file__).resolve().parents[1] / "src" / "annealinv" / "corpus"
XY = ("x", "y")

system = load_system((CORPUS / "toy.chc").read_text())
print(f"state box: [{system.space.lo}, {system.space.hi}]^2")

# 1. sample: plus from pre, implication pairs from the guard, minus from not-post
rng = np.random.default_rng(0)
data = initial_dataset(system, Fraction(1, 2), Fraction(9, 10), rng)
print("dataset sizes:", data.sizes)

# 2. anneal a single 2-predicate cube until it fits the sample
params = SearchSpaceParams.for_space(system.space, c=2, d=1, k=2)
config = AnnealConfig(workers=1, k_list=(2,), parallel="serial")
start = initial_invariant(data, params, config.l0, config.alpha, config.beta, rng)
print("start:", serialize_invariant(start.to_dnf(), XY))
found = simulated_annealing(data, start, params, config, rng)
print("fits sample:", serialize_invariant(found.to_dnf(), XY))

# 3. check it against every state of the box
ok, cex = brute_force_verify(found.to_dnf(), system)
print("valid on the whole box:", ok, cex.counts)

# 4. the same thing end to end, with the SMT solver and counterexample feedback
out = solve(system, SolveConfig(d=1, c=2, seed=0), variables=XY)
print(out.status, "after", out.iterations, "iteration(s):",
      serialize_invariant(out.invariant, XY) if out.invariant else None)
for rec in out.trace:
    print("  iteration", rec["iteration"], "eps", rec["epsilon"], "data", rec["dataset"],
          "cex", rec["cex"])
