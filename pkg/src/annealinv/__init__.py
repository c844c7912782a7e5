"""Loop-invariant inference for bounded linear CHC systems.

Sample states from the pre-condition, guard and negated post-condition,
anneal a d-cube, c-predicate linear DNF that fits the sample, check it with
an SMT solver, and fold counterexamples back into the sample.
"""

from __future__ import annotations

from .anneal import (AnnealConfig, CandidateInvariant, SearchSpaceParams, cost, delta_approx,
                     normalizer, parallel_sa, simulated_annealing)
from .ir import ChcDocument, GuardOverlap, ParseError, load_system, lower_document, parse_chc, \
    serialize_invariant
from .lia import (ChcSystem, Cube, Dataset, DnfFormula, LinearMap, LinearPredicate, StateSpace,
                  TransitionBlock, TransitionRelation, negate_dnf)
from .orchestrate import SolveConfig, SolveOutcome, diagnostics, solve
from .sampling import NetParams, epsilon_net_size, initial_dataset, randomized_epsilon_net
from .smt import Solver, SolverError
from .verify import CexDataset, VerifierConfig, brute_force_verify, verifier

__all__ = [
    "AnnealConfig", "CandidateInvariant", "SearchSpaceParams", "cost", "delta_approx",
    "normalizer", "parallel_sa", "simulated_annealing",
    "ChcDocument", "GuardOverlap", "ParseError", "load_system", "lower_document", "parse_chc",
    "serialize_invariant",
    "ChcSystem", "Cube", "Dataset", "DnfFormula", "LinearMap", "LinearPredicate", "StateSpace",
    "TransitionBlock", "TransitionRelation", "negate_dnf",
    "SolveConfig", "SolveOutcome", "diagnostics", "solve",
    "NetParams", "epsilon_net_size", "initial_dataset", "randomized_epsilon_net",
    "Solver", "SolverError",
    "CexDataset", "VerifierConfig", "brute_force_verify", "verifier",
]
