"""Counterexample-guided loop: sample a dataset, anneal an approximate
invariant, verify it, fold counterexamples back in, and refine the nets."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable

import numpy as np

from .anneal import AnnealConfig, SearchSpaceParams, initial_invariant, parallel_sa
from .ir import serialize_invariant
from .lia import ChcSystem, Dataset, DnfFormula, dataset_stats, negate_dnf
from .sampling import (EmptyRegion, bounding_box, initial_dataset, refine_criterion,
                       refined_dataset, to_fraction)
from .smt import Solver, SolverError
from .verify import CexDataset, VerifierConfig, verifier

log = logging.getLogger(__name__)

STATUSES = ("Invariant", "SaFail", "Exhausted", "SolverError")

# stream ids for the seed sequence
_DATA, _INIT, _VERIFY, _SA = range(4)


@dataclass(frozen=True)
class SolveConfig:
    d: int = 1
    c: int = 2
    eps0: Fraction = Fraction(1, 2)
    delta0: Fraction = Fraction(9, 10)
    t_refine: int = 3
    ds_t_max: int = 50
    anneal: AnnealConfig = field(default_factory=AnnealConfig)
    verify: VerifierConfig = field(default_factory=VerifierConfig)
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "eps0", to_fraction(self.eps0))
        object.__setattr__(self, "delta0", to_fraction(self.delta0))
        if not 0 < self.eps0 < 1:
            raise ValueError("eps0 must lie in (0, 1)")
        if self.d < 1 or self.c < 1 or self.t_refine < 1 or self.ds_t_max < 0:
            raise ValueError("d, c, t_refine must be positive and ds_t_max nonnegative")


@dataclass
class SolveOutcome:
    status: str
    invariant: DnfFormula | None
    iterations: int
    trace: list
    seed: int
    variables: tuple = ()
    error: str | None = None

    def record(self) -> dict:
        """Timing-free result record."""
        inv = None
        if self.invariant is not None:
            inv = {"dnf": serialize_invariant(self.invariant, self.variables, "dnf-text"),
                   "smtlib": serialize_invariant(self.invariant, self.variables, "smtlib-term")}
        return {"status": self.status, "invariant": inv, "iterations": self.iterations,
                "seed": self.seed}


def merge_cex(data: Dataset, cex: CexDataset) -> Dataset:
    return Dataset(data.plus | cex.plus_cex, data.minus | cex.minus_cex,
                   data.implications | cex.ice_cex)


def _rng(seed: int, *key) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=key))


VerifierFn = Callable[[DnfFormula, ChcSystem, np.random.Generator], "tuple[bool, CexDataset]"]


def smt_verifier(cfg: VerifierConfig, solver: Solver | None = None) -> VerifierFn:
    solver = solver or Solver(timeout_ms=cfg.solver_timeout_ms)

    def check(inv, system, rng):
        return verifier(inv, system, cfg, solver, rng)

    return check


def solve(system: ChcSystem, cfg: SolveConfig, verify: VerifierFn | None = None,
          variables: tuple = (), on_iteration: Callable | None = None,
          on_telemetry: Callable | None = None) -> SolveOutcome:
    """Run the loop until an invariant verifies, annealing fails, or the
    iteration budget runs out.

    ``on_iteration(t, dataset, record)`` is called after each iteration's
    record is built, with the dataset the annealer saw. ``on_telemetry(t,
    records)`` receives the annealers' per-1000-step records.
    """
    variables = variables or tuple(f"x{i}" for i in range(system.dim))
    trace: list[dict] = []

    def outcome(status, inv=None, error=None):
        return SolveOutcome(status, inv, len(trace), trace, cfg.seed, variables, error)

    if cfg.ds_t_max == 0:
        return outcome("Exhausted")
    if cfg.c ** cfg.d > 4096:
        log.warning("negating a %d-cube, %d-predicate candidate gives %d cubes",
                    cfg.d, cfg.c, cfg.c ** cfg.d)
    try:
        verify = verify or smt_verifier(cfg.verify)
    except SolverError as e:
        return outcome("SolverError", error=str(e))
    a = cfg.anneal
    data_rng = _rng(cfg.seed, _DATA)
    eps = cfg.eps0
    data = initial_dataset(system, eps, cfg.delta0, data_rng)
    params0 = SearchSpaceParams.for_space(system.space, cfg.c, cfg.d, a.k_list[0])
    start = initial_invariant(data, params0, a.l0, a.alpha, a.beta, _rng(cfg.seed, _INIT))
    verify_rng = _rng(cfg.seed, _VERIFY)

    for t in range(1, cfg.ds_t_max + 1):
        tick = time.perf_counter()
        stats = dataset_stats(data)
        rngs = [_rng(cfg.seed, _SA, t, i) for i in range(a.workers)]
        res = parallel_sa(data, start, system.space, cfg.c, cfg.d, a, rngs)
        if on_telemetry:
            on_telemetry(t, res.telemetry)
        rec = {"iteration": t, "epsilon": str(eps), "dataset": data.sizes,
               "kappa_inf": float(stats.kappa_inf), "lambda": stats.lambda_arrow,
               "sa_success": res.success, "sa_worker": res.worker, "sa_steps": res.steps,
               "cex": None}
        if not res.success:
            rec["seconds"] = time.perf_counter() - tick
            trace.append(rec)
            if on_iteration:
                on_iteration(t, data, rec)
            log.info("iteration %d: annealing failed", t)
            return outcome("SaFail")
        inv = res.invariant.to_dnf()
        try:
            correct, cex = verify(inv, system, verify_rng)
        except SolverError as e:
            rec["seconds"] = time.perf_counter() - tick
            trace.append(rec)
            return outcome("SolverError", error=str(e))
        rec["cex"] = cex.counts
        rec["seconds"] = time.perf_counter() - tick
        trace.append(rec)
        if on_iteration:
            on_iteration(t, data, rec)
        log.info("iteration %d: eps=%s data=%s cex=%s", t, eps, data.sizes, cex.counts)
        if correct:
            return outcome("Invariant", inv)
        data = merge_cex(data, cex)
        if refine_criterion(t, cfg.t_refine):
            data, eps = refined_dataset(system, eps, cfg.delta0, data, data_rng)
        start = res.invariant
    return outcome("Exhausted")


def _box_volume(formula: DnfFormula, system: ChcSystem) -> int:
    total = 0
    for cube in formula:
        try:
            total += bounding_box(cube, system.space).size
        except EmptyRegion:
            pass
    return total


def diagnostics(trace: list, system: ChcSystem, cfg: SolveConfig, C: float = 0.5) -> dict:
    """Per-iteration table plus a non-binding iteration ceiling derived from
    the refinement schedule, using bounding-box counts as lattice estimates."""
    if not 0 < C < 1:
        raise ValueError("C must lie in (0, 1)")
    n = system.dim
    lam = max(_box_volume(system.pre, system), _box_volume(system.guard, system),
              _box_volume(negate_dnf(system.post), system), 1)
    inner = float(cfg.eps0) * n ** n * ((1 + C / n ** (2 - 2 / (n + 1))) / (1 - C)) * lam
    ceiling = max(0.0, cfg.t_refine * math.log2(inner))
    rows = [{k: r.get(k) for k in ("iteration", "epsilon", "dataset", "cex", "kappa_inf",
                                   "lambda", "sa_steps", "seconds")} for r in trace]
    return {"rows": rows, "lattice_estimate": lam, "C": C, "iteration_ceiling": ceiling,
            "binding": False}
