"""Uniform lattice-point sampling from cubes and epsilon-net datasets."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .diophantine import (NoIntegerSolution, exact_bounds, integer_solution_lattice, lp_bounds)
from .lia import (ChcSystem, Cube, Dataset, DnfFormula, LinearPredicate, StateSpace, apply_transition,
                  negate_dnf)

log = logging.getLogger(__name__)

DEFAULT_RETRY_BUDGET = 1_000_000
_INT64_SAFE = 1 << 62


class EmptyRegion(ValueError):
    """The cube has no point in the state box (its relaxation is infeasible)."""


class SamplingBudgetExceeded(RuntimeError):
    def __init__(self, tries: int, bbox_size: int):
        self.tries = tries
        self.bbox_size = bbox_size
        super().__init__(
            f"no lattice point accepted after {tries} draws from a box of {bbox_size} points; "
            f"acceptance rate below {1 / tries:.2e}")


def to_fraction(x) -> Fraction:
    if isinstance(x, float):
        return Fraction(repr(x))
    return Fraction(x)


@dataclass(frozen=True)
class NetParams:
    epsilon: Fraction
    delta: Fraction
    vc: int

    def __post_init__(self):
        object.__setattr__(self, "epsilon", to_fraction(self.epsilon))
        object.__setattr__(self, "delta", to_fraction(self.delta))
        if not 0 < self.epsilon <= 1 or not 0 < self.delta < 1:
            raise ValueError("need 0 < epsilon <= 1 and 0 < delta < 1")
        if self.vc < 0:
            raise ValueError("vc must be nonnegative")


@dataclass(frozen=True)
class Hyperrectangle:
    lo: tuple[int, ...]
    hi: tuple[int, ...]

    @property
    def size(self) -> int:
        return math.prod(h - l + 1 for l, h in zip(self.lo, self.hi))


@dataclass(frozen=True)
class DiophantineSystem:
    A: tuple[tuple[int, ...], ...]
    B: tuple[int, ...]
    box: Hyperrectangle | None = None


def ellipsoid_vc(n: int) -> int:
    return (n * n + 3 * n) // 2


def phi(d: int, m: int) -> int:
    if d > m:
        return 2 ** m
    return sum(math.comb(m, i) for i in range(d + 1))


def epsilon_net_size(p: NetParams) -> int:
    """Smallest m >= ceil(8/eps) whose epsilon-net success bound exceeds delta.

    The exponent eps*m/2 is floored, which can only make m larger.
    """
    eps, delta = p.epsilon, p.delta
    m = math.ceil(8 / eps)
    while True:
        e = math.floor(eps * m / 2)
        # 1 - 2 phi 2^-e > delta  <=>  2 phi < (1 - delta) 2^e
        if 2 * phi(p.vc, 2 * m) < (1 - delta) * (1 << e):
            return m
        m += 1


def refine_criterion(t: int, t_refine: int) -> bool:
    if t < 1 or t_refine < 1:
        raise ValueError("t and t_refine must be positive")
    return t % t_refine == 0


# ---------------------------------------------------------------------------
# polytope geometry

def _constraints(cube: Cube, space: StateSpace):
    n = space.dim
    G = [p.coeffs for p in cube]
    h = [p.bound for p in cube]
    for i in range(n):
        e = tuple(int(j == i) for j in range(n))
        G += [e, tuple(-v for v in e)]
        h += [space.hi, -space.lo]
    return G, h


def bounding_box(cube: Cube, space: StateSpace) -> Hyperrectangle:
    """Integer box holding every lattice point of ``cube`` inside ``space``."""
    G, h = _constraints(cube, space)
    n = space.dim
    try:
        b = exact_bounds(G, h, n)
        if b is None:
            raise EmptyRegion("cube relaxation is empty inside the state box")
        lo = [math.ceil(l) for l, _ in b]
        hi = [math.floor(u) for _, u in b]
    except OverflowError:
        b = lp_bounds(G, h, n)
        if b is None:
            raise EmptyRegion("cube relaxation is empty inside the state box") from None
        # float LP result, widen by a unit to stay sound
        lo = [max(space.lo, math.floor(l) - 1) for l, _ in b]
        hi = [min(space.hi, math.ceil(u) + 1) for _, u in b]
    if any(l > u for l, u in zip(lo, hi)):
        raise EmptyRegion("cube has no lattice point inside the state box")
    return Hyperrectangle(tuple(lo), tuple(hi))


def is_affine_contained(cube: Cube) -> DiophantineSystem | None:
    """Collect syntactic equality pairs ``w.x <= b, -w.x <= -b`` of ``cube``."""
    preds = set(cube.predicates)
    A, B = [], []
    for p in sorted(preds):
        mirror = LinearPredicate(tuple(-w for w in p.coeffs), -p.bound)
        if any(p.coeffs) and p.coeffs > mirror.coeffs and mirror in preds:
            A.append(p.coeffs)
            B.append(p.bound)
    if not A:
        return None
    return DiophantineSystem(tuple(A), tuple(B))


class _Checker:
    """Vectorized cube membership for rows of an int64 array."""

    def __init__(self, cube: Cube, n: int):
        self.W = np.array([p.coeffs for p in cube], dtype=np.int64).reshape(len(cube), n)
        self.b = np.array([p.bound for p in cube], dtype=np.int64)

    def __call__(self, pts: np.ndarray) -> np.ndarray:
        if not len(self.b):
            return np.ones(len(pts), dtype=bool)
        return np.all(pts @ self.W.T <= self.b, axis=1)


class CubeSampler:
    """Uniform sampler over the lattice points of ``cube`` inside ``space``.

    When the cube pins down an affine subspace through equality pairs, points
    are drawn in the coordinates of the integer solution lattice; otherwise by
    rejection from the cube's bounding box.
    """

    def __init__(self, cube: Cube, space: StateSpace, budget: int = DEFAULT_RETRY_BUDGET):
        self.cube = cube
        self.space = space
        self.budget = budget
        self.x0 = np.zeros(space.dim, dtype=np.int64)
        self.V = np.eye(space.dim, dtype=np.int64)
        dio = is_affine_contained(cube)
        if dio is not None:
            x0, basis = integer_solution_lattice(dio.A, dio.B)
            self.x0 = np.array(x0, dtype=object)
            self.V = np.array(basis, dtype=object).reshape(len(basis), space.dim).T
            self.alpha_box = self._alpha_box()
            self.diophantine = True
        else:
            self.alpha_box = bounding_box(cube, space)
            self.diophantine = False
        mag = max([abs(v) for p in cube for v in p.coeffs] + [1]) * (space.int_bound + 1) * space.dim
        mag += max([abs(p.bound) for p in cube] + [0])
        if mag >= _INT64_SAFE or self.alpha_box.size >= _INT64_SAFE:
            raise OverflowError("cube magnitudes exceed 64-bit sampling range")
        self.x0 = self.x0.astype(np.int64)
        self.V = self.V.astype(np.int64)
        self.check = _Checker(cube, space.dim)
        self.box_lo = np.array(self.alpha_box.lo, dtype=np.int64)
        self.box_hi = np.array(self.alpha_box.hi, dtype=np.int64)
        self.tries = 0

    def _alpha_box(self) -> Hyperrectangle:
        k = self.V.shape[1]
        n = self.space.dim
        if k == 0:
            x = [int(v) for v in self.x0]
            if not (self.space.contains(x) and self.cube.holds(x)):
                raise EmptyRegion("the unique integer solution lies outside the region")
            return Hyperrectangle((), ())
        # substitute x = x0 + V a into the cube and box constraints
        G, h = _constraints(self.cube, self.space)
        Ga, ha = [], []
        for g, b in zip(G, h):
            row = tuple(int(sum(g[i] * self.V[i, j] for i in range(n))) for j in range(k))
            rhs = b - int(sum(g[i] * self.x0[i] for i in range(n)))
            if any(row):
                Ga.append(row)
                ha.append(rhs)
            elif rhs < 0:
                raise EmptyRegion("affine subspace misses the region")
        try:
            bounds = exact_bounds(Ga, ha, k)
        except OverflowError:
            bounds = lp_bounds(Ga, ha, k)
            if bounds is not None:
                bounds = [(math.floor(l) - 1, math.ceil(u) + 1) for l, u in bounds]
        if bounds is None:
            raise EmptyRegion("no in-box solution: coefficient range is empty")
        lo = tuple(math.ceil(l) for l, _ in bounds)
        hi = tuple(math.floor(u) for _, u in bounds)
        if any(l > u for l, u in zip(lo, hi)):
            raise EmptyRegion("no in-box solution: coefficient range has no integer")
        return Hyperrectangle(lo, hi)

    def _accept(self, pts):
        inbox = np.all((pts >= self.space.lo) & (pts <= self.space.hi), axis=1)
        return inbox & self.check(pts)

    def draw(self, rng: np.random.Generator) -> tuple[int, ...]:
        used = 0
        batch = 64
        while used < self.budget:
            size = min(batch, self.budget - used)
            a = rng.integers(self.box_lo, self.box_hi, size=(size, len(self.box_lo)), endpoint=True)
            pts = self.x0 + a @ self.V.T if self.diophantine else a
            ok = np.flatnonzero(self._accept(pts))
            if len(ok):
                first = int(ok[0])
                used += first + 1
                self.tries += used
                return tuple(int(v) for v in pts[first])
            used += size
            batch = min(batch * 4, 1 << 16)
        self.tries += used
        raise SamplingBudgetExceeded(used, self.alpha_box.size)

    def draw_many(self, rng: np.random.Generator, m: int) -> list[tuple[int, ...]]:
        return [self.draw(rng) for _ in range(m)]


def diophantine_sample(system: DiophantineSystem, rng: np.random.Generator,
                       budget: int = DEFAULT_RETRY_BUDGET) -> tuple[int, ...]:
    """Uniform integer solution of ``A x = B`` inside ``system.box``."""
    if system.box is None:
        raise ValueError("diophantine_sample needs a box")
    lo, hi = system.box.lo, system.box.hi
    preds = []
    for w, b in zip(system.A, system.B):
        preds += [LinearPredicate(w, b), LinearPredicate(tuple(-v for v in w), -b)]
    n = len(lo)
    for i in range(n):
        e = tuple(int(j == i) for j in range(n))
        preds += [LinearPredicate(e, hi[i]), LinearPredicate(tuple(-v for v in e), -lo[i])]
    bound = max(max(abs(v) for v in lo), max(abs(v) for v in hi), 1)
    space = StateSpace(n, bound)
    return CubeSampler(Cube(tuple(preds)), space, budget).draw(rng)


def uniform_sample_polytope(cube: Cube, space: StateSpace, rng: np.random.Generator,
                            budget: int = DEFAULT_RETRY_BUDGET, stats: dict | None = None):
    sampler = CubeSampler(cube, space, budget)
    try:
        return sampler.draw(rng)
    finally:
        if stats is not None:
            stats["tries"] = stats.get("tries", 0) + sampler.tries
            stats["bbox_size"] = sampler.alpha_box.size


# ---------------------------------------------------------------------------
# nets and datasets

def _net_draws(formula: DnfFormula, space: StateSpace, rng, m: int) -> set:
    out = set()
    for j, cube in enumerate(formula):
        try:
            sampler = CubeSampler(cube, space)
        except (EmptyRegion, NoIntegerSolution) as e:
            log.warning("skipping empty cube %d: %s", j, e)
            continue
        pts = sampler.draw_many(rng, m)
        log.debug("cube %d: %d draws, %d tries", j, m, sampler.tries)
        out.update(pts)
    return out


def randomized_epsilon_net(formula: DnfFormula, p: NetParams, space: StateSpace,
                           rng: np.random.Generator) -> set:
    return _net_draws(formula, space, rng, epsilon_net_size(p))


def _with_tails(system: ChcSystem, heads) -> set:
    pairs = set()
    stats: dict = {}
    for h in sorted(heads):
        for t in apply_transition(system.trans, h, system.space, stats):
            pairs.add((h, t))
    if stats.get("clipped"):
        log.info("%d sampled tails fell outside the state box", stats["clipped"])
    return pairs


def _draw_classes(system: ChcSystem, neg_post: DnfFormula, rng, m: int) -> Dataset:
    plus = _net_draws(system.pre, system.space, rng, m)
    heads = _net_draws(system.guard, system.space, rng, m)
    minus = _net_draws(neg_post, system.space, rng, m)
    return Dataset(plus, minus, _with_tails(system, heads))


def initial_dataset(system: ChcSystem, eps0, delta0, rng: np.random.Generator) -> Dataset:
    p = NetParams(eps0, delta0, ellipsoid_vc(system.dim))
    return _draw_classes(system, negate_dnf(system.post), rng, epsilon_net_size(p))


def refined_dataset(system: ChcSystem, current_eps, delta0, existing: Dataset,
                    rng: np.random.Generator) -> tuple[Dataset, Fraction]:
    """Halve epsilon and append the extra draws the smaller net needs."""
    current_eps = to_fraction(current_eps)
    if current_eps <= 0:
        raise ValueError("epsilon must be positive")
    new_eps = current_eps / 2
    vc = ellipsoid_vc(system.dim)
    extra = (epsilon_net_size(NetParams(new_eps, delta0, vc))
             - epsilon_net_size(NetParams(current_eps, delta0, vc)))
    fresh = _draw_classes(system, negate_dnf(system.post), rng, extra)
    return existing.union(fresh), new_eps
