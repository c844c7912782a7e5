"""Linear integer arithmetic over a bounded integer box.

States are plain tuples of Python ints, so every dot product is exact no
matter how large the coefficients or the box get. Formulas are immutable
dataclasses:

    LinearPredicate   w . x <= b
    Cube              conjunction of predicates (empty cube == true)
    DnfFormula        disjunction of cubes (no cubes == false)

A transition relation is a list of guarded blocks, each carrying one or
more integer affine maps; a head fires every map of every block whose guard
holds at it.
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np

log = logging.getLogger(__name__)

State = tuple[int, ...]
Pair = tuple[State, State]

DEFAULT_NEGATION_CAP = 4096
DEFAULT_FRONTIER_CAP = 1_000_000


class DimensionMismatch(ValueError):
    pass


class NegationTooLarge(RuntimeError):
    """Raised when a DNF negation would exceed the configured cube cap."""


class FrontierTooLarge(RuntimeError):
    pass


@dataclass(frozen=True)
class StateSpace:
    dim: int
    int_bound: int

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("state space needs at least one variable")
        if self.int_bound < 1:
            raise ValueError("int_bound must be positive")

    @property
    def lo(self) -> int:
        return -self.int_bound - 1

    @property
    def hi(self) -> int:
        return self.int_bound

    @property
    def radius(self) -> float:
        """Strict upper bound on the L2 norm of any state in the box."""
        return math.sqrt(self.dim) * (self.int_bound + 1)

    @property
    def cardinality(self) -> int:
        return (self.hi - self.lo + 1) ** self.dim

    def contains(self, state: Sequence[int]) -> bool:
        lo, hi = self.lo, self.hi
        return len(state) == self.dim and all(lo <= v <= hi for v in state)

    def states(self) -> Iterable[State]:
        """Every lattice point of the box, in lexicographic order."""
        return itertools.product(range(self.lo, self.hi + 1), repeat=self.dim)


@dataclass(frozen=True, order=True)
class LinearPredicate:
    coeffs: tuple[int, ...]
    bound: int

    def __post_init__(self):
        object.__setattr__(self, "coeffs", tuple(int(c) for c in self.coeffs))
        object.__setattr__(self, "bound", int(self.bound))

    @property
    def dim(self) -> int:
        return len(self.coeffs)

    def lhs(self, state: Sequence[int]) -> int:
        if len(state) != len(self.coeffs):
            raise DimensionMismatch(
                f"predicate has {len(self.coeffs)} coefficients, state has {len(state)}")
        return sum(w * x for w, x in zip(self.coeffs, state))

    def holds(self, state: Sequence[int]) -> bool:
        return self.lhs(state) <= self.bound

    def negate(self) -> LinearPredicate:
        # over the integers, not(w.x <= b) is w.x >= b + 1
        return LinearPredicate(tuple(-w for w in self.coeffs), -self.bound - 1)


@dataclass(frozen=True)
class Cube:
    predicates: tuple[LinearPredicate, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "predicates", tuple(self.predicates))

    def holds(self, state: Sequence[int]) -> bool:
        return all(p.holds(state) for p in self.predicates)

    def canonical(self) -> Cube:
        return Cube(tuple(sorted(set(self.predicates))))

    def __len__(self):
        return len(self.predicates)

    def __iter__(self):
        return iter(self.predicates)


@dataclass(frozen=True)
class DnfFormula:
    cubes: tuple[Cube, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "cubes", tuple(self.cubes))

    @classmethod
    def true(cls) -> DnfFormula:
        return cls((Cube(()),))

    @classmethod
    def false(cls) -> DnfFormula:
        return cls(())

    @classmethod
    def from_lists(cls, cubes) -> DnfFormula:
        """Build from nested lists ``[[(coeffs, bound), ...], ...]``."""
        return cls(tuple(Cube(tuple(LinearPredicate(tuple(w), b) for w, b in cube))
                         for cube in cubes))

    @property
    def shape(self) -> tuple[int, int]:
        """``(d, c)``: number of cubes and the longest cube length."""
        return len(self.cubes), max((len(c) for c in self.cubes), default=0)

    def dims(self) -> set[int]:
        return {p.dim for c in self.cubes for p in c}

    def holds(self, state: Sequence[int]) -> bool:
        return any(c.holds(state) for c in self.cubes)

    def canonical(self) -> DnfFormula:
        cubes = {c.canonical() for c in self.cubes}
        return DnfFormula(tuple(sorted(cubes, key=_cube_key)))

    def __len__(self):
        return len(self.cubes)

    def __iter__(self):
        return iter(self.cubes)


def _cube_key(cube: Cube):
    return tuple((p.coeffs, p.bound) for p in cube)


def eval_dnf(formula: DnfFormula, state: Sequence[int]) -> bool:
    dims = formula.dims()
    if dims and dims != {len(state)}:
        raise DimensionMismatch(f"formula dims {sorted(dims)} vs state length {len(state)}")
    return formula.holds(state)


def negate_dnf(formula: DnfFormula, cap: int = DEFAULT_NEGATION_CAP) -> DnfFormula:
    """Pointwise integer complement of ``formula`` as a DNF.

    De Morgan turns the negated disjunction into a conjunction of clauses;
    distributing gives one cube per choice of a negated predicate from each
    original cube. Duplicate predicates and cubes are removed.
    """
    clauses = [sorted({p.negate() for p in cube}) for cube in formula.cubes]
    size = math.prod(len(c) for c in clauses)
    if size > cap:
        raise NegationTooLarge(f"negation would produce {size} cubes (cap {cap})")
    if not clauses:
        return DnfFormula.true()
    cubes = {Cube(tuple(sorted(set(choice)))) for choice in itertools.product(*clauses)}
    return DnfFormula(tuple(sorted(cubes, key=_cube_key)))


@dataclass(frozen=True)
class LinearMap:
    matrix: tuple[tuple[int, ...], ...]
    offset: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "matrix", tuple(tuple(int(v) for v in row) for row in self.matrix))
        object.__setattr__(self, "offset", tuple(int(v) for v in self.offset))
        n = len(self.offset)
        if len(self.matrix) != n or any(len(row) != n for row in self.matrix):
            raise DimensionMismatch("linear map must be n x n with an offset of length n")

    @property
    def dim(self) -> int:
        return len(self.offset)

    def __call__(self, state: Sequence[int]) -> State:
        if len(state) != self.dim:
            raise DimensionMismatch(f"map of dim {self.dim} applied to state of length {len(state)}")
        return tuple(sum(a * x for a, x in zip(row, state)) + o
                     for row, o in zip(self.matrix, self.offset))


@dataclass(frozen=True)
class TransitionBlock:
    guard: DnfFormula
    maps: tuple[LinearMap, ...]

    def __post_init__(self):
        object.__setattr__(self, "maps", tuple(self.maps))
        if not self.maps:
            raise ValueError("a transition block needs at least one map")


@dataclass(frozen=True)
class TransitionRelation:
    blocks: tuple[TransitionBlock, ...]

    def __post_init__(self):
        object.__setattr__(self, "blocks", tuple(self.blocks))

    @property
    def shape(self) -> dict[str, int]:
        guard_shapes = [b.guard.shape for b in self.blocks]
        return {
            "d_T": len(self.blocks),
            "r_T": max((len(b.maps) for b in self.blocks), default=0),
            "d_BT": max((s[0] for s in guard_shapes), default=0),
            "c_BT": max((s[1] for s in guard_shapes), default=0),
        }


@dataclass(frozen=True)
class ChcSystem:
    space: StateSpace
    pre: DnfFormula
    guard: DnfFormula
    trans: TransitionRelation
    post: DnfFormula

    def __post_init__(self):
        n = self.space.dim
        for name in ("pre", "guard", "post"):
            dims = getattr(self, name).dims()
            if dims and dims != {n}:
                raise DimensionMismatch(f"{name} has dims {sorted(dims)}, expected {n}")
        for block in self.trans.blocks:
            if any(m.dim != n for m in block.maps) or (block.guard.dims() - {n}):
                raise DimensionMismatch("transition block dimension mismatch")

    @property
    def dim(self) -> int:
        return self.space.dim


def apply_transition(trans: TransitionRelation, head: Sequence[int],
                     space: StateSpace | None = None, stats: dict | None = None) -> set[State]:
    """All tails of ``head`` under one application of ``trans``.

    Tails outside ``space`` are dropped; when ``stats`` is given, the number
    dropped is added to ``stats["clipped"]``.
    """
    tails: set[State] = set()
    clipped = 0
    for block in trans.blocks:
        if not block.guard.holds(head):
            continue
        for m in block.maps:
            tail = m(head)
            if space is not None and not space.contains(tail):
                clipped += 1
                continue
            tails.add(tail)
    if clipped:
        if stats is not None:
            stats["clipped"] = stats.get("clipped", 0) + clipped
        log.debug("dropped %d out-of-box tails of %s", clipped, tuple(head))
    return tails


def iterated_tails(trans: TransitionRelation, guard: DnfFormula, states: Iterable[Sequence[int]],
                   depth: int, space: StateSpace | None = None,
                   cap: int = DEFAULT_FRONTIER_CAP) -> set[State]:
    """Tails reached after exactly ``depth`` guarded applications of ``trans``."""
    if depth < 1:
        raise ValueError("depth must be >= 1")
    frontier = {tuple(s) for s in states}
    for _ in range(depth):
        nxt: set[State] = set()
        for s in frontier:
            if guard.holds(s):
                nxt |= apply_transition(trans, s, space)
            if len(nxt) > cap:
                raise FrontierTooLarge(f"frontier exceeded {cap} states")
        frontier = nxt
    return frontier


def dnf_mask(formula: DnfFormula, points: np.ndarray) -> np.ndarray:
    """Vectorized evaluation of a DNF over the rows of an integer array."""
    out = np.zeros(len(points), dtype=bool)
    for cube in formula:
        sat = np.ones(len(points), dtype=bool)
        for p in cube:
            sat &= points @ np.asarray(p.coeffs, dtype=points.dtype) <= p.bound
        out |= sat
    return out


def box_chunks(space: StateSpace, chunk: int = 1 << 20):
    axis = np.arange(space.lo, space.hi + 1, dtype=np.int64)
    total = space.cardinality
    width = len(axis)
    for start in range(0, total, chunk):
        idx = np.arange(start, min(start + chunk, total), dtype=np.int64)
        cols = []
        for _ in range(space.dim):
            cols.append(axis[idx % width])
            idx = idx // width
        yield np.stack(cols[::-1], axis=1)


@dataclass(frozen=True)
class Dataset:
    plus: frozenset = field(default_factory=frozenset)
    minus: frozenset = field(default_factory=frozenset)
    implications: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        object.__setattr__(self, "plus", frozenset(tuple(p) for p in self.plus))
        object.__setattr__(self, "minus", frozenset(tuple(p) for p in self.minus))
        object.__setattr__(self, "implications",
                           frozenset((tuple(h), tuple(t)) for h, t in self.implications))

    @property
    def sizes(self) -> dict[str, int]:
        return {"plus": len(self.plus), "implications": len(self.implications),
                "minus": len(self.minus)}

    def __len__(self):
        return len(self.plus) + len(self.minus) + len(self.implications)

    def issubset(self, other: Dataset) -> bool:
        return (self.plus <= other.plus and self.minus <= other.minus
                and self.implications <= other.implications)

    def union(self, other) -> Dataset:
        return Dataset(self.plus | other.plus, self.minus | other.minus,
                       self.implications | other.implications)


@dataclass(frozen=True)
class DatasetStats:
    kappa_inf: Fraction
    lambda_arrow: float


def _linf(v: Sequence[int]) -> int:
    return max((abs(x) for x in v), default=0)


def _mean(values: list) -> Fraction:
    return Fraction(sum(values), len(values)) if values else Fraction(0)


def dataset_stats(data: Dataset) -> DatasetStats:
    """Averaged L-infinity size of the dataset and mean implication length."""
    plus = _mean([_linf(p) for p in data.plus])
    arrow = _mean([max(_linf(h), _linf(t)) for h, t in data.implications])
    minus = _mean([_linf(p) for p in data.minus])
    kappa = (plus + arrow + minus) / 3
    if data.implications:
        lengths = [math.sqrt(sum((a - b) ** 2 for a, b in zip(h, t)))
                   for h, t in data.implications]
        lam = math.fsum(lengths) / len(lengths)
    else:
        lam = 0.0
    return DatasetStats(kappa, lam)
