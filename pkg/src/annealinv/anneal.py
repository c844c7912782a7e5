"""Simulated annealing over d-cube, c-predicate candidate invariants.

A candidate is held as integer arrays ``W`` of shape (d, c, n) and ``b`` of
shape (d, c). The cost keeps, for every datapoint and predicate, the exact
integer residual ``w.s - b`` so a move touching one predicate only updates
one column.
"""

from __future__ import annotations

import logging
import math
import multiprocessing as mp
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .lia import Cube, Dataset, DnfFormula, LinearPredicate, StateSpace, negate_dnf

log = logging.getLogger(__name__)

RECOMPUTE_EVERY = 10_000
TEMP_ITER_CAP = 1000


@dataclass(frozen=True)
class SearchSpaceParams:
    n: int
    c: int
    d: int
    k: int
    k_prime: int

    @classmethod
    def for_space(cls, space: StateSpace, c: int, d: int, k: int) -> SearchSpaceParams:
        # k * sqrt(n) * rho with rho = sqrt(n) (int_bound + 1) is an exact integer
        return cls(space.dim, c, d, k, k * space.dim * (space.int_bound + 1))

    @property
    def move_count(self) -> int:
        return self.c * self.d * (2 * self.n + 2)


@dataclass(frozen=True)
class CandidateInvariant:
    W: tuple  # d x c x n nested tuples
    b: tuple  # d x c nested tuples

    @classmethod
    def from_arrays(cls, W: np.ndarray, b: np.ndarray) -> CandidateInvariant:
        return cls(tuple(tuple(tuple(int(v) for v in w) for w in cube) for cube in W),
                   tuple(tuple(int(v) for v in cube) for cube in b))

    def arrays(self) -> tuple[np.ndarray, np.ndarray]:
        return np.array(self.W, dtype=np.int64), np.array(self.b, dtype=np.int64)

    @property
    def shape(self) -> tuple[int, int, int]:
        return len(self.W), len(self.W[0]), len(self.W[0][0])

    def to_dnf(self) -> DnfFormula:
        return DnfFormula(tuple(
            Cube(tuple(LinearPredicate(w, bb) for w, bb in zip(ws, bs)))
            for ws, bs in zip(self.W, self.b)))

    def in_space(self, params: SearchSpaceParams) -> bool:
        d, c, n = self.shape
        if (d, c, n) != (params.d, params.c, params.n):
            return False
        for ws, bs in zip(self.W, self.b):
            for w, bb in zip(ws, bs):
                if not any(w) or max(abs(v) for v in w) > params.k or abs(bb) > params.k_prime:
                    return False
        return True

    def project(self, params: SearchSpaceParams) -> CandidateInvariant:
        """Clip coefficients and constants into X(k)."""
        W, b = self.arrays()
        W = np.clip(W, -params.k, params.k)
        b = np.clip(b, -params.k_prime, params.k_prime)
        return CandidateInvariant.from_arrays(W, b)


@dataclass(frozen=True)
class AnnealConfig:
    t_max: int = 200_000
    t_check: int = 1000
    a0: float = 0.35
    eps_T: float = 1e-3
    t_rw: int = 500
    l0: int = 32
    alpha: float = 50.0
    beta: float = 2.0
    workers: int = 4
    k_list: tuple = (1, 2, 3, 5)
    parallel: str = "process"  # or "serial"

    def __post_init__(self):
        object.__setattr__(self, "k_list", tuple(int(k) for k in self.k_list))
        if len(self.k_list) != self.workers:
            raise ValueError("k_list must have one entry per worker")
        if not (self.alpha > 1 and self.beta >= 1):
            raise ValueError("need alpha > 1 and beta >= 1")
        if not 0 < self.a0 < 1:
            raise ValueError("a0 must lie in (0, 1)")
        if self.parallel not in ("process", "serial"):
            raise ValueError("parallel must be 'process' or 'serial'")


@dataclass(frozen=True)
class TransitionSample:
    cost_before: float
    cost_after: float


# ---------------------------------------------------------------------------
# distances and cost

def normalizer(x, alpha: float, beta: float):
    """Linear up to ``alpha``, then a sigmoid tail with limit alpha/beta + 1."""
    x = np.asarray(x, dtype=float)
    with np.errstate(over="ignore"):
        tail = alpha / beta - 1 + 2 / (1 + np.exp(-2 * (x - alpha) / beta))
    out = np.where(x <= alpha, x / beta, tail)
    return float(out) if out.ndim == 0 else out


def _pred_dist(p: LinearPredicate, s) -> float:
    v = p.lhs(s) - p.bound
    if v <= 0:
        return 0.0
    return v / math.sqrt(sum(w * w for w in p.coeffs))


def delta_approx(inv, s) -> float:
    """Cube-minimum of the mean normalized violation of each predicate."""
    if isinstance(inv, CandidateInvariant):
        inv = inv.to_dnf()
    best = math.inf
    for cube in inv:
        if not len(cube):
            return 0.0
        best = min(best, sum(_pred_dist(p, s) for p in cube) / len(cube))
    return best


def _mean(values) -> float:
    values = list(values)
    return math.fsum(values) / len(values) if values else 0.0


def cost_dnf(inv: DnfFormula, data: Dataset, alpha: float, beta: float) -> float:
    """Cost of an arbitrary DNF, using an explicit ``negate_dnf`` of it."""
    neg = negate_dnf(inv)

    def F(v):
        return normalizer(v, alpha, beta)

    plus = _mean(F(delta_approx(inv, p)) for p in sorted(data.plus))
    arrow = _mean(min(F(delta_approx(neg, h)), F(delta_approx(inv, t)))
                  for h, t in sorted(data.implications))
    minus = _mean(F(delta_approx(neg, q)) for q in sorted(data.minus))
    return (plus + arrow + minus) / 3


def satisfies_dataset(inv: DnfFormula, data: Dataset) -> bool:
    """Direct evaluation of the three approximate clauses."""
    return (all(inv.holds(p) for p in data.plus)
            and all((not inv.holds(h)) or inv.holds(t) for h, t in data.implications)
            and not any(inv.holds(q) for q in data.minus))


class CostModel:
    """Vectorized cost of candidates against a fixed dataset.

    ``XI`` stacks the points whose distance to I matters (plus, tails) and
    ``XN`` those whose distance to the negation matters (heads, minus).
    For a d x c candidate the negation is the product of negated predicates,
    so its distance separates as (1/d) sum_j min_i (1 - (w_ji.s - b_ji))+ / |w_ji|.
    """

    def __init__(self, data: Dataset, n: int, alpha: float, beta: float):
        self.alpha, self.beta = alpha, beta
        plus = sorted(data.plus)
        pairs = sorted(data.implications)
        minus = sorted(data.minus)
        self.nP, self.nH, self.nN = len(plus), len(pairs), len(minus)

        def arr(rows):
            return np.array(rows, dtype=np.int64).reshape(len(rows), n)

        self.XI = np.vstack([arr(plus), arr([t for _, t in pairs])])
        self.XN = np.vstack([arr([h for h, _ in pairs]), arr(minus)])
        self.n = n

    def F(self, x):
        a, bt = self.alpha, self.beta
        out = x / bt
        big = x > a
        if big.any():
            with np.errstate(over="ignore"):
                out[big] = a / bt - 1 + 2 / (1 + np.exp(-2 * (x[big] - a) / bt))
        return out

    def combine(self, dI: np.ndarray, dN: np.ndarray) -> float:
        nP, nH, nN = self.nP, self.nH, self.nN
        fI = self.F(dI)
        fN = self.F(dN)
        plus = fI[:nP].sum() / nP if nP else 0.0
        arrow = np.minimum(fN[:nH], fI[nP:]).sum() / nH if nH else 0.0
        minus = fN[nH:].sum() / nN if nN else 0.0
        return float((plus + arrow + minus) / 3)

    def exact_zero(self, rawI: np.ndarray, rawN: np.ndarray, d: int, c: int) -> bool:
        inI = (rawI.reshape(-1, d, c) <= 0).all(axis=2).any(axis=1)
        inN = (rawN.reshape(-1, d, c) <= 0).all(axis=2).any(axis=1)
        nP, nH = self.nP, self.nH
        return bool(inI[:nP].all() and (~inN[:nH] | inI[nP:]).all() and not inN[nH:].any())


def cost(inv, data: Dataset, alpha: float, beta: float) -> float:
    """Cost of a candidate; zero exactly when it satisfies the dataset."""
    if isinstance(inv, DnfFormula):
        return cost_dnf(inv, data, alpha, beta)
    d, c, n = inv.shape
    state = _State(CostModel(data, n, alpha, beta), *inv.arrays())
    return state.cost


class _State:
    """Current candidate plus cached residual columns."""

    def __init__(self, model: CostModel, W: np.ndarray, b: np.ndarray):
        self.m = model
        self.W = W.copy()
        self.b = b.copy()
        self.d, self.c, self.n = W.shape
        self.recompute()

    def recompute(self):
        Wf = self.W.reshape(-1, self.n)
        bf = self.b.reshape(-1)
        self.norm = np.sqrt((Wf.astype(float) ** 2).sum(axis=1))
        self.rawI = self.m.XI @ Wf.T - bf
        self.rawN = self.m.XN @ Wf.T - bf
        self.posI = np.maximum(self.rawI, 0) / self.norm
        self.negN = np.maximum(1 - self.rawN, 0) / self.norm
        self.cost = self._cost()

    def _cost(self) -> float:
        d, c = self.d, self.c
        dI = self.posI.reshape(-1, d, c).sum(axis=2).min(axis=1) / c
        dN = self.negN.reshape(-1, d, c).min(axis=2).sum(axis=1) / d
        value = self.m.combine(dI, dN)
        if value == 0.0 or value < 1e-12:
            return 0.0 if self.m.exact_zero(self.rawI, self.rawN, d, c) else max(value, 1e-300)
        return value

    def try_move(self, move) -> float:
        """Apply ``move`` tentatively and return the new cost."""
        j, i, kind, coord, step = move
        q = j * self.c + i
        self._saved = (q, self.rawI[:, q].copy(), self.rawN[:, q].copy(), self.posI[:, q].copy(),
                       self.negN[:, q].copy(), self.norm[q], self.W[j, i].copy(), self.b[j, i],
                       self.cost)
        if kind == 0:
            self.W[j, i, coord] += step
            self.rawI[:, q] += step * self.m.XI[:, coord]
            self.rawN[:, q] += step * self.m.XN[:, coord]
            w = self.W[j, i]
            self.norm[q] = math.sqrt(float(w @ w))
        else:
            self.b[j, i] += step
            self.rawI[:, q] -= step
            self.rawN[:, q] -= step
        nq = self.norm[q]
        self.posI[:, q] = np.maximum(self.rawI[:, q], 0) / nq
        self.negN[:, q] = np.maximum(1 - self.rawN[:, q], 0) / nq
        self.cost = self._cost()
        return self.cost

    def revert(self):
        q, rI, rN, pI, nN, nq, w, bb, cst = self._saved
        self.rawI[:, q] = rI
        self.rawN[:, q] = rN
        self.posI[:, q] = pI
        self.negN[:, q] = nN
        self.norm[q] = nq
        j, i = divmod(q, self.c)
        self.W[j, i] = w
        self.b[j, i] = bb
        self.cost = cst

    def candidate(self) -> CandidateInvariant:
        return CandidateInvariant.from_arrays(self.W, self.b)


# ---------------------------------------------------------------------------
# moves

def legal_moves(W: np.ndarray, b: np.ndarray, params: SearchSpaceParams) -> list:
    """All legal moves as ``(cube, pred, kind, coord, step)``; kind 0 changes a
    coefficient, kind 1 the constant."""
    out = []
    d, c, n = W.shape
    for j in range(d):
        for i in range(c):
            _pred_moves(W[j, i], int(b[j, i]), params, j, i, out)
    return out


def _pred_moves(w, bb, params, j, i, out):
    for coord in range(len(w)):
        for step in (1, -1):
            v = int(w[coord]) + step
            if abs(v) > params.k:
                continue
            if v == 0 and all(int(w[t]) == 0 for t in range(len(w)) if t != coord):
                continue
            out.append((j, i, 0, coord, step))
    for step in (1, -1):
        if abs(bb + step) <= params.k_prime:
            out.append((j, i, 1, 0, step))


def _is_legal(W, b, params, move) -> bool:
    j, i, kind, coord, step = move
    if kind == 1:
        return abs(int(b[j, i]) + step) <= params.k_prime
    w = W[j, i]
    v = int(w[coord]) + step
    if abs(v) > params.k:
        return False
    if v == 0:
        return bool(np.any(np.delete(w, coord)))
    return True


def _draw_move(W, b, params: SearchSpaceParams, rng: np.random.Generator):
    """Uniform legal move, by rejection over all d*c*(2n+2) move slots."""
    n = params.n
    per = 2 * n + 2
    while True:
        slot = int(rng.integers(params.move_count))
        q, r = divmod(slot, per)
        j, i = divmod(q, params.c)
        if r < 2 * n:
            move = (j, i, 0, r // 2, 1 if r % 2 == 0 else -1)
        else:
            move = (j, i, 1, 0, 1 if r == 2 * n else -1)
        if _is_legal(W, b, params, move):
            return move


def apply_move(inv: CandidateInvariant, move) -> CandidateInvariant:
    W, b = inv.arrays()
    j, i, kind, coord, step = move
    if kind == 0:
        W[j, i, coord] += step
    else:
        b[j, i] += step
    return CandidateInvariant.from_arrays(W, b)


def sample_neighbor(inv: CandidateInvariant, params: SearchSpaceParams,
                    rng: np.random.Generator) -> CandidateInvariant:
    W, b = inv.arrays()
    return apply_move(inv, _draw_move(W, b, params, rng))


def neighbors(inv: CandidateInvariant, params: SearchSpaceParams) -> list[CandidateInvariant]:
    W, b = inv.arrays()
    return [apply_move(inv, m) for m in legal_moves(W, b, params)]


# ---------------------------------------------------------------------------
# initialization and temperature

def random_candidate(params: SearchSpaceParams, rng: np.random.Generator) -> CandidateInvariant:
    W = np.zeros((params.d, params.c, params.n), dtype=np.int64)
    for j in range(params.d):
        for i in range(params.c):
            while True:
                w = rng.integers(-params.k, params.k, size=params.n, endpoint=True)
                if np.any(w):
                    break
            W[j, i] = w
    return CandidateInvariant.from_arrays(W, np.zeros((params.d, params.c), dtype=np.int64))


def initial_invariant(data: Dataset, params: SearchSpaceParams, l0: int, alpha: float,
                      beta: float, rng: np.random.Generator) -> CandidateInvariant:
    """Best of ``l0`` random zero-constant candidates (first one wins ties)."""
    if l0 < 1:
        raise ValueError("l0 must be >= 1")
    model = CostModel(data, params.n, alpha, beta)
    best, best_cost = None, math.inf
    for _ in range(l0):
        cand = random_candidate(params, rng)
        value = _State(model, *cand.arrays()).cost
        if value < best_cost:
            best, best_cost = cand, value
    return best


def _walk(state: _State, steps: int, params, rng) -> list[TransitionSample]:
    out = []
    for _ in range(steps):
        before = state.cost
        after = state.try_move(_draw_move(state.W, state.b, params, rng))
        out.append(TransitionSample(before, after))
    return out


def bounded_random_walk(start: CandidateInvariant, steps: int, data: Dataset,
                        params: SearchSpaceParams, alpha: float, beta: float,
                        rng: np.random.Generator) -> list[TransitionSample]:
    if steps < 1:
        raise ValueError("walk length must be >= 1")
    state = _State(CostModel(data, params.n, alpha, beta), *start.arrays())
    return _walk(state, steps, params, rng)


def initial_temperature(walk: Sequence[TransitionSample], a0: float, eps_T: float) -> float:
    """Temperature at which uphill moves of the walk are accepted at rate ``a0``."""
    gaps = np.array([s.cost_after - s.cost_before for s in walk if s.cost_after > s.cost_before])
    if not len(gaps):
        log.warning("random walk saw no uphill move; using T0 = 1.0")
        return 1.0
    ln_a0 = math.log(a0)
    T = -gaps.sum() / (ln_a0 * len(gaps))
    for _ in range(TEMP_ITER_CAP):
        a = float(np.exp(-gaps / T).mean())
        if abs(a - a0) <= eps_T:
            return T
        T *= math.sqrt(math.log(max(a, 1e-300)) / ln_a0)
    log.warning("initial temperature did not converge; using T = %g", T)
    return T


def accept(c_old: float, c_new: float, T: float, rng: np.random.Generator) -> bool:
    return rng.random() <= math.exp(-max(c_new - c_old, 0.0) / T)


# ---------------------------------------------------------------------------
# annealing

@dataclass
class _Worker:
    """Resumable annealing run, advanced in chunks of steps."""

    model: CostModel
    params: SearchSpaceParams
    config: AnnealConfig
    rng: np.random.Generator
    start: CandidateInvariant
    wid: int = 0
    t: int = 0
    T0: float = 1.0
    found: CandidateInvariant | None = None
    telemetry: list = field(default_factory=list)

    def __post_init__(self):
        self.state = _State(self.model, *self.start.arrays())
        if self.state.cost == 0.0:
            self.found = self.start
            return
        walker = _State(self.model, *self.start.arrays())
        walk = _walk(walker, self.config.t_rw, self.params, self.rng)
        self.T0 = initial_temperature(walk, self.config.a0, self.config.eps_T)
        self._acc = 0

    @property
    def done(self) -> bool:
        return self.found is not None or self.t >= self.config.t_max

    def run(self, steps: int):
        st, params, rng = self.state, self.params, self.rng
        end = min(self.t + steps, self.config.t_max)
        while self.found is None and self.t < end:
            self.t += 1
            T = self.T0 / math.log(1 + self.t)
            old = st.cost
            new = st.try_move(_draw_move(st.W, st.b, params, rng))
            if rng.random() <= math.exp(-max(new - old, 0.0) / T):
                self._acc += 1
                if new == 0.0:
                    self.found = st.candidate()
            else:
                st.revert()
            if self.t % RECOMPUTE_EVERY == 0:
                st.recompute()
            if self.t % 1000 == 0:
                self.telemetry.append({"worker": self.wid, "t": self.t, "T": T, "cost": st.cost,
                                       "accept_rate": self._acc / 1000})
                self._acc = 0


def simulated_annealing(data: Dataset, start: CandidateInvariant, params: SearchSpaceParams,
                        config: AnnealConfig, rng: np.random.Generator,
                        stop: Callable[[], bool] | None = None) -> CandidateInvariant | None:
    """Anneal from ``start``; returns a zero-cost candidate or None."""
    w = _Worker(CostModel(data, params.n, config.alpha, config.beta), params, config, rng,
                start.project(params))
    while not w.done:
        w.run(config.t_check)
        if stop is not None and stop():
            return None
    return w.found


@dataclass
class SaResult:
    success: bool
    invariant: CandidateInvariant | None
    worker: int | None
    steps: list
    telemetry: list


def _make_workers(data, start, space, c, d, config, rngs):
    model = CostModel(data, space.dim, config.alpha, config.beta)
    out = []
    for wid, (k, rng) in enumerate(zip(config.k_list, rngs)):
        params = SearchSpaceParams.for_space(space, c, d, k)
        out.append(_Worker(model, params, config, rng, start.project(params), wid))
    return out


def _pick(workers) -> SaResult:
    for w in workers:
        if w.found is not None:
            return SaResult(True, w.found, w.wid, [x.t for x in workers],
                            [r for x in workers for r in x.telemetry])
    return SaResult(False, None, None, [x.t for x in workers],
                    [r for x in workers for r in x.telemetry])


def _serial(workers, config) -> SaResult:
    while True:
        if any(w.found is not None for w in workers):
            return _pick(workers)
        if all(w.done for w in workers):
            return _pick(workers)
        for w in workers:
            if not w.done:
                w.run(config.t_check)


def _process_main(wid, worker, config, board, barrier, queue):
    # each round: run t_check steps, post, wait for everyone, then read the board
    while True:
        if not worker.done:
            worker.run(config.t_check)
        if worker.found is not None:
            board[wid] = 1
        barrier.wait()
        stop = any(board)
        if stop or worker.t >= config.t_max:
            break
        barrier.wait()
    queue.put((wid, worker.found, worker.t, worker.telemetry))


def _parallel(workers, config) -> SaResult:
    ctx = mp.get_context("fork")
    n = len(workers)
    board = ctx.Array("b", n, lock=False)
    barrier = ctx.Barrier(n)
    queue = ctx.Queue()
    procs = [ctx.Process(target=_process_main, args=(i, w, config, board, barrier, queue))
             for i, w in enumerate(workers)]
    for p in procs:
        p.start()
    results = [queue.get() for _ in procs]
    for p in procs:
        p.join()
    for wid, found, t, tele in results:
        workers[wid].found = found
        workers[wid].t = t
        workers[wid].telemetry = tele
    return _pick(workers)


def parallel_sa(data: Dataset, start: CandidateInvariant, space: StateSpace, c: int, d: int,
                config: AnnealConfig, rngs: Sequence[np.random.Generator]) -> SaResult:
    """One annealer per entry of ``config.k_list``, advanced in rounds of
    ``t_check`` steps. The lowest-index worker that succeeds in the first
    successful round wins, so serial and process modes agree exactly."""
    if len(rngs) != config.workers:
        raise ValueError("need one generator per worker")
    workers = _make_workers(data, start, space, c, d, config, rngs)
    if config.parallel == "serial" or len(workers) == 1:
        return _serial(workers, config)
    if any(w.found is not None for w in workers):
        return _pick(workers)
    return _parallel(workers, config)
