from __future__ import annotations

import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from annealinv.anneal import (AnnealConfig, CandidateInvariant, CostModel, SearchSpaceParams,
                              TransitionSample, _draw_move, _State, accept, bounded_random_walk,
                              cost,
                              cost_dnf, delta_approx, initial_invariant, initial_temperature,
                              legal_moves, neighbors, normalizer, parallel_sa,
                              random_candidate, satisfies_dataset, simulated_annealing)
from annealinv.lia import Dataset, DnfFormula, StateSpace
from annealinv.sampling import initial_dataset

from conftest import grid


def cand(*cubes):
    return CandidateInvariant(tuple(tuple(tuple(w) for w, _ in cube) for cube in cubes),
                              tuple(tuple(b for _, b in cube) for cube in cubes))


def test_delta_approx_examples():
    one_cube = DnfFormula.from_lists([[((1, 0), 0), ((0, 1), 0)]])
    assert delta_approx(one_cube, (3, 4)) == pytest.approx(3.5)
    two_cubes = DnfFormula.from_lists([[((1, 0), 0)], [((0, 1), 0)]])
    assert delta_approx(two_cubes, (3, 4)) == pytest.approx(3.0)
    assert delta_approx(two_cubes, (-1, 4)) == 0.0
    # norm of the coefficient vector divides the residual
    assert delta_approx(DnfFormula.from_lists([[((3, 4), 0)]]), (1, 1)) == pytest.approx(7 / 5)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.lists(st.tuples(st.tuples(st.integers(-3, 3), st.integers(-3, 3))
                                   .filter(any), st.integers(-5, 5)),
                         min_size=1, max_size=3), min_size=1, max_size=3))
def test_delta_approx_zero_iff_member(cubes):
    f = DnfFormula.from_lists(cubes)
    for s in grid(-4, 4, 2):
        assert (delta_approx(f, s) == 0.0) == f.holds(s)


def test_normalizer_examples():
    assert normalizer(0, 50, 2) == 0.0
    assert normalizer(10, 50, 2) == 5.0
    assert normalizer(50, 50, 2) == 25.0
    assert normalizer(1e6, 50, 2) == pytest.approx(26.0)


@settings(max_examples=60, deadline=None)
@given(st.floats(0, 500), st.floats(0, 500), st.floats(1.5, 80), st.floats(1, 5))
def test_normalizer_monotone_and_lipschitz(x, y, alpha, beta):
    fx, fy = normalizer(x, alpha, beta), normalizer(y, alpha, beta)
    if x <= y:
        assert fx <= fy + 1e-12
    assert abs(fx - fy) <= abs(x - y) / beta + 1e-9
    assert fx <= alpha / beta + 1 + 1e-12


def test_cost_single_plus_point():
    data = Dataset({(5,)}, set(), set())
    c = cand([((1,), 0)])
    assert cost(c, data, 50, 2) == pytest.approx(5 / (3 * 2))
    assert cost(c.to_dnf(), data, 50, 2) == pytest.approx(5 / 6)


def _random_data(rng, n=2, size=12, lo=-6, hi=6):
    def pts(k):
        return {tuple(int(v) for v in rng.integers(lo, hi + 1, n)) for _ in range(k)}
    heads, tails = list(pts(size)), list(pts(size))
    return Dataset(pts(size), pts(size), set(zip(heads, tails)))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_cost_model_matches_explicit_negation(seed):
    rng = np.random.default_rng(seed)
    data = _random_data(rng)
    params = SearchSpaceParams(2, 2, 2, 3, 21)
    c = random_candidate(params, rng)
    W, b = c.arrays()
    b[:] = rng.integers(-4, 5, size=b.shape)
    c = CandidateInvariant.from_arrays(W, b)
    fast = cost(c, data, 50, 2)
    slow = cost_dnf(c.to_dnf(), data, 50, 2)
    zero = satisfies_dataset(c.to_dnf(), data)
    assert (fast == 0.0) == zero == (slow == 0.0)
    # with no predicate shared across cubes the two negations coincide
    preds = [(w, bb) for ws, bs in zip(c.W, c.b) for w, bb in zip(ws, bs)]
    if len(set(preds)) == len(preds):
        assert fast == pytest.approx(slow, rel=1e-9, abs=1e-12)


def test_legal_moves_example():
    params = SearchSpaceParams(2, 1, 1, 1, 4)
    W = np.array([[[1, 0]]])
    b = np.array([[4]])
    moves = legal_moves(W, b, params)
    # +1 on x exceeds k, -1 on x would zero the vector, +1 on b exceeds k'
    assert sorted(moves) == sorted([(0, 0, 0, 1, 1), (0, 0, 0, 1, -1), (0, 0, 1, 0, -1)])


def test_interior_point_has_every_move():
    params = SearchSpaceParams(3, 2, 2, 3, 40)
    W = np.full((2, 2, 3), 1)
    b = np.zeros((2, 2), dtype=np.int64)
    assert len(legal_moves(W, b, params)) == params.move_count == 2 * 2 * (2 * 3 + 2)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_moves_stay_in_space_and_are_reversible(seed):
    rng = np.random.default_rng(seed)
    params = SearchSpaceParams(2, 2, 2, 2, 6)
    W = rng.integers(-2, 3, size=(2, 2, 2))
    W[W.sum(axis=2) == 0] = 1
    W[:, :, 0][W[:, :, 0] == 0] = 1
    c = CandidateInvariant.from_arrays(W, rng.integers(-6, 7, size=(2, 2)))
    assert c.in_space(params)
    for nb in neighbors(c, params):
        assert nb.in_space(params)
        assert c in neighbors(nb, params)


def test_initial_invariant_has_zero_constants_and_is_argmin(rng):
    data = _random_data(rng)
    params = SearchSpaceParams(2, 2, 1, 3, 21)
    got = initial_invariant(data, params, 8, 50, 2, np.random.default_rng(3))
    assert all(b == 0 for cube in got.b for b in cube)
    replay = np.random.default_rng(3)
    pool = [random_candidate(params, replay) for _ in range(8)]
    costs = [cost(p, data, 50, 2) for p in pool]
    assert got == pool[int(np.argmin(costs))]
    with pytest.raises(ValueError):
        initial_invariant(data, params, 0, 50, 2, rng)


def test_random_walk_chains(rng):
    data = _random_data(rng)
    params = SearchSpaceParams(2, 2, 1, 3, 21)
    start = random_candidate(params, rng)
    walk = bounded_random_walk(start, 40, data, params, 50, 2, rng)
    assert len(walk) == 40
    assert walk[0].cost_before == pytest.approx(cost(start, data, 50, 2))
    for a, b in zip(walk, walk[1:]):
        assert b.cost_before == a.cost_after
    with pytest.raises(ValueError):
        bounded_random_walk(start, 0, data, params, 50, 2, rng)


def test_initial_temperature_examples():
    # all uphill gaps equal 1: exp(-1/T) = 1/2 gives T = 1/ln 2
    walk = [TransitionSample(0.0, 1.0)] * 5 + [TransitionSample(1.0, 0.5)]
    assert initial_temperature(walk, 0.5, 1e-6) == pytest.approx(1 / math.log(2), rel=1e-6)
    assert initial_temperature([TransitionSample(1.0, 0.0)], 0.5, 1e-3) == 1.0
    T = initial_temperature([TransitionSample(0, 1), TransitionSample(0, 3)], 0.35, 1e-6)
    assert (math.exp(-1 / T) + math.exp(-3 / T)) / 2 == pytest.approx(0.35, abs=1e-6)


def test_accept_rules(rng):
    assert all(accept(2.0, 1.0, 0.1, rng) for _ in range(50))
    hits = sum(accept(0.0, 1.0, 1.0, rng) for _ in range(20000))
    assert hits / 20000 == pytest.approx(math.exp(-1), abs=0.02)


def test_zero_cost_start_returns_immediately(rng):
    data = Dataset({(1,)}, {(9,)}, set())
    params = SearchSpaceParams(1, 1, 1, 1, 8)
    start = cand([((1,), 3)])
    got = simulated_annealing(data, start, params, AnnealConfig(workers=1, k_list=(1,)), rng)
    assert got == start


def _toy_data(toy):
    return initial_dataset(toy, Fraction(1, 2), Fraction(9, 10), np.random.default_rng(0))


def test_serial_and_process_modes_agree(toy):
    data = _toy_data(toy)
    params = SearchSpaceParams.for_space(toy.space, 2, 1, 1)
    start = initial_invariant(data, params, 8, 50, 2, np.random.default_rng(1))
    out = []
    for mode in ("serial", "process"):
        cfg = AnnealConfig(t_max=20000, parallel=mode)
        rngs = [np.random.default_rng([5, i]) for i in range(cfg.workers)]
        out.append(parallel_sa(data, start, toy.space, 2, 1, cfg, rngs))
    assert out[0].success == out[1].success
    assert out[0].invariant == out[1].invariant and out[0].worker == out[1].worker
    assert out[0].steps == out[1].steps


def test_single_worker_matches_plain_annealing(toy):
    data = _toy_data(toy)
    params = SearchSpaceParams.for_space(toy.space, 2, 1, 2)
    start = initial_invariant(data, params, 8, 50, 2, np.random.default_rng(1))
    cfg = AnnealConfig(t_max=20000, workers=1, k_list=(2,), parallel="serial")
    a = parallel_sa(data, start, toy.space, 2, 1, cfg, [np.random.default_rng(9)])
    b = simulated_annealing(data, start, params, cfg, np.random.default_rng(9))
    assert a.invariant == b


def test_incremental_cost_does_not_drift(rng):
    data = _random_data(rng, size=30)
    params = SearchSpaceParams(2, 3, 2, 3, 30)
    c = random_candidate(params, rng)
    state = _State(CostModel(data, 2, 50, 2), *c.arrays())
    for i in range(3000):
        state.try_move(_draw_move(state.W, state.b, params, rng))
        if i % 3 == 0:
            state.revert()
    assert state.cost == pytest.approx(cost(state.candidate(), data, 50, 2), rel=1e-9, abs=1e-12)


def test_config_validation():
    with pytest.raises(ValueError):
        AnnealConfig(workers=2)
    with pytest.raises(ValueError):
        AnnealConfig(alpha=1.0)
    with pytest.raises(ValueError):
        AnnealConfig(a0=1.0)
    with pytest.raises(ValueError):
        AnnealConfig(parallel="threads")


def test_search_space_radius_is_integer():
    params = SearchSpaceParams.for_space(StateSpace(2, 64), 2, 1, 3)
    assert params.k_prime == 3 * 2 * 65
