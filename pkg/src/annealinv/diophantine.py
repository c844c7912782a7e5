"""Exact integer/rational linear algebra used by the samplers.

* ``exact_bounds``: per-coordinate min/max of a bounded polyhedron
  ``G z <= h`` by exact rational vertex enumeration.
* ``integer_solution_lattice``: particular solution and integer null-space
  basis of ``A x = B`` via unimodular row reduction of ``[A^T : I]``.
"""

from __future__ import annotations

import itertools
import math
from fractions import Fraction
from typing import Sequence

import numpy as np

MAX_VERTEX_SUBSETS = 20_000


class NoIntegerSolution(ValueError):
    pass


def solve_square(M: Sequence[Sequence], rhs: Sequence) -> list[Fraction] | None:
    """Solve ``M z = rhs`` over the rationals; None if ``M`` is singular."""
    n = len(M)
    a = [[Fraction(v) for v in row] + [Fraction(r)] for row, r in zip(M, rhs)]
    for col in range(n):
        piv = next((r for r in range(col, n) if a[r][col] != 0), None)
        if piv is None:
            return None
        a[col], a[piv] = a[piv], a[col]
        p = a[col][col]
        row = a[col] = [v / p for v in a[col]]
        for r in range(n):
            if r != col and a[r][col] != 0:
                f = a[r][col]
                a[r] = [x - f * y for x, y in zip(a[r], row)]
    return [a[r][n] for r in range(n)]


def exact_bounds(G: Sequence[Sequence[int]], h: Sequence, dim: int):
    """Bounds of ``{z : G z <= h}`` per coordinate as Fractions.

    The polyhedron must be bounded (callers always include box rows). Returns
    None when it is empty, and raises ``OverflowError`` when there are too
    many vertex candidates to enumerate.
    """
    rows = [tuple(r) for r in G]
    h = [Fraction(v) for v in h]
    if math.comb(len(rows), dim) > MAX_VERTEX_SUBSETS:
        raise OverflowError("too many constraint subsets for vertex enumeration")
    lo = [None] * dim
    hi = [None] * dim
    seen = set()
    for idx in itertools.combinations(range(len(rows)), dim):
        z = solve_square([rows[i] for i in idx], [h[i] for i in idx])
        if z is None:
            continue
        key = tuple(z)
        if key in seen:
            continue
        seen.add(key)
        if all(sum(g * v for g, v in zip(r, z)) <= b for r, b in zip(rows, h)):
            for i, v in enumerate(z):
                if lo[i] is None or v < lo[i]:
                    lo[i] = v
                if hi[i] is None or v > hi[i]:
                    hi[i] = v
    if lo[0] is None:
        return None
    return list(zip(lo, hi))


def lp_bounds(G, h, dim: int):
    """Floating-point fallback for ``exact_bounds`` using the HiGHS LP solver."""
    from scipy.optimize import linprog

    G = np.asarray(G, dtype=float)
    h = np.asarray([float(v) for v in h])
    out = []
    for i in range(dim):
        c = np.zeros(dim)
        bounds = []
        for sign in (1.0, -1.0):
            c[i] = sign
            res = linprog(c, A_ub=G, b_ub=h, bounds=[(None, None)] * dim, method="highs")
            if res.status == 2:
                return None
            if res.status != 0:
                raise RuntimeError(f"LP solve failed: {res.message}")
            bounds.append(sign * res.fun)
        out.append((bounds[0], bounds[1]))
    return out


def _reduce_column(rows: list[list[int]], start: int, col: int) -> bool:
    """Euclid on ``col`` over rows ``start..``; leaves at most one nonzero
    entry (at ``start``). Returns whether a pivot was produced."""
    n = len(rows)
    while True:
        nz = [r for r in range(start, n) if rows[r][col] != 0]
        if not nz:
            return False
        piv = min(nz, key=lambda r: abs(rows[r][col]))
        rows[start], rows[piv] = rows[piv], rows[start]
        p = rows[start][col]
        done = True
        for r in range(start + 1, n):
            v = rows[r][col]
            if v:
                q = v // p
                rows[r] = [a - q * b for a, b in zip(rows[r], rows[start])]
                if rows[r][col]:
                    done = False
        if done:
            return True


def integer_solution_lattice(A: Sequence[Sequence[int]], B: Sequence[int]):
    """Return ``(x0, basis)`` with ``{x : A x = B, x integer}`` equal to
    ``{x0 + sum a_j basis[j] : a integer}``.

    Raises ``NoIntegerSolution`` when the system has no integer solution.
    """
    m = len(A)
    n = len(A[0])
    # rows of [A^T : I]
    rows = [[int(A[i][j]) for i in range(m)] + [int(j == k) for k in range(n)] for j in range(n)]
    pivots = []
    r = 0
    for col in range(m):
        if r < n and _reduce_column(rows, r, col):
            pivots.append(col)
            r += 1
    H = [row[:m] for row in rows]
    U = [row[m:] for row in rows]
    # A U^T = H^T, solve H^T y = B for y with y[r:] = 0
    y = []
    for k, col in enumerate(pivots):
        acc = int(B[col]) - sum(H[kk][col] * y[kk] for kk in range(k))
        q, rem = divmod(acc, H[k][col])
        if rem:
            raise NoIntegerSolution("no integer solution (divisibility fails)")
        y.append(q)
    for col in range(m):
        if sum(H[k][col] * y[k] for k in range(r)) != int(B[col]):
            raise NoIntegerSolution("no integer solution (inconsistent equations)")
    x0 = tuple(sum(U[k][j] * y[k] for k in range(r)) for j in range(n))
    basis = [tuple(U[k]) for k in range(r, n)]
    return x0, basis
