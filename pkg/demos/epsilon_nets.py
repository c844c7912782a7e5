"""How many samples a net needs, and what one looks like.

Run: python demos/epsilon_nets.py
"""

from __future__ import annotations

from fractions import Fraction

import numpy as np

from annealinv import DnfFormula, NetParams, StateSpace, epsilon_net_size, randomized_epsilon_net
from annealinv.sampling import ellipsoid_vc

# per-cube sample counts for ellipsoid ranges in the plane (VC dimension 5)
vc = ellipsoid_vc(2)
print(f"VC dimension of planar ellipsoids: {vc}")
print("  eps    m(delta=0.9)")
for eps in (Fraction(1), Fraction(1, 2), Fraction(1, 4), Fraction(1, 10)):
    print(f"  {str(eps):5}  {epsilon_net_size(NetParams(eps, Fraction(9, 10), vc))}")

# draw a net on the triangle x >= 0, y >= 0, x + y <= 20 and plot it
space = StateSpace(2, 32)
tri = DnfFormula.from_lists([[((-1, 0), 0), ((0, -1), 0), ((1, 1), 20)]])
net = randomized_epsilon_net(tri, NetParams(Fraction(1, 4), Fraction(9, 10), vc), space,
                             np.random.default_rng(1))
print(f"\n{len(net)} distinct points from 360 draws on a 231-point triangle:")
for y in range(20, -1, -1):
    print("  " + "".join("o" if (x, y) in net else ("." if x + y <= 20 else " ")
                         for x in range(21)))
