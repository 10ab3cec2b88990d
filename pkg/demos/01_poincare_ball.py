"""
Poincaré ball arithmetic
========================

The ball of curvature -c is the open set ``c * |x|^2 < 1``.  Every encoder in
the package moves points between the ball and the tangent space at the origin,
so this walk-through checks the basic identities by hand.
"""
import math

import numpy as np

from hypdis import manifold as mf

c = 1.0

# Möbius addition in one dimension collapses to (x + y) / (1 + c x y)
x, y = np.array([0.3]), np.array([0.4])
print("0.3 (+) 0.4 =", mf.mobius_add(x, y, c), " hand value", 0.7 / 1.12)

# distance from the origin to 0.5 is 2 artanh(0.5)
print("d(0, 0.5) =", mf.distance(np.zeros(1), np.array([0.5]), c), " hand value", 2 * math.atanh(0.5))

# exp and log at the origin are inverse to each other
v = np.array([[0.5, -1.0, 2.0]])
p = mf.expmap0(v, c)
print("exp_o(v) =", p, " norm", np.linalg.norm(p), "=", math.tanh(np.linalg.norm(v)))
print("log_o(exp_o(v)) - v =", mf.logmap0(p, c) - v)

# a point is pushed back inside the ball margin after every manifold-valued op
far = np.array([[3.0, 4.0]])
print("project(|x| = 5) has norm", np.linalg.norm(mf.project(far, c)))

# Möbius matrix-vector product: exp_o(M log_o(x))
rng = np.random.default_rng(0)
m = rng.normal(size=(2, 3))
print("M (x) p =", mf.mobius_matvec(m, p, c))
print("oracle  =", mf.expmap0(mf.logmap0(p, c) @ m.T, c))

# as c -> 0 the ball flattens and Möbius addition becomes vector addition
a, b = rng.uniform(-0.5, 0.5, size=(2, 4))
print("c = 1e-9: |a (+) b - (a + b)| =", np.linalg.norm(mf.mobius_add(a, b, 1e-9) - (a + b)))

# the same kernels are bundled with call counters for code-path audits;
# the Euclidean bundle swaps every map for its flat counterpart
ball, flat = mf.PoincareBall(), mf.Euclidean()
for geom in (ball, flat):
    out = geom.mobius_add(a, b, c)
    print(geom.name, out, dict(geom.calls))
