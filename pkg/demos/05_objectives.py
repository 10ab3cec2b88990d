"""
Training objectives
===================

The total loss combines task losses on the fused, structural and semantic
embeddings with a disentangling term (a CLUB mutual-information bound plus a
discriminator) and a contrastive term between two views.
"""
import math

import numpy as np

from hypdis import autodiff as ad
from hypdis import manifold as mf
from hypdis import objectives as ob
from hypdis.evaluation import mi_probe
from hypdis.layers import ParamStore

rng = np.random.default_rng(0)

# InfoNCE: two nodes whose views agree and whose cross pairs are orthogonal
z = np.eye(2)
print("InfoNCE, tau=1:", ob.infonce_loss(z, z, tau=1.0, negatives=None),
      " hand value", 2 * math.log(1 + math.exp(-1)))

# CLUB on jointly Gaussian pairs: an upper bound on the analytic MI
d, rho, n = 4, 0.9, 2000
x = rng.normal(size=(n, d))
y = rho * x + math.sqrt(1 - rho ** 2) * rng.normal(size=(n, d))
flat = mf.Euclidean()
print(f"analytic MI {-0.5 * d * math.log(1 - rho ** 2):.3f}, "
      f"CLUB probe {mi_probe(x, y, geom=flat).estimate:.3f}, "
      f"independent probe {mi_probe(x, rng.normal(size=(n, d)), geom=flat).estimate:+.4f}")

# the variational q(y | x) is fitted with its own optimizer, detached from the encoders
params = ParamStore()
q = ob.GaussianConditional(params, d, d, rng)
opt = ad.Adam(list(params.values()), lr=0.05)
xt, yt = x[:500], y[:500]
for step in range(201):
    ll = ob.q_theta_fit_step(q, xt, yt, opt)
    if step % 50 == 0:
        print(f"  q fit step {step:3d}: mean log q(y|x) {ll:.3f}")

# discriminator: an uninformative one sits at ln 2
dparams = ParamStore()
disc = ob.Discriminator(dparams, d, 8, rng)
for p in dparams.values():
    p.value = np.zeros_like(p.value)
a = mf.expmap0(rng.normal(size=(50, d)) * 0.3, 1.0)
b = mf.expmap0(rng.normal(size=(50, d)) * 0.3, 1.0)
print("blind discriminator loss", float(ad._val(ob.discriminator_loss(a, b, disc, 1.0))), "ln 2 =", math.log(2))

# fusion is Möbius addition of the two embeddings
fused = ob.fuse(a, b, 1.0)
print("fusion equals mobius_add:", np.allclose(ad._val(fused), mf.mobius_add(a, b, 1.0)))

# loss weights: task(Z) + l1 (task(Zst) + task(Zse)) + l2 L_dis + l3 L_cl
w = ob.LossWeights()
print("default weights", w)
print("total with unit parts:", float(ad._val(ob.total_loss(1.0, 1.0, 1.0, 1.0, 1.0, w))),
      "=", 1 + 2 * w.lambda1 + w.lambda2 + w.lambda3)
