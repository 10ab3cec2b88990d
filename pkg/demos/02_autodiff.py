"""
Reverse-mode differentiation on dense arrays
============================================

Parameters are tensors that record the operations applied to them.  Calling
``backward`` on a scalar walks that tape in reverse and fills ``.grad``.
"""
import numpy as np

from hypdis import autodiff as ad
from hypdis import manifold as mf

rng = np.random.default_rng(1)
w = ad.Parameter(rng.normal(size=(3, 2)), name="w")
x = rng.normal(size=(5, 3))

# a small graph: linear map, tanh, mean of squares
loss = ad.mean(ad.tanh(ad.matmul(x, w)) ** 2)
ad.backward(loss)
print("loss", loss.item())
print("dloss/dw\n", w.grad)

# central differences agree with the tape
h = 1e-6
num = np.zeros_like(w.value)
for i in np.ndindex(*w.value.shape):
    old = w.value[i]
    w.value[i] = old + h
    up = np.mean(np.tanh(x @ w.value) ** 2)
    w.value[i] = old - h
    down = np.mean(np.tanh(x @ w.value) ** 2)
    w.value[i] = old
    num[i] = (up - down) / (2 * h)
print("max |autodiff - finite differences| =", np.abs(num - w.grad).max())

# manifold kernels accept tensors too, so gradients flow through exp/log maps
# and through the curvature itself
raw_c = ad.Parameter(np.array(0.5))
u, v = rng.normal(size=(2, 4, 3)) * 0.5
c = ad.softplus(raw_c)
d = ad.sum(mf.distance(mf.expmap0(u, c), mf.expmap0(v, c), c))
ad.backward(d)
print("d sum-of-distances / d raw curvature =", raw_c.grad)

# Adam steps a list of parameters from their gradients
opt = ad.Adam([w], lr=0.05)
for step in range(200):
    opt.zero_grad()
    loss = ad.mean((ad.matmul(x, w) - 1.0) ** 2)
    ad.backward(loss)
    opt.step()
print("after 200 Adam steps the regression loss is", round(loss.item(), 4))
