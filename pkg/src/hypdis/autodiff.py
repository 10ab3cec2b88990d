"""Small reverse-mode automatic differentiation over dense numpy arrays.

Every operation builds a :class:`Tensor` that remembers its parents and a
closure propagating the output gradient back to them.  :func:`backward`
orders the recorded graph topologically and replays the closures in reverse.

The module-level functions (``tanh``, ``norm``, ``clamp``...) accept plain
numpy arrays as well; in that case they return plain arrays and nothing is
recorded.  That lets the geometry kernels serve both the training path and
pure numerical checks.
"""
from __future__ import annotations

import numpy as np

CHECK_FINITE = False
_GRAD_ENABLED = [True]


class NonFiniteError(FloatingPointError):
    pass


class Tensor:
    __slots__ = ("value", "grad", "parents", "backward_fn", "requires_grad", "name")
    __array_priority__ = 100.0

    def __init__(self, value, requires_grad=False, parents=(), backward_fn=None, name=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self.parents = parents
        self.backward_fn = backward_fn
        self.requires_grad = requires_grad
        self.name = name
        if CHECK_FINITE and not np.all(np.isfinite(self.value)):
            raise NonFiniteError(f"non-finite value produced ({name or 'unnamed'})")

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    @property
    def T(self):
        return transpose(self)

    def numpy(self):
        return self.value

    def detach(self):
        return Tensor(self.value)

    def zero_grad(self):
        self.grad = None

    def item(self):
        return float(self.value)

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, index):
        return take(self, index)

    def sum(self, axis=None, keepdims=False):
        return sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 else shape)


def Parameter(value, name=None):
    return Tensor(np.array(value, dtype=np.float64), requires_grad=True, name=name)


def _is_tensor(x):
    return isinstance(x, Tensor)


def _val(x):
    return x.value if isinstance(x, Tensor) else x


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _tracked(*xs):
    return any(isinstance(x, Tensor) and (x.requires_grad or x.parents) for x in xs)


def _unbroadcast(grad, shape):
    if grad.shape == shape:
        return grad
    ndiff = grad.ndim - len(shape)
    if ndiff > 0:
        grad = grad.sum(axis=tuple(range(ndiff)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _make(value, parents, backward_fn, name):
    """Wrap ``value``; record a node only when some parent needs gradients."""
    if not _GRAD_ENABLED[0]:
        return Tensor(value, name=name)
    live = tuple(p for p in parents if isinstance(p, Tensor) and (p.requires_grad or p.parents))
    if not live:
        return Tensor(value, name=name)
    return Tensor(value, parents=parents, backward_fn=backward_fn, name=name)


def _unary(x, value, local_grad, name):
    """Elementwise op whose derivative is ``local_grad(out_value)``."""
    if not isinstance(x, Tensor):
        return value

    def bw(g, out):
        return (g * local_grad(out),)

    return _make(value, (x,), bw, name)


# ---------------------------------------------------------------------------
# arithmetic


def add(a, b):
    va, vb = _val(a), _val(b)
    out = va + vb
    if not (_is_tensor(a) or _is_tensor(b)):
        return out

    def bw(g, _):
        return _unbroadcast(g, np.shape(va)), _unbroadcast(g, np.shape(vb))

    return _make(out, (a, b), bw, "add")


def sub(a, b):
    va, vb = _val(a), _val(b)
    out = va - vb
    if not (_is_tensor(a) or _is_tensor(b)):
        return out

    def bw(g, _):
        return _unbroadcast(g, np.shape(va)), -_unbroadcast(g, np.shape(vb))

    return _make(out, (a, b), bw, "sub")


def mul(a, b):
    va, vb = _val(a), _val(b)
    out = va * vb
    if not (_is_tensor(a) or _is_tensor(b)):
        return out

    def bw(g, _):
        return _unbroadcast(g * vb, np.shape(va)), _unbroadcast(g * va, np.shape(vb))

    return _make(out, (a, b), bw, "mul")


def div(a, b):
    va, vb = _val(a), _val(b)
    out = va / vb
    if not (_is_tensor(a) or _is_tensor(b)):
        return out

    def bw(g, o):
        return _unbroadcast(g / vb, np.shape(va)), _unbroadcast(-g * o / vb, np.shape(vb))

    return _make(out, (a, b), bw, "div")


def neg(x):
    if not isinstance(x, Tensor):
        return -x
    return _make(-x.value, (x,), lambda g, _: (-g,), "neg")


def power(x, exponent):
    vx = _val(x)
    out = vx ** exponent
    if not isinstance(x, Tensor):
        return out

    def bw(g, _):
        return (g * exponent * vx ** (exponent - 1),)

    return _make(out, (x,), bw, "pow")


def sqrt(x):
    return _unary(x, np.sqrt(_val(x)), lambda o: 0.5 / o, "sqrt")


def matmul(a, b):
    va, vb = _val(a), _val(b)
    out = va @ vb
    if not (_is_tensor(a) or _is_tensor(b)):
        return out

    def bw(g, _):
        ga = gb = None
        if _tracked(a):
            ga = g @ vb.T if vb.ndim == 2 else np.outer(g, vb)
        if _tracked(b):
            gb = va.T @ g if va.ndim == 2 else np.outer(va, g)
        return ga, gb

    return _make(out, (a, b), bw, "matmul")


def dot(a, b, axis=-1, keepdims=True):
    """Inner product along ``axis``."""
    return sum(mul(a, b), axis=axis, keepdims=keepdims)


# ---------------------------------------------------------------------------
# reductions and shape


def sum(x, axis=None, keepdims=False):
    vx = _val(x)
    out = vx.sum(axis=axis, keepdims=keepdims)
    if not isinstance(x, Tensor):
        return out
    shape = vx.shape

    def bw(g, _):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape),)

    return _make(out, (x,), bw, "sum")


def mean(x, axis=None, keepdims=False):
    vx = _val(x)
    n = vx.size if axis is None else np.prod([vx.shape[a] for a in np.atleast_1d(axis)])
    return mul(sum(x, axis=axis, keepdims=keepdims), 1.0 / n)


def reshape(x, shape):
    vx = _val(x)
    out = vx.reshape(shape)
    if not isinstance(x, Tensor):
        return out
    return _make(out, (x,), lambda g, _: (g.reshape(vx.shape),), "reshape")


def transpose(x):
    if not isinstance(x, Tensor):
        return x.T
    return _make(x.value.T, (x,), lambda g, _: (g.T,), "transpose")


def concat(xs, axis=-1):
    vals = [_val(x) for x in xs]
    out = np.concatenate(vals, axis=axis)
    if not any(_is_tensor(x) for x in xs):
        return out
    splits = np.cumsum([v.shape[axis] for v in vals])[:-1]

    def bw(g, _):
        return tuple(np.split(g, splits, axis=axis))

    return _make(out, tuple(xs), bw, "concat")


def stack(xs, axis=0):
    return concat([reshape(x, _expand_shape(np.shape(_val(x)), axis)) for x in xs], axis=axis)


def _expand_shape(shape, axis):
    shape = list(shape)
    shape.insert(axis if axis >= 0 else len(shape) + 1 + axis, 1)
    return tuple(shape)


def take(x, index):
    """Basic or fancy indexing; repeated indices accumulate in backward."""
    vx = _val(x)
    out = vx[index]
    if not isinstance(x, Tensor):
        return out

    def bw(g, _):
        full = np.zeros_like(vx)
        np.add.at(full, index, g)
        return (full,)

    return _make(out, (x,), bw, "take")


def rows(x, idx):
    """Gather rows ``x[idx]`` (faster backward than generic :func:`take`)."""
    vx = _val(x)
    idx = np.asarray(idx)
    out = vx[idx]
    if not isinstance(x, Tensor):
        return out
    n = vx.shape[0]

    def bw(g, _):
        flat_idx = idx.reshape(-1)
        g2 = g.reshape(flat_idx.size, -1)
        full = np.zeros((n, g2.shape[1]))
        np.add.at(full, flat_idx, g2)
        return (full.reshape(vx.shape),)

    return _make(out, (x,), bw, "rows")


def scatter_rows(x, idx, n):
    """Place the rows of ``x`` at positions ``idx`` of an ``n``-row zero matrix."""
    vx = _val(x)
    out = np.zeros((n,) + vx.shape[1:])
    out[idx] = vx
    if not isinstance(x, Tensor):
        return out
    return _make(out, (x,), lambda g, _: (g[idx],), "scatter_rows")


# ---------------------------------------------------------------------------
# elementwise nonlinearities


def exp(x):
    return _unary(x, np.exp(_val(x)), lambda o: o, "exp")


def log(x):
    vx = _val(x)
    return _unary(x, np.log(vx), lambda o: 1.0 / vx, "log")


def tanh(x):
    return _unary(x, np.tanh(_val(x)), lambda o: 1.0 - o * o, "tanh")


def artanh(x):
    vx = _val(x)
    return _unary(x, np.arctanh(vx), lambda o: 1.0 / (1.0 - vx * vx), "artanh")


def sigmoid(x):
    vx = _val(x)
    out = np.where(vx >= 0, 1.0 / (1.0 + np.exp(-np.abs(vx))), np.exp(-np.abs(vx)) / (1.0 + np.exp(-np.abs(vx))))
    return _unary(x, out, lambda o: o * (1.0 - o), "sigmoid")


def softplus(x):
    vx = _val(x)
    out = np.logaddexp(0.0, vx)
    return _unary(x, out, lambda o: 1.0 - np.exp(-o), "softplus")


def log_sigmoid(x):
    return neg(softplus(neg(x)))


def relu(x):
    vx = _val(x)
    mask = vx > 0
    return _unary(x, vx * mask, lambda o: mask.astype(np.float64), "relu")


def leaky_relu(x, slope=0.2):
    vx = _val(x)
    scale = np.where(vx > 0, 1.0, slope)
    return _unary(x, vx * scale, lambda o: scale, "leaky_relu")


def clamp(x, lo=None, hi=None):
    """Clip to ``[lo, hi]``; the gradient is zero outside the interval."""
    vx = _val(x)
    out = np.clip(vx, lo, hi)
    if not isinstance(x, Tensor):
        return out
    inside = np.ones_like(vx, dtype=bool)
    if lo is not None:
        inside &= vx >= lo
    if hi is not None:
        inside &= vx <= hi
    return _make(out, (x,), lambda g, _: (g * inside,), "clamp")


def clamp_min(x, lo):
    return clamp(x, lo=lo)


def minimum(x, bound):
    """Elementwise min against another tensor or array (gradient to the chosen side)."""
    vx, vb = _val(x), _val(bound)
    pick = vx <= vb
    out = np.where(pick, vx, vb)
    if not (_is_tensor(x) or _is_tensor(bound)):
        return out

    def bw(g, _):
        return _unbroadcast(g * pick, np.shape(vx)), _unbroadcast(g * ~pick, np.shape(vb))

    return _make(out, (x, bound), bw, "minimum")


def norm(x, axis=-1, keepdims=True, floor=0.0):
    """Euclidean norm along ``axis``; ``floor`` bounds it away from zero."""
    vx = _val(x)
    raw = np.sqrt((vx * vx).sum(axis=axis, keepdims=True))
    out = np.maximum(raw, floor)
    res = out if keepdims else np.squeeze(out, axis=axis)
    if not isinstance(x, Tensor):
        return res
    active = raw > floor
    safe = np.where(active, raw, 1.0)

    def bw(g, _):
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (g * active * vx / safe,)

    return _make(res, (x,), bw, "norm")


def softmax(x, axis=-1):
    vx = _val(x)
    shifted = vx - vx.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)
    if not isinstance(x, Tensor):
        return out

    def bw(g, o):
        return (o * (g - (g * o).sum(axis=axis, keepdims=True)),)

    return _make(out, (x,), bw, "softmax")


def log_softmax(x, axis=-1):
    vx = _val(x)
    shifted = vx - vx.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse
    if not isinstance(x, Tensor):
        return out

    def bw(g, o):
        return (g - np.exp(o) * g.sum(axis=axis, keepdims=True),)

    return _make(out, (x,), bw, "log_softmax")


def where(mask, a, b):
    va, vb = _val(a), _val(b)
    out = np.where(mask, va, vb)
    if not (_is_tensor(a) or _is_tensor(b)):
        return out

    def bw(g, _):
        return _unbroadcast(np.where(mask, g, 0.0), np.shape(va)), _unbroadcast(np.where(mask, 0.0, g), np.shape(vb))

    return _make(out, (a, b), bw, "where")


def grad_reverse(x, scale=1.0):
    """Identity forward, gradient multiplied by ``-scale`` backward."""
    if not isinstance(x, Tensor):
        return x
    return _make(x.value.copy(), (x,), lambda g, _: (-scale * g,), "grad_reverse")


class no_grad:
    """Context manager: operations inside build no backward graph."""

    def __enter__(self):
        self._prev = _GRAD_ENABLED[0]
        _GRAD_ENABLED[0] = False
        return self

    def __exit__(self, *exc):
        _GRAD_ENABLED[0] = self._prev
        return False


def stop_gradient(x):
    return Tensor(_val(x))


# ---------------------------------------------------------------------------
# backward pass


class Tape:
    """Nodes reachable from a root, in topological (creation-compatible) order."""

    def __init__(self, nodes):
        self.nodes = nodes

    @classmethod
    def from_root(cls, root):
        order, seen = [], set()
        stack = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node.parents:
                if isinstance(p, Tensor) and id(p) not in seen and (p.requires_grad or p.parents):
                    stack.append((p, False))
        return cls(order)

    def __len__(self):
        return len(self.nodes)

    def __iter__(self):
        return iter(self.nodes)


def backward(root, grad=None):
    """Accumulate d(root)/d(leaf) into ``leaf.grad`` for every reachable leaf."""
    if not isinstance(root, Tensor):
        raise TypeError("backward expects a Tensor")
    if root.value.size != 1 and grad is None:
        raise ValueError(f"backward needs a scalar root, got shape {root.shape}")
    tape = Tape.from_root(root)
    grads = {id(root): np.ones_like(root.value) if grad is None else np.asarray(grad, dtype=np.float64)}
    for node in reversed(tape.nodes):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if not node.parents:
            node.grad = g if node.grad is None else node.grad + g
            continue
        parent_grads = node.backward_fn(g, node.value)
        for p, pg in zip(node.parents, parent_grads):
            if pg is None or not isinstance(p, Tensor) or not (p.requires_grad or p.parents):
                continue
            key = id(p)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = np.array(pg, dtype=np.float64, copy=True)
    return tape


def grad(fn, params):
    """Evaluate ``fn()`` and return (value, [d value / d p for p in params])."""
    for p in params:
        p.grad = None
    out = fn()
    backward(out)
    return out.item(), [np.zeros_like(p.value) if p.grad is None else p.grad for p in params]


# ---------------------------------------------------------------------------
# optimizer


def adam_step(params, grads, state, lr=0.01, beta1=0.9, beta2=0.999, eps=1e-8):
    """One Adam update in place.  ``state`` holds ``t``, ``m`` and ``v`` lists."""
    if not state:
        state["t"] = 0
        state["m"] = [np.zeros_like(p.value) for p in params]
        state["v"] = [np.zeros_like(p.value) for p in params]
    state["t"] += 1
    t = state["t"]
    bc1 = 1.0 - beta1 ** t
    bc2 = 1.0 - beta2 ** t
    for p, g, m, v in zip(params, grads, state["m"], state["v"]):
        if g is None:
            continue
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p.value -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
    return params, state


class Adam:
    def __init__(self, params, lr=0.01, betas=(0.9, 0.999), eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.state = {}

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        grads = [p.grad for p in self.params]
        adam_step(self.params, grads, self.state, self.lr, self.betas[0], self.betas[1], self.eps)

    def state_arrays(self):
        if not self.state:
            return {"t": np.array([0.0])}
        out = {"t": np.array([float(self.state["t"])])}
        for i, (m, v) in enumerate(zip(self.state["m"], self.state["v"])):
            out[f"m{i}"] = m.copy()
            out[f"v{i}"] = v.copy()
        return out

    def load_state_arrays(self, arrays):
        t = int(arrays["t"][0])
        if t == 0:
            self.state = {}
            return
        self.state = {
            "t": t,
            "m": [np.array(arrays[f"m{i}"]) for i in range(len(self.params))],
            "v": [np.array(arrays[f"v{i}"]) for i in range(len(self.params))],
        }
