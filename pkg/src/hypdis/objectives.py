"""Training objectives: cross-view InfoNCE, the CLUB mutual-information bound,
the st/he discriminator, fusion and the two downstream task losses."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from hypdis import autodiff as ad
from hypdis.layers import glorot, hyperbolic_linear
from hypdis.manifold import PoincareBall

LOG_2PI = math.log(2.0 * math.pi)
LOGVAR_BOUND = 10.0


@dataclass
class LossWeights:
    lambda1: float = 0.2
    lambda2: float = 0.5
    lambda3: float = 0.05
    lambda_dis: float = 0.5
    tau: float = 0.5

    def __post_init__(self):
        if self.tau <= 0:
            raise ValueError("temperature must be positive")
        for name in ("lambda1", "lambda2", "lambda3", "lambda_dis"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")


# ---------------------------------------------------------------------------
# small perceptrons


class MLP:
    """Two-layer perceptron ``W2 relu(W1 x + b1) + b2`` with parameters in a store."""

    def __init__(self, params, prefix, d_in, d_hidden, d_out, rng):
        self.params = params
        self.prefix = prefix
        params.add(f"{prefix}.W1", glorot(rng, d_hidden, d_in))
        params.add(f"{prefix}.b1", np.zeros(d_hidden))
        params.add(f"{prefix}.W2", glorot(rng, d_out, d_hidden))
        params.add(f"{prefix}.b2", np.zeros(d_out))

    def __call__(self, x):
        p, k = self.params, self.prefix
        h = ad.relu(ad.matmul(x, ad.transpose(p[f"{k}.W1"])) + p[f"{k}.b1"])
        return ad.matmul(h, ad.transpose(p[f"{k}.W2"])) + p[f"{k}.b2"]


class GaussianConditional:
    """Variational ``q(y | x)``: a diagonal Gaussian whose mean and log-variance
    come from one two-layer perceptron.

    With ``heteroscedastic=False`` the log-variance is a free vector shared by
    all inputs, which keeps small-sample fits from collapsing the variance at a
    few points.
    """

    def __init__(self, params, d_x, d_y, rng, d_hidden=None, prefix="club", heteroscedastic=True):
        self.d_y = d_y
        self.heteroscedastic = heteroscedastic
        width = 2 * d_y if heteroscedastic else d_y
        self.net = MLP(params, prefix, d_x, d_hidden or max(d_x, d_y), width, rng)
        if not heteroscedastic:
            params.add(f"{prefix}.logvar", np.zeros(d_y))
        self.params = params
        self.prefix = prefix

    def parameters(self):
        return [v for k, v in self.params.items() if k.startswith(self.prefix + ".")]

    def moments(self, x):
        out = self.net(x)
        if self.heteroscedastic:
            mu, raw = out[:, :self.d_y], out[:, self.d_y:]
        else:
            mu, raw = out, ad.reshape(self.params[f"{self.prefix}.logvar"], (1, -1)) + 0.0 * out
        return mu, ad.clamp(raw, -LOGVAR_BOUND, LOGVAR_BOUND)

    def log_likelihood(self, x, y):
        """Per-row ``log q(y_i | x_i)``."""
        mu, logvar = self.moments(x)
        diff = y - mu
        return -0.5 * ad.sum(diff * diff * ad.exp(-logvar) + logvar + LOG_2PI, axis=1)


# ---------------------------------------------------------------------------
# contrastive


def cosine_matrix_rows(a, b):
    na = ad.norm(a, floor=1e-15)
    nb = ad.norm(b, floor=1e-15)
    return a / na, b / nb


def infonce_loss(z, z_prime, tau=0.5, negatives=10, rng=None, reduction="sum"):
    """Cross-view InfoNCE; row ``i`` of both views is the positive pair.

    Each anchor is contrasted with its positive and ``negatives`` other rows of
    the second view, drawn without replacement (all of them when ``negatives``
    is None or not smaller than ``N - 1``).  Cosine similarity is taken on the
    raw coordinates.
    """
    zv = ad._val(z)
    n = zv.shape[0]
    if np.any(np.linalg.norm(zv, axis=1) == 0) or np.any(np.linalg.norm(ad._val(z_prime), axis=1) == 0):
        warnings.warn("zero-norm embedding row in InfoNCE; its similarities are taken as 0")
    a, b = cosine_matrix_rows(z, z_prime)
    if negatives is None or negatives >= n - 1:
        logits = ad.matmul(a, ad.transpose(b)) / tau
        logp = ad.log_softmax(logits, axis=1)
        diag = logp[np.arange(n), np.arange(n)]
    else:
        rng = rng if rng is not None else np.random.default_rng(0)
        pick = np.argpartition(rng.random((n, n - 1)), negatives - 1, axis=1)[:, :negatives]
        pick = pick + (pick >= np.arange(n)[:, None])
        cand = np.concatenate([np.arange(n)[:, None], pick], axis=1)
        bb = ad.rows(b, cand)  # (n, 1 + negatives, d)
        logits = ad.sum(ad.reshape(a, (n, 1, -1)) * bb, axis=2) / tau
        diag = ad.log_softmax(logits, axis=1)[:, 0]
    loss = -ad.sum(diag)
    return loss / n if reduction == "mean" else loss


# ---------------------------------------------------------------------------
# mutual information


def club_estimate(q, x, y, negatives=10, rng=None):
    """CLUB upper bound ``mean_i [log q(y_i|x_i) - mean_j log q(y_j|x_i)]``.

    ``negatives=None`` averages over the whole population (closed form in the
    Gaussian moments); otherwise ``negatives`` indices ``j`` per row are drawn
    uniformly with replacement.
    """
    mu, logvar = q.moments(x)
    inv_var = ad.exp(-logvar)
    diff = y - mu
    positive = -0.5 * ad.sum(diff * diff * inv_var + logvar, axis=1)
    yv = ad._val(y)
    if negatives is None:
        y_mean = ad.mean(y, axis=0, keepdims=True)
        y_sq = ad.mean(y * y, axis=0, keepdims=True)
        second = y_sq - 2.0 * mu * y_mean + mu * mu
        negative = -0.5 * ad.sum(second * inv_var + logvar, axis=1)
    else:
        rng = rng if rng is not None else np.random.default_rng(0)
        n = yv.shape[0]
        idx = rng.integers(0, n, size=(n, negatives))
        yj = ad.rows(y, idx)  # (n, k, d)
        dj = yj - ad.reshape(mu, (n, 1, -1))
        per = ad.sum(dj * dj * ad.reshape(inv_var, (n, 1, -1)), axis=2)
        negative = -0.5 * (ad.mean(per, axis=1) + ad.sum(logvar, axis=1))
    return ad.mean(positive - negative)


def club_mi_loss(z_st, z_he, q, c, geom=None, negatives=10, rng=None):
    """CLUB bound between the tangent images of the two embedding matrices."""
    geom = geom or PoincareBall()
    return club_estimate(q, geom.logmap0(z_st, c), geom.logmap0(z_he, c), negatives, rng)


def q_theta_fit_step(q, x, y, optimizer):
    """One ascent step on ``mean log q(y|x)`` with the inputs detached."""
    x, y = ad.stop_gradient(x), ad.stop_gradient(y)
    optimizer.zero_grad()
    nll = -ad.mean(q.log_likelihood(x, y))
    ad.backward(nll)
    optimizer.step()
    return -nll.item()


# ---------------------------------------------------------------------------
# discrimination


class Discriminator:
    """Hyperbolic two-layer perceptron: Mobius affine map, log map, ReLU, linear."""

    def __init__(self, params, d, d_hidden, rng, prefix="disc"):
        self.params = params
        self.prefix = prefix
        params.add(f"{prefix}.W1", glorot(rng, d_hidden, d))
        params.add(f"{prefix}.b1", np.zeros(d_hidden))
        params.add(f"{prefix}.W2", glorot(rng, 1, d_hidden))
        params.add(f"{prefix}.b2", np.zeros(1))

    def logits(self, z, c, geom):
        p, k = self.params, self.prefix
        h = hyperbolic_linear(z, p[f"{k}.W1"], p[f"{k}.b1"], c, geom)
        t = ad.relu(geom.logmap0(h, c))
        return ad.reshape(ad.matmul(t, ad.transpose(p[f"{k}.W2"])) + p[f"{k}.b2"], (-1,))

    def __call__(self, z, c, geom):
        return ad.sigmoid(self.logits(z, c, geom))


def discriminator_loss(z_st, z_he, disc, c, geom=None, mode="cooperative"):
    """Binary cross-entropy for telling rows of ``z_st`` (label 0) from ``z_he`` (label 1).

    ``cooperative``: encoders and discriminator all descend this loss, pushing
    the two matrices apart.  ``adversarial``: encoder gradients are reversed.
    """
    if mode not in ("cooperative", "adversarial"):
        raise ValueError("mode must be 'cooperative' or 'adversarial'")
    geom = geom or PoincareBall()
    if mode == "adversarial":
        z_st, z_he = ad.grad_reverse(z_st), ad.grad_reverse(z_he)
    l0 = disc.logits(z_st, c, geom)
    l1 = disc.logits(z_he, c, geom)
    n = ad._val(l0).shape[0] + ad._val(l1).shape[0]
    return (ad.sum(ad.softplus(l0)) + ad.sum(ad.softplus(-l1))) / n


def disentangle_loss(l_mi, l_df, lambda_dis=0.5):
    return l_mi + lambda_dis * l_df


def fuse(z_st, z_se, c, geom=None):
    geom = geom or PoincareBall()
    if ad._val(z_st).shape != ad._val(z_se).shape:
        raise ValueError("fusion needs equally shaped matrices")
    return geom.mobius_add(z_st, z_se, c)


# ---------------------------------------------------------------------------
# downstream tasks


def cross_entropy(logits, labels):
    logp = ad.log_softmax(logits, axis=1)
    return -ad.mean(logp[np.arange(len(labels)), labels])


def nc_loss(z, nodes, labels, classifier, c, geom=None):
    """Mean negative log-likelihood of ``labels[nodes]`` under the classifier."""
    geom = geom or PoincareBall()
    nodes = np.asarray(nodes)
    y = np.asarray(labels)[nodes]
    if np.any(y < 0):
        raise ValueError("training node without a label")
    logits = classifier(geom.logmap0(ad.rows(z, nodes), c))
    return cross_entropy(logits, y)


def pair_logits(z, pairs, predictor, c, geom=None):
    geom = geom or PoincareBall()
    t = geom.logmap0(z, c)
    pairs = np.asarray(pairs).reshape(-1, 2)
    feats = ad.concat([ad.rows(t, pairs[:, 0]), ad.rows(t, pairs[:, 1])], axis=1)
    return ad.reshape(predictor(feats), (-1,))


def bce_pos_neg(pos_logits, neg_logits):
    """``-mean log p(pos) - mean log(1 - p(neg))`` from logits."""
    return ad.mean(ad.softplus(-pos_logits)) + ad.mean(ad.softplus(neg_logits))


def lp_loss(z, positives, negatives, predictor, c, geom=None):
    return bce_pos_neg(pair_logits(z, positives, predictor, c, geom),
                       pair_logits(z, negatives, predictor, c, geom))


def total_loss(task_z, task_st, task_se, l_dis, l_cl, weights):
    """Weighted sum of the task loss on the fused, structural and semantic
    embeddings plus the disentangling and contrastive terms.  Missing terms
    (``None``) are skipped."""
    loss = task_z
    if task_st is not None:
        loss = loss + weights.lambda1 * task_st
    if task_se is not None:
        loss = loss + weights.lambda1 * task_se
    if l_dis is not None and weights.lambda2:
        loss = loss + weights.lambda2 * l_dis
    if l_cl is not None and weights.lambda3:
        loss = loss + weights.lambda3 * l_cl
    return loss
