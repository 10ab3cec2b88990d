import math

import numpy as np
import pytest

from conftest import gradcheck, toy_graph
from hypdis import autodiff as ad
from hypdis import hetgraph as hg
from hypdis import manifold as mf
from hypdis import objectives as ob
from hypdis.evaluation import mi_probe
from hypdis.layers import ParamStore
from hypdis.trainer import Model, TrainConfig, epoch_inputs, forward_loss

BALL = mf.PoincareBall()


def val(x):
    return float(np.asarray(ad._val(x)))


def ball(rng, n, d, c=1.0, scale=0.3):
    return mf.expmap0(rng.normal(size=(n, d)) * scale, c)


# -- InfoNCE ----------------------------------------------------------------


def test_infonce_hand_value():
    z = np.eye(2)
    loss = ob.infonce_loss(z, z, tau=1.0, negatives=None)
    assert val(loss) == pytest.approx(2 * math.log(1 + math.exp(-1)), abs=1e-12)
    assert val(loss) == pytest.approx(0.62652, abs=1e-5)
    mean = ob.infonce_loss(z, z, tau=1.0, negatives=None, reduction="mean")
    assert val(mean) == pytest.approx(math.log(1 + math.exp(-1)), abs=1e-12)


def test_infonce_single_node_zero():
    z = np.array([[0.3, -0.2]])
    assert val(ob.infonce_loss(z, z * 2, negatives=None)) == pytest.approx(0.0, abs=1e-15)


def test_infonce_monotone_in_negative_similarity():
    a = np.array([[1.0, 0.0], [0.0, 1.0]])
    near = np.array([[1.0, 0.0], [0.6, 0.8]])   # second row closer to the first anchor
    far = np.array([[1.0, 0.0], [-0.6, 0.8]])
    assert val(ob.infonce_loss(a, far, negatives=None)) < val(ob.infonce_loss(a, near, negatives=None))


def test_infonce_zero_row_warns_and_is_finite():
    z = np.array([[0.0, 0.0], [0.2, 0.1], [0.1, -0.3]])
    with pytest.warns(UserWarning, match="zero-norm"):
        loss = ob.infonce_loss(z, z, negatives=None)
    assert np.isfinite(val(loss))


def test_infonce_sampled_negatives_cover_population():
    rng = np.random.default_rng(0)
    z, zp = rng.normal(size=(5, 3)), rng.normal(size=(5, 3))
    full = val(ob.infonce_loss(z, zp, negatives=None))
    # with n - 1 negatives drawn without replacement every other row is used
    assert val(ob.infonce_loss(z, zp, negatives=4)) == pytest.approx(full, abs=1e-12)
    sub = ob.infonce_loss(z, zp, negatives=2, rng=np.random.default_rng(1))
    assert 0 < val(sub) < full


# -- CLUB -------------------------------------------------------------------


def gaussian_pairs(rho, n=2000, d=4, seed=0):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, d))
    y = rho * x + math.sqrt(1 - rho ** 2) * rng.normal(size=(n, d))
    return x, y


def test_club_constant_q_is_zero():
    rng = np.random.default_rng(0)
    params = ParamStore()
    q = ob.GaussianConditional(params, 3, 3, rng)
    params["club.W2"].value[:] = 0.0
    params["club.b2"].value = rng.normal(size=6)
    x, y = rng.normal(size=(50, 3)), rng.normal(size=(50, 3))
    assert val(ob.club_estimate(q, x, y, negatives=None)) == pytest.approx(0.0, abs=1e-12)


def test_club_gaussian_oracles():
    x, y = gaussian_pairs(0.9)
    analytic = -0.5 * 4 * math.log(1 - 0.81)
    assert mi_probe(x, y, geom=mf.Euclidean(), seed=0).estimate >= analytic - 0.05
    x, y = gaussian_pairs(0.0, seed=1)
    assert abs(mi_probe(x, y, geom=mf.Euclidean(), seed=1).estimate) <= 0.05


def test_club_sampled_negatives_close_to_population():
    x, y = gaussian_pairs(0.6, n=400)
    rng = np.random.default_rng(0)
    params = ParamStore()
    q = ob.GaussianConditional(params, 4, 4, rng)
    opt = ad.Adam(list(params.values()), lr=0.01)
    for _ in range(200):
        ob.q_theta_fit_step(q, x, y, opt)
    full = val(ob.club_estimate(q, x, y, None))
    sampled = val(ob.club_estimate(q, x, y, 200, np.random.default_rng(1)))
    assert sampled == pytest.approx(full, rel=0.1)


def test_q_fit_beats_constant_baseline():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(600, 3))
    y = x + 0.1 * rng.normal(size=(600, 3))
    params = ParamStore()
    q = ob.GaussianConditional(params, 3, 3, rng)
    opt = ad.Adam(list(params.values()), lr=0.01)
    for _ in range(500):
        ob.q_theta_fit_step(q, x[:400], y[:400], opt)
    held = val(ad.mean(q.log_likelihood(x[400:], y[400:])))
    mu, var = y[:400].mean(0), y[:400].var(0)
    baseline = float(np.mean(np.sum(-0.5 * ((y[400:] - mu) ** 2 / var + np.log(var) + ob.LOG_2PI), axis=1)))
    assert held > baseline


def test_q_fit_is_detached_from_encoder():
    rng = np.random.default_rng(3)
    enc = ad.Parameter(rng.normal(size=(20, 2)))
    params = ParamStore()
    q = ob.GaussianConditional(params, 2, 2, rng)
    opt = ad.Adam(list(params.values()), lr=0.01)
    ob.q_theta_fit_step(q, ad.tanh(enc), enc * 2.0, opt)
    assert enc.grad is None


def test_logvar_clamped():
    rng = np.random.default_rng(4)
    params = ParamStore()
    q = ob.GaussianConditional(params, 2, 2, rng)
    params["club.b2"].value[2:] = [50.0, -50.0]
    _, logvar = q.moments(rng.normal(size=(5, 2)))
    assert np.all(np.abs(logvar.value) <= ob.LOGVAR_BOUND)


# -- discrimination ---------------------------------------------------------


def make_disc(d=3, hidden=4, seed=0):
    params = ParamStore()
    return params, ob.Discriminator(params, d, hidden, np.random.default_rng(seed))


def test_uninformative_discriminator_ln2():
    params, disc = make_disc()
    params["disc.W2"].value[:] = 0.0
    rng = np.random.default_rng(0)
    loss = ob.discriminator_loss(ball(rng, 6, 3), ball(rng, 6, 3), disc, 1.0)
    assert val(loss) == pytest.approx(math.log(2), abs=1e-12)


def test_perfect_discriminator_near_zero():
    params, disc = make_disc(d=2, hidden=2)
    params["disc.W1"].value = np.eye(2)
    params["disc.W2"].value = np.array([[-200.0, 200.0]])
    st = np.tile([0.5, 0.0], (4, 1))
    he = np.tile([0.0, 0.5], (4, 1))
    assert val(ob.discriminator_loss(st, he, disc, 1.0)) < 1e-6


def test_discriminator_swap_symmetry():
    params, disc = make_disc()
    rng = np.random.default_rng(1)
    a, b = ball(rng, 5, 3), ball(rng, 7, 3)
    before = val(ob.discriminator_loss(a, b, disc, 1.0))
    params["disc.W2"].value = -params["disc.W2"].value
    params["disc.b2"].value = -params["disc.b2"].value
    after = val(ob.discriminator_loss(b, a, disc, 1.0))
    assert after == pytest.approx(before, abs=1e-12)


def test_adversarial_mode_reverses_encoder_gradient():
    params, disc = make_disc()
    rng = np.random.default_rng(2)
    a0, b = ball(rng, 4, 3), ball(rng, 4, 3)
    grads = {}
    for mode in ("cooperative", "adversarial"):
        a = ad.Parameter(a0.copy())
        for p in params.values():
            p.grad = None
        ad.backward(ob.discriminator_loss(a, b, disc, 1.0, mode=mode))
        grads[mode] = (a.grad.copy(), params["disc.W2"].grad.copy())
    np.testing.assert_allclose(grads["adversarial"][0], -grads["cooperative"][0], atol=1e-15)
    np.testing.assert_allclose(grads["adversarial"][1], grads["cooperative"][1], atol=1e-15)
    with pytest.raises(ValueError):
        ob.discriminator_loss(a0, b, disc, 1.0, mode="sideways")


def test_disentangle_arithmetic():
    assert ob.disentangle_loss(0.2, 0.6, 0.5) == pytest.approx(0.5)
    assert ob.disentangle_loss(0.2, 0.6, 0.0) == pytest.approx(0.2)


def test_disentangle_gradient_reaches_both_encoders():
    rng = np.random.default_rng(3)
    params, disc = make_disc()
    qp = ParamStore()
    q = ob.GaussianConditional(qp, 3, 3, rng)
    st, he = ad.Parameter(ball(rng, 6, 3)), ad.Parameter(ball(rng, 6, 3))
    for lam in (0.0, 0.5):
        st.grad = he.grad = None
        l_mi = ob.club_mi_loss(st, he, q, 1.0, negatives=None)
        l_df = ob.discriminator_loss(st, he, disc, 1.0)
        ad.backward(ob.disentangle_loss(l_mi, l_df, lam))
        assert np.abs(st.grad).max() > 0 and np.abs(he.grad).max() > 0


# -- fusion -----------------------------------------------------------------


def test_fusion():
    rng = np.random.default_rng(4)
    c = 0.7
    z_st, z_se = ball(rng, 5, 3, c), ball(rng, 5, 3, c)
    np.testing.assert_allclose(ob.fuse(z_st, np.zeros_like(z_st), c), z_st, atol=1e-15)
    z = ob.fuse(z_st, z_se, c)
    for i in range(5):
        x, y = z_st[i], z_se[i]
        xy, x2, y2 = x @ y, x @ x, y @ y
        expect = ((1 + 2 * c * xy + c * y2) * x + (1 - c * x2) * y) / (1 + 2 * c * xy + c * c * x2 * y2)
        np.testing.assert_allclose(z[i], expect, atol=1e-12)
    assert np.all(np.linalg.norm(z, axis=1) < 1 / math.sqrt(c))
    with pytest.raises(ValueError):
        ob.fuse(z_st, z_se[:3], c)


# -- tasks ------------------------------------------------------------------


class Fixed:
    """Classifier returning preset logits regardless of the input."""

    def __init__(self, logits):
        self.logits = np.asarray(logits, dtype=float)

    def __call__(self, x):
        return ad.Tensor(self.logits[: ad._val(x).shape[0]])


def test_nc_loss_cases():
    z = np.zeros((3, 2))
    labels = np.array([0, 2, 1])
    perfect = Fixed(np.eye(3)[labels] * 100.0)
    assert val(ob.nc_loss(z, [0, 1, 2], labels, perfect, 1.0)) == pytest.approx(0.0, abs=1e-12)
    uniform = Fixed(np.zeros((3, 3)))
    assert val(ob.nc_loss(z, [0, 1, 2], labels, uniform, 1.0)) == pytest.approx(math.log(3))
    with pytest.raises(ValueError):
        ob.nc_loss(z, [0, 1], np.array([0, -1, 1]), uniform, 1.0)


def test_lp_loss_cases():
    z = np.zeros((4, 2))
    pos, neg = np.array([[0, 1], [2, 3]]), np.array([[0, 2], [1, 3]])
    half = lambda x: ad.Tensor(np.zeros((ad._val(x).shape[0], 1)))
    assert val(ob.lp_loss(z, pos, neg, half, 1.0)) == pytest.approx(2 * math.log(2))
    sure = ob.bce_pos_neg(np.full(3, 100.0), np.full(5, -100.0))
    assert val(sure) == pytest.approx(0.0, abs=1e-12)
    rng = np.random.default_rng(0)
    pl, nl = rng.normal(size=6), rng.normal(size=4)
    a = val(ob.bce_pos_neg(pl, nl))
    b = val(ob.bce_pos_neg(pl[::-1].copy(), rng.permutation(nl)))
    assert a == pytest.approx(b, abs=1e-12)


def test_total_loss_weights():
    w = ob.LossWeights()
    assert (w.lambda1, w.lambda2, w.lambda3) == (0.2, 0.5, 0.05)
    zero = ob.LossWeights(0.0, 0.0, 0.0)
    assert ob.total_loss(1.5, 2.0, 3.0, 4.0, 5.0, zero) == 1.5
    assert ob.total_loss(1.0, 2.0, 3.0, 4.0, 5.0, w) == pytest.approx(1 + 0.2 * 5 + 0.5 * 4 + 0.05 * 5)
    assert ob.total_loss(1.0, None, None, None, None, w) == 1.0
    with pytest.raises(ValueError):
        ob.LossWeights(tau=0.0)
    with pytest.raises(ValueError):
        ob.LossWeights(lambda2=-1.0)


# -- gradients on the toy graph ---------------------------------------------


def toy_embeddings(seed=0):
    rng = np.random.default_rng(seed)
    return ad.Parameter(ball(rng, 10, 3)), ad.Parameter(ball(rng, 10, 3))


def test_gradcheck_infonce():
    a, b = toy_embeddings()
    assert gradcheck(lambda: ob.infonce_loss(a, b, 0.5, 4, np.random.default_rng(0)), [a, b]) <= 1e-3


def test_gradcheck_club_and_q():
    a, b = toy_embeddings(1)
    params = ParamStore()
    q = ob.GaussianConditional(params, 3, 3, np.random.default_rng(0))
    fn = lambda: ob.club_mi_loss(a, b, q, 1.0, negatives=5, rng=np.random.default_rng(1))
    assert gradcheck(fn, [a, b, *params.values()]) <= 1e-3
    fit = lambda: -ad.mean(q.log_likelihood(BALL.logmap0(a, 1.0), BALL.logmap0(b, 1.0)))
    assert gradcheck(fit, list(params.values())) <= 1e-3


def test_gradcheck_discriminator():
    a, b = toy_embeddings(2)
    params, disc = make_disc()
    c = ad.Parameter(np.array(0.2))
    fn = lambda: ob.discriminator_loss(a, b, disc, ad.softplus(c))
    assert gradcheck(fn, [a, b, c, *params.values()]) <= 1e-3


def test_gradcheck_fusion_and_tasks():
    a, b = toy_embeddings(3)
    rng = np.random.default_rng(0)
    params = ParamStore()
    clf = ob.MLP(params, "clf", 3, 4, 2, rng)
    pred = ob.MLP(params, "pred", 6, 4, 1, rng)
    labels = np.array([0, 1] * 5)
    pos, neg = np.array([[0, 4], [1, 5], [2, 6]]), np.array([[0, 7], [3, 9], [2, 8]])

    def fn():
        z = ob.fuse(a, b, 1.0)
        return ob.nc_loss(z, np.arange(6), labels, clf, 1.0) + ob.lp_loss(z, pos, neg, pred, 1.0)

    assert gradcheck(fn, [a, b, *params.values()]) <= 1e-3


@pytest.mark.parametrize("task", ["nc", "lp"])
def test_gradcheck_total_loss_full_model(task):
    g = toy_graph()
    cfg = TrainConfig(task=task, d0=3, hidden=3, out_dim=3, head_hidden=3, cl_negatives=3, mi_negatives=3,
                      lp_target_frac=0.0, perturb_ratio=0.2)
    model = Model(g, cfg)
    split = hg.split_edges(g, seed=0)
    mp = g if task == "nc" else g.with_edges(split.train)
    # move biases off zero so no ReLU sits exactly on its kink
    brng = np.random.default_rng(1)
    for k, p in model.params.items():
        if ".b" in k:
            p.value = p.value + brng.normal(scale=0.1, size=p.value.shape)
    prepared = model.prepare(mp)
    inputs = epoch_inputs(model, g, mp, prepared, split, epoch=0)
    model.embed(mp, prepared, update_cache=True)
    fn = lambda: forward_loss(model, g, split, 0, inputs)[0]
    # a random subset of parameters keeps the finite-difference sweep short
    rng = np.random.default_rng(0)
    names = list(model.params)
    subset = [model.params[k] for k in rng.choice(names, size=len(names) // 2, replace=False)]
    assert gradcheck(fn, subset) <= 1e-3
