import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats

from rltrack.nn import (CKPT_MAGIC, MLP, Adam, GaussianPolicyHead, KFACStats, RMSProp, ShapeError,
                        gaussian_entropy, gaussian_kl, gaussian_logprob, kfac_directions,
                        kfac_step, layer_matrices, load_checkpoint, log1m_tanh2,
                        save_checkpoint, set_layer_matrices, squashed_logprob, squashed_sample)


def random_net(seed):
    rng = np.random.default_rng(seed)
    depth = rng.integers(1, 4)
    widths = [int(rng.integers(2, 7))] + [int(rng.integers(2, 9)) for _ in range(depth)]
    act = ["relu", "tanh"][seed % 2]
    return MLP(widths, act, rng=rng, dtype=np.float64), rng


def loss_and_grads(net, x, w):
    y, cache = net.forward(x)
    grads, dx, _ = net.backward(cache, w)
    return float(np.sum(w * y)), grads, dx


@pytest.mark.parametrize("seed", range(10))
def test_gradient_check(seed):
    net, rng = random_net(seed)
    x = rng.normal(size=(5, net.widths[0]))
    w = rng.normal(size=(5, net.widths[-1]))
    _, grads, dx = loss_and_grads(net, x, w)
    h = 1e-6
    flat = net.get_flat()
    num = np.zeros_like(flat)
    for k in range(flat.size):
        for sgn in (1, -1):
            f = flat.copy()
            f[k] += sgn * h
            net.set_flat(f)
            num[k] += sgn * float(np.sum(w * net(x)))
    num /= 2 * h
    net.set_flat(flat)
    ana = net.flatten_grads(grads)
    rel = np.abs(ana - num) / np.maximum(1e-8, np.abs(ana) + np.abs(num))
    assert rel.max() < 1e-4
    # input gradient
    numx = np.zeros_like(x)
    for idx in np.ndindex(*x.shape):
        xp, xm = x.copy(), x.copy()
        xp[idx] += h
        xm[idx] -= h
        numx[idx] = (np.sum(w * net(xp)) - np.sum(w * net(xm))) / (2 * h)
    assert np.allclose(dx, numx, rtol=1e-5, atol=1e-7)


@pytest.mark.parametrize("seed", range(4))
def test_jvp_matches_finite_difference(seed):
    net, rng = random_net(seed)
    x = rng.normal(size=(6, net.widths[0]))
    _, cache = net.forward(x)
    tangent = [rng.normal(size=p.shape) for p in net.params]
    jv = net.jvp(cache, tangent)
    h = 1e-6
    base = net.get_flat()
    t = net.flatten_grads(tangent)
    net.set_flat(base + h * t)
    yp = net(x)
    net.set_flat(base - h * t)
    ym = net(x)
    net.set_flat(base)
    assert np.allclose(jv, (yp - ym) / (2 * h), rtol=1e-5, atol=1e-7)


def test_param_grads_flag_keeps_input_grad():
    net, rng = random_net(3)
    x = rng.normal(size=(4, net.widths[0]))
    y, cache = net.forward(x)
    g1, dx1, _ = net.backward(cache, np.ones_like(y))
    g2, dx2, _ = net.backward(cache, np.ones_like(y), param_grads=False)
    assert np.array_equal(dx1, dx2)
    assert all(g is None for g in g2) and all(g is not None for g in g1)


def test_init_bounds_and_shapes():
    net = MLP((10, 7, 3), rng=0)
    W0, b0 = net.layer(0)
    assert W0.shape == (10, 7) and b0.shape == (7,)
    assert np.abs(W0).max() <= 1 / math.sqrt(10)
    assert net.params[0].dtype == np.float32
    with pytest.raises(ShapeError):
        net(np.zeros((2, 9)))
    with pytest.raises(ShapeError):
        MLP((4,))


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 8), st.integers(1, 6), st.integers(0, 10 ** 6))
def test_forward_shape_property(n, out, seed):
    net = MLP((5, 4, out), "tanh", rng=seed)
    y = net(np.random.default_rng(seed).normal(size=(n, 5)))
    assert y.shape == (n, out) and np.all(np.isfinite(y))


# -- distributions -------------------------------------------------------------

def test_gaussian_logprob_entropy_kl_against_scipy():
    rng = np.random.default_rng(0)
    mean = rng.normal(size=(20, 3))
    ls = rng.normal(scale=0.5, size=(20, 3))
    a = rng.normal(size=(20, 3))
    ref = stats.norm.logpdf(a, mean, np.exp(ls)).sum(axis=1)
    assert np.allclose(gaussian_logprob(mean, ls, a), ref, atol=1e-12)
    assert np.allclose(gaussian_entropy(ls), stats.norm.entropy(0, np.exp(ls)).sum(axis=1))
    mu1, ls1 = rng.normal(size=3), rng.normal(scale=0.3, size=3)
    mu0, ls0 = rng.normal(size=3), rng.normal(scale=0.3, size=3)
    # per-dimension KL by quadrature
    ref = 0.0
    for d in range(3):
        p = stats.norm(mu0[d], math.exp(ls0[d]))
        q = stats.norm(mu1[d], math.exp(ls1[d]))
        ref += integrate.quad(lambda x: p.pdf(x) * (p.logpdf(x) - q.logpdf(x)), -30, 30)[0]
    assert math.isclose(gaussian_kl(mu0, ls0, mu1, ls1), ref, rel_tol=1e-7)
    assert gaussian_kl(mu0, ls0, mu0, ls0) == pytest.approx(0.0, abs=1e-12)


def test_log1m_tanh2_stable():
    u = np.array([-30.0, -3.0, 0.0, 0.7, 25.0])
    direct = np.log1p(-np.tanh(u[1:4]) ** 2)
    assert np.allclose(log1m_tanh2(u)[1:4], direct)
    assert np.all(np.isfinite(log1m_tanh2(u)))


def test_squashed_density_integrates_and_matches_change_of_variables():
    mean, ls = np.array([[0.3]]), np.array([[-0.4]])

    def pdf(a):
        return math.exp(squashed_logprob(mean, ls, np.array([[a]]))[0])

    total = integrate.quad(pdf, -1 + 1e-9, 1 - 1e-9, limit=200)[0]
    assert total == pytest.approx(1.0, abs=1e-6)
    eps = np.random.default_rng(1).standard_normal((50, 3))
    m3 = np.tile([[0.2, -0.5, 1.0]], (50, 1))
    s3 = np.tile([[-0.3, 0.1, -1.0]], (50, 1))
    a, logp, u = squashed_sample(m3, s3, eps)
    assert np.allclose(a, np.tanh(u))
    ok = np.all(np.abs(a) < 1 - 1e-6, axis=1)
    assert np.allclose(logp[ok], squashed_logprob(m3, s3, a)[ok], atol=1e-6)


def test_squashed_monte_carlo_histogram_within_2_percent():
    rng = np.random.default_rng(2)
    n = 400_000
    mean, ls = np.array([[0.4]]), np.array([[-0.7]])
    a, _, _ = squashed_sample(np.full((n, 1), 0.4), np.full((n, 1), -0.7), rng.standard_normal((n, 1)))
    edges = np.linspace(-0.2, 0.9, 12)
    counts, _ = np.histogram(a[:, 0], bins=edges)
    for lo, hi, c in zip(edges[:-1], edges[1:], counts):
        p = integrate.quad(lambda x: math.exp(squashed_logprob(mean, ls, np.array([[x]]))[0]), lo, hi)[0]
        assert abs(c / n - p) / p < 0.02


def test_policy_head_sample_and_logprob():
    net = MLP((4, 8, 3), rng=0, dtype=np.float64)
    head = GaussianPolicyHead(net, log_std_init=-0.5)
    s = np.random.default_rng(0).normal(size=(7, 4))
    eps = np.random.default_rng(1).normal(size=(7, 3))
    a, logp = head.sample(s, eps)
    assert np.allclose(head.logprob(s, a), logp)
    assert np.allclose(head.entropy(s), gaussian_entropy(np.full((7, 3), -0.5)))
    sq = GaussianPolicyHead(MLP((4, 8, 6), rng=0, dtype=np.float64), state_std=True, squash=True)
    a2, lp2 = sq.sample(s, eps)
    assert np.all(np.abs(a2) < 1) and np.all(np.isfinite(lp2))
    assert np.allclose(sq.mode(s), np.tanh(sq.dist(s)[0]))


# -- optimizers ----------------------------------------------------------------

def test_adam_first_step_is_lr_times_sign():
    g = [np.array([3.0, -0.02, 1e-3]), np.array([[-5.0]])]
    p = [np.zeros(3), np.zeros((1, 1))]
    out = Adam(0.01).step([x.copy() for x in p], g)
    assert np.allclose(out[0], -0.01 * np.sign(g[0]), rtol=1e-4)
    assert np.allclose(out[1], 0.01, rtol=1e-6)


def test_adam_and_rmsprop_minimise_quadratic():
    target = np.array([1.0, -2.0, 0.5])
    for opt in (Adam(0.05), RMSProp(0.01)):
        p = [np.zeros(3)]
        for _ in range(2000):
            p = opt.step(p, [p[0] - target])
        assert np.allclose(p[0], target, atol=0.05)


def test_rmsprop_first_step():
    g = np.array([2.0, -0.5])
    out = RMSProp(0.001, rho=0.99).step([np.zeros(2)], [g])[0]
    assert np.allclose(out, -0.001 * g / (np.sqrt(0.01) * np.abs(g) + 1e-8))


# -- K-FAC -------------------------------------------------------------------------

def test_kfac_identity_factors_return_gradient():
    rng = np.random.default_rng(0)
    g = rng.normal(size=(5, 3))
    d = kfac_directions([g], [np.eye(5)], [np.eye(3)], damping=0.0)[0]
    assert np.allclose(d, g)


def test_kfac_step_respects_kl_cap():
    rng = np.random.default_rng(1)
    g = rng.normal(size=(4, 2)) * 50
    p = np.zeros((4, 2))
    lr, delta = 0.5, 1e-3
    new, _, nu = kfac_step([p], [g], [np.eye(4)], [np.eye(2)], lr, delta, damping=0.0)
    assert nu < 1
    step = (p - new[0]) / lr
    # predicted KL 0.5 * (lr*nu)^2 * g^T F^-1 g equals delta at the cap
    quad = float(np.sum(g * g))
    assert 0.5 * (lr * nu) ** 2 * quad == pytest.approx(delta, rel=1e-10)
    assert np.allclose(step, nu * g)
    _, _, nu_small = kfac_step([p], [g * 1e-6], [np.eye(4)], [np.eye(2)], lr, delta, damping=0.0)
    assert nu_small == 1.0


def test_kfac_matches_exact_fisher_on_linear_gaussian_model():
    # y ~ N(W^T x + b, I): K-FAC factors are exact for one layer
    rng = np.random.default_rng(3)
    net = MLP((4, 2), rng=0, dtype=np.float64)
    n = 40_000
    x = rng.normal(size=(n, 4)) * np.array([1.0, 0.5, 2.0, 0.2]) + 0.3
    y, cache = net.forward(x)
    gs = rng.standard_normal(y.shape)          # sampled output score
    stats_ = KFACStats(net, decay=0.0)
    _, _, dpre = net.backward(cache, gs)
    stats_.update(cache, dpre)
    xa = np.hstack([x, np.ones((n, 1))])
    per = (xa[:, :, None] * gs[:, None, :]).reshape(n, -1)
    F = per.T @ per / n
    grad = rng.normal(size=(5, 2))
    exact = np.linalg.solve(F + 1e-6 * np.eye(10), grad.ravel())
    approx = kfac_directions([grad], stats_.A, stats_.G, damping=1e-6)[0].ravel()
    cos = exact @ approx / (np.linalg.norm(exact) * np.linalg.norm(approx))
    assert cos > 0.99


def test_layer_matrices_round_trip():
    net = MLP((3, 4, 2), rng=0)
    mats = layer_matrices(net)
    assert [m.shape for m in mats] == [(4, 4), (5, 2)]
    other = MLP((3, 4, 2), rng=1)
    set_layer_matrices(other, mats)
    assert all(np.array_equal(a, b) for a, b in zip(net.params, other.params))


# -- checkpoints ---------------------------------------------------------------

def test_checkpoint_round_trip_is_bit_exact(tmp_path):
    nets = {"actor": MLP((5, 6, 3), rng=0), "critic": MLP((8, 6, 1), "tanh", rng=1)}
    arrays = {"log_std": np.array([-0.1, 0.2, 0.3], dtype=np.float32)}
    p1, p2 = tmp_path / "a.bin", tmp_path / "b.bin"
    save_checkpoint(p1, nets, arrays, {"seed": 7})
    n2, a2, meta = load_checkpoint(p1)
    assert meta == {"seed": 7}
    for k in nets:
        assert all(np.array_equal(x, y) for x, y in zip(nets[k].params, n2[k].params))
        assert n2[k].activation == nets[k].activation
    assert np.array_equal(a2["log_std"], arrays["log_std"])
    save_checkpoint(p2, n2, a2, meta)
    assert p1.read_bytes() == p2.read_bytes()
    assert p1.read_bytes().startswith(CKPT_MAGIC)


def test_checkpoint_rejects_corruption(tmp_path):
    p = tmp_path / "c.bin"
    save_checkpoint(p, {"n": MLP((2, 2), rng=0)})
    raw = p.read_bytes()
    p.write_bytes(raw[:-4])
    with pytest.raises(ValueError):
        load_checkpoint(p)
    p.write_bytes(b"junk" + raw)
    with pytest.raises(ValueError):
        load_checkpoint(p)
