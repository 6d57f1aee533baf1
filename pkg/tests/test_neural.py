import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rtopf.neural import (
    Adam,
    GaussianPolicy,
    Mlp,
    Tensor,
    gaussian_kl,
    gaussian_log_prob,
    load_json,
    numeric_gradient,
    save_json,
)


def _check_grad(loss_fn, params, tol=1e-6):
    for p in params:
        p.grad = None
    loss_fn().backward()
    for p in params:
        num = numeric_gradient(lambda: float(loss_fn().data), p)
        np.testing.assert_allclose(p.grad, num, atol=tol, rtol=1e-5)


@pytest.mark.parametrize("op", [
    lambda a, b: (a * b + a / (b * b + 1.0)).sum(),
    lambda a, b: ((a - b) ** 2).mean(),
    lambda a, b: (a.sigmoid() * b.exp()).sum(),
    lambda a, b: (a * a + 1.0).log().sum() + b.clip(-0.5, 0.5).sum(),
    lambda a, b: a.minimum(b).sum() + (a @ b.__class__(np.ones((3, 2)))).relu().sum(),
    lambda a, b: (1.0 - a).sum(axis=0).mean() + (2.0 / (b * b + 1.0)).sum(),
])
def test_tensor_ops_gradients(op):
    rng = np.random.default_rng(1)
    a = Tensor(rng.standard_normal((4, 3)), requires_grad=True)
    b = Tensor(rng.standard_normal((4, 3)), requires_grad=True)
    _check_grad(lambda: op(a, b), [a, b])


def test_broadcast_gradient_is_reduced():
    a = Tensor(np.ones((5, 3)), requires_grad=True)
    b = Tensor(np.array([1.0, 2.0, 3.0]), requires_grad=True)
    (a * b).sum().backward()
    np.testing.assert_allclose(b.grad, [5.0, 5.0, 5.0])
    np.testing.assert_allclose(a.grad, np.tile([1.0, 2.0, 3.0], (5, 1)))


def test_shared_node_accumulates():
    a = Tensor(np.array(3.0), requires_grad=True)
    y = a * a + a
    y.backward()
    assert float(a.grad) == pytest.approx(7.0)


def test_deep_graph_does_not_recurse():
    a = Tensor(np.array(1.0), requires_grad=True)
    y = a
    for _ in range(5000):
        y = y + 0.0
    y.backward()
    assert float(a.grad) == 1.0


@pytest.mark.parametrize("output", ["identity", "sigmoid"])
def test_mlp_parameter_gradients(output):
    rng = np.random.default_rng(0)
    net = Mlp([5, 7, 6, 3], output, rng=rng)
    x = rng.standard_normal((8, 5))
    target = rng.random((8, 3))
    _check_grad(lambda: ((net(x) - target) ** 2).mean(), net.params)


def test_mlp_predict_matches_graph():
    net = Mlp([4, 8, 2], "sigmoid", rng=np.random.default_rng(2))
    x = np.random.default_rng(3).standard_normal((6, 4))
    np.testing.assert_allclose(net.predict(x), net(x).data, atol=1e-15)
    assert np.all((net.predict(x) > 0) & (net.predict(x) < 1))


def test_mlp_rejects_bad_shape():
    with pytest.raises(ValueError):
        Mlp([3])
    with pytest.raises(ValueError):
        Mlp([3, 2], "tanh")


def test_mlp_serialization(tmp_path):
    net = Mlp([3, 5, 2], rng=np.random.default_rng(4))
    save_json({"net": net.to_dict()}, tmp_path / "n.json")
    again = Mlp.from_dict(load_json(tmp_path / "n.json")["net"])
    x = np.random.default_rng(5).standard_normal((4, 3))
    np.testing.assert_array_equal(again.predict(x), net.predict(x))
    clone = net.copy()
    clone.weights[0].data[0, 0] += 1.0
    assert not np.array_equal(clone.predict(x), net.predict(x))


def test_policy_log_prob_gradient():
    rng = np.random.default_rng(6)
    pol = GaussianPolicy.build(4, 3, (6,), rng, log_std=math.log(0.2))
    s = rng.random((5, 4))
    a = rng.random((5, 3))
    _check_grad(lambda: pol.log_prob(s, a).mean(), pol.params)


def test_policy_log_prob_matches_closed_form():
    rng = np.random.default_rng(7)
    pol = GaussianPolicy.build(4, 2, (5,), rng, log_std=math.log(0.3))
    s = rng.random(4)
    smp = pol.sample(s, rng)
    assert np.all((smp.action > 0) & (smp.action < 1))
    assert float(pol.log_prob(s, smp.pre_clip).data) == pytest.approx(smp.log_prob)
    expect = np.sum(gaussian_log_prob(smp.pre_clip, pol.mean(s), pol.log_std.data))
    assert smp.log_prob == pytest.approx(expect)


def test_policy_round_trip():
    pol = GaussianPolicy.build(3, 2, (4,), np.random.default_rng(8))
    again = GaussianPolicy.from_dict(pol.to_dict())
    np.testing.assert_array_equal(again.std, pol.std)
    np.testing.assert_array_equal(again.mean(np.ones(3)), pol.mean(np.ones(3)))


def test_policy_needs_sigmoid_head():
    with pytest.raises(ValueError):
        GaussianPolicy(Mlp([2, 2]))


def test_kl_monte_carlo():
    rng = np.random.default_rng(9)
    mu_p, ls_p = np.array([0.3, 0.6]), np.log([0.1, 0.2])
    mu_q, ls_q = np.array([0.35, 0.5]), np.log([0.15, 0.1])
    x = mu_p + np.exp(ls_p) * rng.standard_normal((200_000, 2))
    ratio = (gaussian_log_prob(x, mu_p, ls_p) - gaussian_log_prob(x, mu_q, ls_q)).sum(axis=1)
    se = ratio.std() / math.sqrt(len(ratio))
    assert abs(ratio.mean() - gaussian_kl(mu_p, ls_p, mu_q, ls_q)) < 3 * se


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-2, 2), min_size=4, max_size=4), st.lists(st.floats(-3, 1), min_size=4, max_size=4))
def test_kl_nonnegative_and_zero_on_self(mus, lss):
    mu, ls = np.array(mus[:2]), np.array(lss[:2])
    mu2, ls2 = np.array(mus[2:]), np.array(lss[2:])
    assert gaussian_kl(mu, ls, mu2, ls2) >= -1e-12
    assert gaussian_kl(mu, ls, mu, ls) == pytest.approx(0.0, abs=1e-12)


def test_adam_minimizes_quadratic():
    w = Tensor(np.array([3.0, -2.0]), requires_grad=True)
    opt = Adam([w], lr=0.1)
    for _ in range(500):
        opt.zero_grad()
        ((w - 1.0) ** 2).sum().backward()
        opt.step()
    np.testing.assert_allclose(w.data, [1.0, 1.0], atol=1e-3)


def test_adam_first_step_is_lr_sized():
    w = Tensor(np.array([0.0]), requires_grad=True)
    opt = Adam([w], lr=0.01)
    (w * 1000.0).sum().backward()
    opt.step()
    assert w.data[0] == pytest.approx(-0.01, rel=1e-6)


def test_adam_state_round_trip():
    w = Tensor(np.ones(3), requires_grad=True)
    a = Adam([w], lr=0.05)
    (w * w).sum().backward()
    a.step()
    b = Adam([Tensor(w.data.copy(), requires_grad=True)], lr=1.0)
    b.load_state_dict(a.state_dict())
    assert b.t == 1 and b.lr == 0.05
    np.testing.assert_array_equal(b.m[0], a.m[0])
    with pytest.raises(ValueError):
        Adam([w], lr=0.0)


def test_zero_sigmoid_network_outputs_half():
    net = Mlp([4, 5, 3], "sigmoid")
    for p in net.params:
        p.data = np.zeros_like(p.data)
    np.testing.assert_array_equal(net.predict(np.random.default_rng(0).normal(size=(6, 4))), 0.5)


def test_identity_layer_passes_input_through():
    net = Mlp([3, 3])
    net.weights[0].data = np.eye(3)
    x = np.random.default_rng(1).normal(size=(4, 3))
    np.testing.assert_array_equal(net.predict(x), x)
    np.testing.assert_array_equal(net(x).data, x)


def test_forward_matches_matrix_chain():
    rng = np.random.default_rng(2)
    net = Mlp([5, 7, 6, 2], rng=rng)
    x = rng.normal(size=(3, 5))
    h = x
    for k, (w, b) in enumerate(zip(net.weights, net.biases)):
        h = h.dot(w.data) + b.data
        if k < 2:
            h = np.where(h > 0, h, 0.0)
    np.testing.assert_allclose(net(x).data, h, atol=1e-12)


def test_adam_with_zero_gradient_leaves_parameters():
    p = Tensor(np.array([1.0, -2.0]), requires_grad=True)
    opt = Adam([p], lr=0.1)
    p.grad = np.zeros(2)
    for _ in range(5):
        opt.step()
    np.testing.assert_array_equal(p.data, [1.0, -2.0])
