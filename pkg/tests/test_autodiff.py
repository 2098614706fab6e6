import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dalab.autodiff import (
    OPS, Adam, Graph, NonFiniteError, Op, ShapeError, bind_params, forward_backward, grad_check, rel_error,
)
from dalab.model import LayeredNet, mlp_specs


def _scalar_adam(w, grad_fn, steps, lr, b1=0.9, b2=0.999, eps=1e-8):
    # independent scalar reference
    m = v = 0.0
    out = []
    for t in range(1, steps + 1):
        g = grad_fn(w)
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        w = w - lr * (m / (1 - b1**t)) / (math.sqrt(v / (1 - b2**t)) + eps)
        out.append(w)
    return out


def test_identity_relu_mean_gradient():
    rng = np.random.default_rng(0)
    X = rng.uniform(0.5, 2.0, size=(6, 3))
    g = Graph()
    pn = bind_params(g, {"W": np.eye(3), "b": np.zeros(3)})
    out = g.mean(g.relu(g.affine(g.leaf(X), pn["W"], pn["b"])))
    g.backward(out)
    # d mean / d W[a, c] = mean_n X[n, a] / d  (one of d outputs per column)
    expected = np.repeat(X.mean(axis=0)[:, None] / 3, 3, axis=1)
    np.testing.assert_allclose(pn["W"].grad, expected, rtol=0, atol=1e-15)


def test_uniform_softmax_cross_entropy():
    g = Graph()
    loss = g.softmax_cross_entropy(g.leaf(np.zeros((4, 10))), np.array([0, 3, 5, 9]))
    assert float(loss.value) == pytest.approx(math.log(10), abs=1e-12)


def test_forward_backward_repeatable():
    net = LayeredNet(mlp_specs([4, 8, 8, 3]), seed=1)
    rng = np.random.default_rng(2)
    X, y = rng.standard_normal((16, 4)), rng.integers(0, 3, 16)
    a = forward_backward(net, X, y)
    b = forward_backward(net, X, y)
    assert a[0] == b[0]
    assert all(np.array_equal(a[1][k], b[1][k]) for k in net.params)
    assert set(a[1]) == set(net.params)


def test_forward_backward_bce():
    net = LayeredNet(mlp_specs([3, 5, 1]), seed=0)
    X = np.ones((4, 3))
    loss, grads = forward_backward(net, X, np.array([[0.0], [1.0], [1.0], [0.0]]), loss="binary_cross_entropy")
    assert np.isfinite(loss) and grads["W1"].shape == (3, 5)
    with pytest.raises(ValueError, match="unknown loss"):
        forward_backward(net, X, np.zeros(4), loss="hinge")


def test_shape_error_names_node():
    g = Graph()
    x = g.leaf(np.ones((2, 3)))
    W = g.leaf(np.ones((4, 2)), requires_grad=True)
    b = g.leaf(np.zeros(2), requires_grad=True)
    with pytest.raises(ShapeError) as exc:
        g.affine(x, W, b)
    assert exc.value.op == "affine"


def test_non_finite_rejected():
    g = Graph()
    with pytest.raises(NonFiniteError):
        g.leaf(np.array([1.0, np.nan]))
    bad = dict(OPS)
    bad["relu"] = Op("relu", lambda x: x * np.inf, OPS["relu"].vjp)
    g = Graph(bad)
    with pytest.raises(NonFiniteError) as exc:
        g.relu(g.leaf(np.ones(2)))
    assert exc.value.node_id == 1


def test_gradient_reversal():
    for lam in (0.0, 0.5, 2.0):
        g = Graph()
        x = g.leaf(np.array([[1.0, -2.0]]), requires_grad=True)
        r = g.grad_reverse(x, lam)
        assert np.array_equal(r.value, x.value)
        g.backward(g.mean(r))
        np.testing.assert_array_equal(x.grad, -lam * np.full((1, 2), 0.5))
    with pytest.raises(ValueError):
        Graph().grad_reverse(Graph().leaf(np.ones(1)), -1.0)


def test_weighted_sum_gradient():
    g = Graph()
    a = g.leaf(np.array(2.0), requires_grad=True)
    b = g.leaf(np.array(3.0), requires_grad=True)
    s = g.weighted_sum([a, b], [0.25, -4.0])
    g.backward(s)
    assert float(s.value) == 0.5 - 12.0
    assert float(a.grad) == 0.25 and float(b.grad) == -4.0


# Adam


def test_adam_zero_gradient_keeps_params():
    p = {"w": np.array([1.0, -2.0])}
    Adam(p).step({"w": np.zeros(2)})
    np.testing.assert_array_equal(p["w"], [1.0, -2.0])


def test_adam_first_step_is_lr_sign():
    for g in (3.7, -0.02):
        p = {"w": np.array([0.0])}
        Adam(p, lr=1e-3).step({"w": np.array([g])})
        assert p["w"][0] == pytest.approx(-1e-3 * math.copysign(1, g), rel=1e-6)


def test_adam_matches_scalar_reference():
    p = {"w": np.array(1.0)}
    opt = Adam(p, lr=0.1)
    seq = []
    for _ in range(2):
        opt.step({"w": 2 * p["w"]})
        seq.append(float(p["w"]))
    ref = _scalar_adam(1.0, lambda w: 2 * w, 2, 0.1)
    assert abs(seq[0] - ref[0]) < 1e-12 and abs(seq[1] - ref[1]) < 1e-12
    assert abs(seq[1] - 0.8004122286917927) < 1e-12  # frozen reference output
    assert opt.state.step == 2


def test_adam_errors():
    p = {"w": np.zeros(2), "b": np.zeros(1)}
    opt = Adam(p)
    with pytest.raises(KeyError):
        opt.step({"w": np.zeros(2)})
    with pytest.raises(NonFiniteError):
        opt.step({"w": np.array([np.inf, 0.0]), "b": np.zeros(1)})
    assert opt.state.step == 0


# gradient checking


def _mlp_loss(widths):
    net = LayeredNet(mlp_specs(widths), seed=0)
    labels = np.arange(7) % widths[-1]

    def loss_fn(g, pn, x):
        return g.softmax_cross_entropy(net.build(g, pn, x), labels)

    shapes = {k: v.shape for k, v in net.params.items()}
    return loss_fn, shapes, (7, widths[0])


def test_grad_check_affine_only():
    def loss_fn(g, pn, x):
        return g.mean(g.affine(x, pn["W"], pn["b"]))

    rep = grad_check(loss_fn, {"W": (4, 3), "b": (3,)}, (5, 4), trials=3, tolerance=1e-9)
    assert rep.max_rel_error < 1e-9 and rep.passed


def test_grad_check_three_layer_relu():
    fn, shapes, xs = _mlp_loss([5, 8, 6, 3])
    rep = grad_check(fn, shapes, xs, trials=3, tolerance=1e-5, seed=1)
    assert rep.max_rel_error < 1e-5
    assert rep.entries_checked > 0


@settings(max_examples=15, deadline=None)
@given(st.lists(st.integers(1, 6), min_size=2, max_size=4), st.integers(0, 1000))
def test_grad_check_random_widths(widths, seed):
    fn, shapes, xs = _mlp_loss([3, *widths])
    if widths[-1] < 2:
        return
    rep = grad_check(fn, shapes, xs, trials=1, tolerance=1e-5, seed=seed)
    assert rep.max_rel_error < 1e-5


def test_grad_check_names_broken_op():
    bad = dict(OPS)
    bad["sigmoid"] = Op("sigmoid", OPS["sigmoid"].forward, lambda u, out, x: (2.0 * u * out * (1 - out),))

    def loss_fn(g, pn, x):
        return g.mean(g.sigmoid(g.affine(x, pn["W"], pn["b"])))

    rep = grad_check(loss_fn, {"W": (3, 2), "b": (2,)}, (4, 3), tolerance=1e-5, ops=bad)
    assert not rep.passed
    assert rep.offending_op == "sigmoid"


def test_rel_error_floor():
    assert float(rel_error(0.0, 0.0)) == 0.0
    assert float(rel_error(1e-9, 0.0)) == pytest.approx(1e-3)  # denominator floored at 1e-6
    assert float(rel_error(1.0, 1.0 + 1e-8)) < 1e-8
