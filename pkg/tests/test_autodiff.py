"""Engine correctness: op gradients against finite differences, plus the
optimizer and schedule behavior."""

import numpy as np
import pytest

from lsplab.autodiff import (Adam, AutodiffError, ExponentialDecay, Tensor,
                             backward, concat, gradients, parameter)
from helpers import fd_gradient, rel_err


def test_product_rule_scalar():
    x = parameter(3.0, "x")
    y = parameter(4.0, "y")
    backward(x * y)
    assert x.grad == 4.0
    assert y.grad == 3.0


def test_softplus_derivative_at_zero_any_beta():
    for beta in (1.0, 10.0, 100.0):
        x = parameter(0.0, "x")
        backward(x.softplus(beta))
        assert abs(x.grad - 0.5) < 1e-12


def test_linear_loss_gradients():
    # loss = sum |f(x_i)|, f = w.x + b, one point (1,1,1) with f > 0
    w = parameter(np.array([[0.2, 0.3, 0.4]]), "w")
    b = parameter(np.array([0.1]), "b")
    X = Tensor(np.array([[1.0, 1.0, 1.0]]))
    loss = (X @ w.T + b).abs().sum()
    backward(loss)
    assert np.allclose(w.grad, [[1.0, 1.0, 1.0]])
    assert np.allclose(b.grad, [1.0])


def test_stationary_eikonal_residual_has_zero_gradient():
    # (||grad f|| - 1)^2 with grad f = w = (1,0,0): residual 0, so all zero.
    w = parameter(np.array([1.0, 0.0, 0.0]), "w")
    norm = ((w ** 2).sum() + Tensor(1e-24)).sqrt()
    loss = (norm - Tensor(1.0)) ** 2
    backward(loss)
    assert np.all(w.grad == 0.0)


def test_elementwise_ops_match_finite_differences():
    rng = np.random.default_rng(7)
    x0 = rng.uniform(0.5, 1.5, size=(4, 3))

    def build(xv):
        x = parameter(xv, "x")
        y = (x.exp() + x.log() * x.tanh() - x.sigmoid() / x.sqrt()
             + x.softplus(3.0) + x.abs() + x.sin() * x.cos() + x ** 2.5)
        return x, (y * y).mean()

    x, loss = build(x0.copy())
    backward(loss)
    fd = fd_gradient(lambda v: float(build(v.copy())[1].data), x0)
    assert rel_err(x.grad, fd).max() < 1e-6


def test_matmul_reductions_and_broadcast_match_finite_differences():
    rng = np.random.default_rng(11)
    shapes = {"A": (3, 4), "B": (4, 2), "c": (2,), "d": (3, 1)}
    vals = {k: rng.normal(size=s) for k, s in shapes.items()}

    def build(v):
        A = parameter(v["A"], "A")
        B = parameter(v["B"], "B")
        c = parameter(v["c"], "c")
        d = parameter(v["d"], "d")
        y = (A @ B + c) * d  # row and column broadcasts
        z = y.relu().sum(axis=0).mean() + y.sum(axis=1, keepdims=True).abs().sum()
        z = z + concat([A[:, 0].reshape((3, 1)), d], axis=1).mean()
        return {"A": A, "B": B, "c": c, "d": d}, z

    params, loss = build({k: v.copy() for k, v in vals.items()})
    backward(loss)
    for key in shapes:
        def f(v, key=key):
            trial = {k: vals[k].copy() for k in vals}
            trial[key] = v.copy()
            return float(build(trial)[1].data)
        fd = fd_gradient(f, vals[key])
        assert rel_err(params[key].grad, fd).max() < 1e-6, key


def test_getitem_scatter_gradient():
    x0 = np.arange(6.0).reshape(2, 3) + 1.0

    def build(v):
        x = parameter(v, "x")
        idx = np.array([0, 0, 1])
        return x, (x[idx] * x[idx]).sum() + x[0, 1] * 3.0

    x, loss = build(x0.copy())
    backward(loss)
    fd = fd_gradient(lambda v: float(build(v.copy())[1].data), x0)
    assert np.allclose(x.grad, fd, atol=1e-6)


def test_gradient_linearity():
    rng = np.random.default_rng(3)
    v = rng.normal(size=(5,))

    def losses(x):
        l1 = (x ** 2).sum()
        l2 = (x.sin() * x).mean()
        return l1, l2

    a, b = 2.5, -1.25
    x = parameter(v.copy(), "x")
    l1, l2 = losses(x)
    backward(Tensor(a) * l1 + Tensor(b) * l2)
    combined = x.grad.copy()

    x1 = parameter(v.copy(), "x")
    backward(losses(x1)[0])
    x2 = parameter(v.copy(), "x")
    backward(losses(x2)[1])
    assert np.abs(combined - (a * x1.grad + b * x2.grad)).max() < 1e-12


def test_backward_determinism_bitwise():
    rng = np.random.default_rng(19)
    v = rng.normal(size=(8, 8))

    def run():
        x = parameter(v.copy(), "x")
        y = ((x @ x.T).softplus(2.0).mean() + x.abs().sum()) ** 2
        backward(y)
        return x.grad.copy()

    g1, g2 = run(), run()
    assert np.array_equal(g1, g2)


def test_gradients_bundle_covers_all_parameters():
    x = parameter(np.ones(3), "x")
    unused = parameter(np.ones(2), "unused")
    out = gradients((x * x).sum(), {"x": x, "unused": unused})
    assert set(out) == {"x", "unused"}
    assert np.allclose(out["x"], 2.0 * np.ones(3))
    assert np.all(out["unused"] == 0.0) and out["unused"].shape == (2,)


def test_backward_errors():
    x = parameter(np.ones(3), "x")
    with pytest.raises(AutodiffError):
        backward(x * x)  # non-scalar root
    with pytest.raises(AutodiffError):
        backward(Tensor(1.0))  # no parameters in graph
    bad = parameter(np.array(np.nan), "bad")
    with pytest.raises(AutodiffError):
        backward(bad * 2.0)


def test_adam_first_step_is_signed_lr():
    p = parameter(np.array([1.0, -2.0]), "p")
    opt = Adam({"p": p}, lr=0.1)
    opt.step({"p": np.array([1.0, -1.0])})
    assert np.allclose(p.data, [1.0 - 0.1, -2.0 + 0.1], atol=1e-7)


def test_exponential_decay_schedule():
    sched = ExponentialDecay(1e-3, gamma=0.998, every=30)
    assert sched.at(0) == 1e-3
    assert sched.at(29) == 1e-3
    assert np.isclose(sched.at(30), 1e-3 * 0.998)
    assert np.isclose(sched.at(90), 1e-3 * 0.998 ** 3)
