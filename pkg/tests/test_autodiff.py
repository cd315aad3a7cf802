"""Tests for the reverse-mode engine, optimizer, and gradient checker."""

import math

import numpy as np
import pytest

from rotcompose import autodiff as ad
from rotcompose.errors import ContractViolation, NumericError


def fd_grad(f, arr, eps=1e-6):
    """Central finite differences of a scalar function of a flat array."""
    g = np.zeros_like(arr)
    flat = arr.ravel()
    gf = g.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        hi = f()
        flat[i] = orig - eps
        lo = f()
        flat[i] = orig
        gf[i] = (hi - lo) / (2 * eps)
    return g


def rel_err(a, b):
    return np.max(np.abs(a - b) / np.maximum(1e-8, np.abs(a) + np.abs(b)))


def test_square_value_and_gradient():
    w = ad.parameter(3.0, dtype=np.float64)
    loss = ad.mul(w, w)
    assert loss.item() == 9.0
    grads = ad.backward(loss)
    assert grads[w] == pytest.approx(6.0)


def test_relu_sum_subgradient():
    w = ad.parameter([-1.0, 2.0], dtype=np.float64)
    loss = ad.tsum(ad.relu(w))
    assert loss.item() == 2.0
    np.testing.assert_array_equal(ad.backward(loss)[w], [0.0, 1.0])


def test_relu_subgradient_zero_at_zero():
    w = ad.parameter([0.0], dtype=np.float64)
    g = ad.backward(ad.tsum(ad.relu(w)))[w]
    assert g[0] == 0.0


def test_constant_gradient_not_materialized():
    c = ad.constant([1.0, 2.0])
    w = ad.parameter([3.0, 4.0])
    grads = ad.backward(ad.tsum(ad.mul(c, w)))
    assert w in grads and c not in grads


def test_backward_rejects_non_scalar_loss():
    w = ad.parameter([1.0, 2.0])
    with pytest.raises(ContractViolation):
        ad.backward(ad.mul(w, w))


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_backward_reports_nan_node():
    w = ad.parameter([-1.0], dtype=np.float64)
    loss = ad.tsum(ad.log(w))  # log of a negative: NaN
    with pytest.raises(NumericError):
        ad.backward(loss)


@pytest.mark.parametrize("op,arity", [
    (ad.add, 2), (ad.sub, 2), (ad.mul, 2), (ad.relu, 1), (ad.exp, 1),
    (ad.sin, 1), (ad.cos, 1), (ad.sigmoid, 1), (ad.softplus, 1),
])
def test_primitive_gradients_match_finite_differences(op, arity):
    rng = np.random.default_rng(hash(op.__name__) % 2**32)
    for _ in range(100):
        args = [ad.parameter(rng.standard_normal(5), dtype=np.float64)
                for _ in range(arity)]
        loss = ad.tsum(op(*args))
        analytic = ad.backward(loss)
        for a in args:
            num = fd_grad(lambda: ad.tsum(op(*args)).item(), a.data)
            assert rel_err(analytic[a], num) <= 1e-3


def test_log_gradient_positive_domain():
    rng = np.random.default_rng(3)
    for _ in range(100):
        w = ad.parameter(np.abs(rng.standard_normal(5)) + 0.5, dtype=np.float64)
        analytic = ad.backward(ad.tsum(ad.log(w)))[w]
        num = fd_grad(lambda: ad.tsum(ad.log(w)).item(), w.data)
        assert rel_err(analytic, num) <= 1e-3


@pytest.mark.parametrize("make,label", [
    (lambda rng: (ad.matmul, [ad.parameter(rng.standard_normal((3, 4)), dtype=np.float64),
                              ad.parameter(rng.standard_normal((4, 2)), dtype=np.float64)]),
     "matmul"),
    (lambda rng: (ad.add_bias, [ad.parameter(rng.standard_normal((3, 4)), dtype=np.float64),
                                ad.parameter(rng.standard_normal(4), dtype=np.float64)]),
     "add_bias"),
    (lambda rng: (ad.logsumexp_rows, [ad.parameter(rng.standard_normal((4, 5)), dtype=np.float64)]),
     "logsumexp_rows"),
    (lambda rng: (ad.take_diag, [ad.parameter(rng.standard_normal((4, 4)), dtype=np.float64)]),
     "take_diag"),
    (lambda rng: (ad.rowwise_dot, [ad.parameter(rng.standard_normal((4, 3)), dtype=np.float64),
                                   ad.parameter(rng.standard_normal((4, 3)), dtype=np.float64)]),
     "rowwise_dot"),
    (lambda rng: (ad.rows_bank_dot, [ad.parameter(rng.standard_normal((3, 2)), dtype=np.float64),
                                     ad.parameter(rng.standard_normal((3, 4, 2)), dtype=np.float64)]),
     "rows_bank_dot"),
    (lambda rng: (lambda x, w, b: ad.conv1d(x, w, b),
                  [ad.parameter(rng.standard_normal((2, 3, 6)), dtype=np.float64),
                   ad.parameter(rng.standard_normal((4, 3, 3)), dtype=np.float64),
                   ad.parameter(rng.standard_normal(4), dtype=np.float64)]),
     "conv1d"),
    (lambda rng: (lambda x: ad.adaptive_max_pool1d(x, 3),
                  [ad.parameter(rng.standard_normal((2, 3, 7)), dtype=np.float64)]),
     "adaptive_max_pool1d"),
    (lambda rng: (lambda a, b: ad.interleave(a, b),
                  [ad.parameter(rng.standard_normal((3, 4)), dtype=np.float64),
                   ad.parameter(rng.standard_normal((3, 4)), dtype=np.float64)]),
     "interleave"),
    (lambda rng: (lambda x: ad.add(*ad.deinterleave(x)),
                  [ad.parameter(rng.standard_normal((3, 8)), dtype=np.float64)]),
     "deinterleave"),
    (lambda rng: (lambda a, b: ad.concat_cols([a, b]),
                  [ad.parameter(rng.standard_normal((3, 2)), dtype=np.float64),
                   ad.parameter(rng.standard_normal((3, 5)), dtype=np.float64)]),
     "concat_cols"),
])
def test_structured_op_gradients(make, label):
    for seed in range(10):
        rng = np.random.default_rng(seed)
        op, args = make(rng)
        loss = ad.tmean(op(*args))
        analytic = ad.backward(loss)
        for a in args:
            num = fd_grad(lambda: ad.tmean(op(*args)).item(), a.data)
            got = analytic.get(a, np.zeros_like(a.data))
            assert rel_err(got, num) <= 1e-3, label


def test_shape_mismatch_raises():
    a = ad.parameter(np.zeros((2, 3)))
    b = ad.parameter(np.zeros((3, 3)))
    with pytest.raises(ContractViolation):
        ad.add(a, b)
    with pytest.raises(ContractViolation):
        ad.matmul(a, ad.parameter(np.zeros((2, 3))))


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------

def test_sgd_plain_step():
    p = ad.parameter(1.0, dtype=np.float64)
    ad.SGDMomentum(0.1, 0.0).step({"p": p}, {"p": np.asarray(2.0)})
    assert float(p.data) == pytest.approx(0.8)


def test_sgd_momentum_recurrence():
    p = ad.parameter(0.0, dtype=np.float64)
    opt = ad.SGDMomentum(0.1, 0.9)
    opt.step({"p": p}, {"p": np.asarray(1.0)})
    assert float(opt.velocity["p"]) == pytest.approx(1.0)
    assert float(p.data) == pytest.approx(-0.1)
    opt.step({"p": p}, {"p": np.asarray(1.0)})
    assert float(opt.velocity["p"]) == pytest.approx(1.9)
    assert float(p.data) == pytest.approx(-0.29)


def test_sgd_zero_gradient_fixed_point():
    p = ad.parameter([1.0, -2.0], dtype=np.float64)
    before = p.data.copy()
    ad.SGDMomentum(0.5, 0.9).step({"p": p}, {"p": np.zeros(2)})
    np.testing.assert_array_equal(p.data, before)


def test_sgd_shape_mismatch():
    p = ad.parameter([1.0, 2.0])
    with pytest.raises(ContractViolation):
        ad.SGDMomentum(0.1).step({"p": p}, {"p": np.zeros(3)})


# ---------------------------------------------------------------------------
# grad_check harness
# ---------------------------------------------------------------------------

def test_grad_check_quadratic():
    w = ad.parameter([1.0, 2.0], dtype=np.float64)
    err = ad.grad_check(lambda: ad.tsum(ad.mul(w, w)), [w], eps=1e-3)
    assert err <= 1e-6


def test_grad_check_sine():
    w = ad.parameter([0.0, math.pi / 2], dtype=np.float64)
    err = ad.grad_check(lambda: ad.tsum(ad.sin(w)), [w], eps=1e-4)
    assert err <= 1e-5


def test_grad_check_constant_function():
    w = ad.parameter([1.0, 2.0], dtype=np.float64)
    c = ad.constant([5.0])
    err = ad.grad_check(lambda: ad.tsum(c), [w], eps=1e-3)
    assert err == 0.0


def test_grad_check_rejects_bad_eps():
    w = ad.parameter([1.0])
    with pytest.raises(ContractViolation):
        ad.grad_check(lambda: ad.tsum(w), [w], eps=0.0)


def test_mlp_gradients_match_finite_differences():
    rng = np.random.default_rng(11)
    w1 = ad.parameter(rng.standard_normal((4, 6)), dtype=np.float64)
    b1 = ad.parameter(rng.standard_normal(6), dtype=np.float64)
    w2 = ad.parameter(rng.standard_normal((6, 2)), dtype=np.float64)
    b2 = ad.parameter(rng.standard_normal(2), dtype=np.float64)
    x = ad.constant(rng.standard_normal((3, 4)), dtype=np.float64)

    def f():
        hid = ad.relu(ad.add_bias(ad.matmul(x, w1), b1))
        out = ad.add_bias(ad.matmul(hid, w2), b2)
        return ad.tsum(ad.mul(out, out))

    err = ad.grad_check(f, [w1, b1, w2, b2], eps=1e-3)
    assert err <= 1e-3


def test_forward_backward_deterministic():
    def build():
        rng = np.random.default_rng(21)
        w = ad.parameter(rng.standard_normal((3, 3)), dtype=np.float64)
        x = ad.constant(rng.standard_normal((2, 3)), dtype=np.float64)
        loss = ad.tsum(ad.relu(ad.matmul(x, w)))
        return loss.item(), ad.backward(loss)[w]

    v1, g1 = build()
    v2, g2 = build()
    assert v1 == v2
    np.testing.assert_array_equal(g1, g2)
