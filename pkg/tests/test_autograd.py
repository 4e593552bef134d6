import numpy as np
import pytest

from bpclip import autograd as ag
from bpclip.autograd import Tensor
from bpclip.gradcheck import check_gradients


def leaf(rng, shape, scale=1.0):
    return Tensor(rng.normal(0, scale, size=shape), requires_grad=True)


def test_add_mul_broadcast_backward():
    rng = np.random.default_rng(1)
    a = leaf(rng, (3, 4))
    b = leaf(rng, (4,))
    out = ag.sum_(ag.mul(ag.add(a, b), a))
    out.backward()
    assert a.grad.shape == (3, 4)
    assert b.grad.shape == (4,)
    np.testing.assert_allclose(a.grad, 2 * a.data + b.data)
    np.testing.assert_allclose(b.grad, a.data.sum(axis=0))


def test_grad_accumulates_over_reuse():
    x = Tensor(np.array([2.0]), requires_grad=True)
    y = ag.add(ag.mul(x, x), x)  # x^2 + x, dy/dx = 2x + 1
    y.backward(np.array([1.0]))
    np.testing.assert_allclose(x.grad, [5.0])


def test_no_grad_suppresses_graph():
    x = Tensor(np.ones(3), requires_grad=True)
    with ag.no_grad():
        y = ag.mul(x, 2.0)
    assert not y.requires_grad
    assert y._backward is None


@pytest.mark.parametrize("op", [ag.sigmoid, ag.gelu, ag.relu, ag.exp, ag.abs_, ag.sqrt])
def test_unary_op_gradients(op):
    rng = np.random.default_rng(7)
    # keep inputs away from relu/abs kinks and sqrt's domain edge
    x = Tensor(rng.uniform(0.5, 2.0, size=(4, 5)) * rng.choice([-1, 1], size=(4, 5)), requires_grad=True)
    if op is ag.sqrt:
        x = Tensor(rng.uniform(0.5, 2.0, size=(4, 5)), requires_grad=True)
    report = check_gradients(lambda: ag.sum_(ag.mul(op(x), x)), {"x": x})
    assert report.passed(1e-6), report


def test_softmax_rows_sum_to_one_and_gradient():
    rng = np.random.default_rng(3)
    x = leaf(rng, (2, 6))
    y = ag.softmax(x, axis=-1)
    np.testing.assert_allclose(y.data.sum(axis=-1), 1.0, atol=1e-12)
    target = rng.normal(size=(2, 6))
    report = check_gradients(
        lambda: ag.sum_(ag.mul(ag.softmax(x, axis=-1), target)), {"x": x})
    assert report.passed(1e-6), report


def test_softmax_large_logits_stable():
    x = Tensor(np.array([[1000.0, 1000.0, -1000.0]]))
    y = ag.softmax(x)
    assert np.all(np.isfinite(y.data))
    np.testing.assert_allclose(y.data.sum(), 1.0)


def test_matmul_batched_gradient():
    rng = np.random.default_rng(11)
    a = leaf(rng, (2, 3, 4))
    b = leaf(rng, (4, 5))
    report = check_gradients(lambda: ag.sum_(ag.mul(ag.matmul(a, b), 0.3)), {"a": a, "b": b})
    assert report.passed(1e-6), report


def test_concat_gradient_splits():
    rng = np.random.default_rng(5)
    a = leaf(rng, (2, 3))
    b = leaf(rng, (2, 2))
    w = rng.normal(size=(2, 5))
    out = ag.sum_(ag.mul(ag.concat([a, b], axis=1), w))
    out.backward()
    np.testing.assert_allclose(a.grad, w[:, :3])
    np.testing.assert_allclose(b.grad, w[:, 3:])


def test_conv2d_matches_direct_loop():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(1, 2, 5, 5))
    w = rng.normal(size=(3, 2, 3, 3))
    b = rng.normal(size=(3,))
    out = ag.conv2d(Tensor(x), Tensor(w), Tensor(b), stride=2, padding=1).data
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    expect = np.zeros_like(out)
    for co in range(3):
        for oi in range(out.shape[2]):
            for oj in range(out.shape[3]):
                patch = xp[0, :, oi * 2:oi * 2 + 3, oj * 2:oj * 2 + 3]
                expect[0, co, oi, oj] = (patch * w[co]).sum() + b[co]
    np.testing.assert_allclose(out, expect, atol=1e-12)


def test_conv2d_gradient():
    rng = np.random.default_rng(4)
    x = leaf(rng, (2, 3, 6, 6))
    w = leaf(rng, (4, 3, 3, 3), scale=0.5)
    b = leaf(rng, (4,))
    target = rng.normal(size=(2, 4, 3, 3))

    def loss():
        y = ag.conv2d(x, w, b, stride=2, padding=1)
        diff = ag.sub(y, target)
        return ag.mean(ag.mul(diff, diff))

    report = check_gradients(loss, {"x": x, "w": w, "b": b})
    assert report.passed(1e-6), report


def test_avg_pool_preserves_mean_and_gradient():
    rng = np.random.default_rng(9)
    x = leaf(rng, (2, 3, 8, 8))
    y = ag.avg_pool2d(x, 4)
    np.testing.assert_allclose(
        y.data.mean(axis=(2, 3)), x.data.mean(axis=(2, 3)), rtol=1e-12)
    report = check_gradients(lambda: ag.mean(ag.mul(ag.avg_pool2d(x, 4), 3.0)), {"x": x})
    assert report.passed(1e-6), report


def test_max_pool_forward_and_gradient():
    rng = np.random.default_rng(13)
    x = leaf(rng, (1, 2, 7, 7))
    y = ag.max_pool2d(x, 3, stride=2, padding=1)
    assert y.shape == (1, 2, 4, 4)
    target = rng.normal(size=y.shape)
    report = check_gradients(
        lambda: ag.sum_(ag.mul(ag.max_pool2d(x, 3, stride=2, padding=1), target)), {"x": x})
    assert report.passed(1e-6), report


def test_dtype_preserved_through_ops():
    x = Tensor(np.ones((2, 2), dtype=np.float32), requires_grad=True)
    y = ag.gelu(ag.sigmoid(ag.mul(x, 2.0)))
    assert y.dtype == np.float32
    ag.sum_(y).backward()
    assert x.grad.dtype == np.float32
