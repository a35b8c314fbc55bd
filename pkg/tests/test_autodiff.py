"""Tensor engine tests: forward semantics and finite-difference gradchecks."""

import numpy as np
import pytest

from tracq import autodiff as ad
from tracq.autodiff import ShapeError, Tensor

from conftest import away_from_zero, finite_difference, rel_err


class TestMatmul:
    def test_identity(self, rng):
        b = rng.normal(size=(3, 5))
        out = ad.matmul(Tensor(np.eye(3)), Tensor(b))
        np.testing.assert_allclose(out.data, b)

    def test_forced_by_definition(self):
        out = ad.matmul(Tensor([[1.0, 2.0]]), Tensor([[3.0], [4.0]]))
        assert out.data.tolist() == [[11.0]]

    def test_gradient_matches_finite_differences(self, rng):
        a = rng.normal(size=(3, 4))
        b = rng.normal(size=(4, 2))
        w = rng.normal(size=(3, 2))  # fixed projection to a scalar

        def f(a_, b_):
            return float((a_ @ b_ * w).sum())

        ta, tb = Tensor(a, requires_grad=True), Tensor(b, requires_grad=True)
        (ad.matmul(ta, tb) * Tensor(w)).sum().backward()
        fd_a, fd_b = finite_difference(f, [a.copy(), b.copy()])
        assert rel_err(ta.grad, fd_a) < 1e-6
        assert rel_err(tb.grad, fd_b) < 1e-6

    def test_shape_mismatch_reports_both_shapes(self):
        with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
            ad.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))


class TestSoftmax:
    def test_uniform_logits(self):
        out = ad.softmax(Tensor([0.0, 0.0, 0.0]), axis=-1)
        np.testing.assert_allclose(out.data, [1 / 3] * 3)

    def test_large_logit_is_stable(self):
        out = ad.softmax(Tensor([1000.0, 0.0]), axis=-1)
        assert np.isfinite(out.data).all()
        np.testing.assert_allclose(out.data[0], 1.0)
        assert out.data[1] < 1e-300

    def test_slices_sum_to_one(self, rng):
        x = rng.normal(size=(4, 7)) * 3
        out = ad.softmax(Tensor(x), axis=1)
        np.testing.assert_allclose(out.data.sum(axis=1), np.ones(4), atol=1e-9)

    def test_gradient(self, rng):
        x = rng.normal(size=(3, 5))
        w = rng.normal(size=(3, 5))

        def f(x_):
            return float((ad.softmax(Tensor(x_), axis=1).data * w).sum())

        tx = Tensor(x, requires_grad=True)
        (ad.softmax(tx, axis=1) * Tensor(w)).sum().backward()
        fd, = finite_difference(f, [x.copy()])
        assert rel_err(tx.grad, fd) < 1e-6


class TestLogSoftmaxAndCrossEntropy:
    def test_uniform_logits_give_log_c(self):
        for c in (2, 5, 9):
            loss = ad.cross_entropy(Tensor(np.zeros((3, c))), np.array([0, 1, c - 1]))
            np.testing.assert_allclose(loss.item(), np.log(c))

    def test_confident_correct_is_near_zero(self):
        loss = ad.cross_entropy(Tensor([[10.0, -10.0]]), np.array([0]))
        assert loss.item() < 1e-8

    def test_class_weights_weighted_mean(self):
        logits = np.zeros((2, 2))
        loss = ad.cross_entropy(Tensor(logits), np.array([0, 1]), class_weights=[1.0, 0.1])
        expected = (1.0 * np.log(2) + 0.1 * np.log(2)) / 1.1
        np.testing.assert_allclose(loss.item(), expected)

    def test_target_out_of_range(self):
        with pytest.raises(IndexError):
            ad.cross_entropy(Tensor(np.zeros((1, 3))), np.array([3]))

    def test_gradient(self, rng):
        x = rng.normal(size=(4, 6))
        targets = rng.integers(0, 6, size=4)
        weights = np.concatenate([np.ones(5), [0.1]])

        def f(x_):
            return float(ad.cross_entropy(Tensor(x_), targets, weights).data)

        tx = Tensor(x, requires_grad=True)
        ad.cross_entropy(tx, targets, weights).backward()
        fd, = finite_difference(f, [x.copy()])
        assert rel_err(tx.grad, fd) < 1e-5

    def test_log_softmax_gradient(self, rng):
        x = rng.normal(size=(3, 4))
        w = rng.normal(size=(3, 4))

        def f(x_):
            return float((ad.log_softmax(Tensor(x_), axis=1).data * w).sum())

        tx = Tensor(x, requires_grad=True)
        (ad.log_softmax(tx, axis=1) * Tensor(w)).sum().backward()
        fd, = finite_difference(f, [x.copy()])
        assert rel_err(tx.grad, fd) < 1e-6


@pytest.mark.parametrize("name,op,domain", [
    ("relu", ad.relu, "nonzero"),
    ("sigmoid", ad.sigmoid, "any"),
    ("exp", ad.exp, "any"),
    ("log", ad.log, "positive"),
    ("abs", ad.absolute, "nonzero"),
    ("sqrt", ad.sqrt, "positive"),
])
def test_elementwise_gradients(name, op, domain, rng):
    if domain == "positive":
        x = rng.uniform(0.2, 1.5, size=(3, 4))
    elif domain == "nonzero":
        x = away_from_zero(rng, (3, 4))
    else:
        x = rng.normal(size=(3, 4))
    w = rng.normal(size=(3, 4))

    def f(x_):
        return float((op(Tensor(x_)).data * w).sum())

    tx = Tensor(x, requires_grad=True)
    (op(tx) * Tensor(w)).sum().backward()
    fd, = finite_difference(f, [x.copy()])
    assert rel_err(tx.grad, fd) < 1e-6, name


def test_min_max_div_gradients(rng):
    a = rng.normal(size=(4, 3))
    b = a + away_from_zero(rng, (4, 3), low=0.05)  # no exact ties
    c = away_from_zero(rng, (4, 3), low=0.3)

    def f(a_, b_, c_):
        t = ad.maximum(Tensor(a_), Tensor(b_)) + ad.minimum(Tensor(a_), Tensor(b_))
        return float((t / Tensor(c_)).sum().data)

    ta, tb, tc = (Tensor(x, requires_grad=True) for x in (a, b, c))
    ((ad.maximum(ta, tb) + ad.minimum(ta, tb)) / tc).sum().backward()
    fd = finite_difference(f, [a.copy(), b.copy(), c.copy()])
    for got, want in zip((ta.grad, tb.grad, tc.grad), fd):
        assert rel_err(got, want) < 1e-6


def test_broadcast_add_mul_gradients(rng):
    a = rng.normal(size=(4, 3))
    b = rng.normal(size=(3,))  # broadcasts across rows

    def f(a_, b_):
        return float(((a_ + b_) * b_).sum())

    ta, tb = Tensor(a, requires_grad=True), Tensor(b, requires_grad=True)
    ((ta + tb) * tb).sum().backward()
    fd_a, fd_b = finite_difference(f, [a.copy(), b.copy()])
    assert rel_err(ta.grad, fd_a) < 1e-6
    assert rel_err(tb.grad, fd_b) < 1e-6


def test_take_concat_reshape_gradients(rng):
    x = rng.normal(size=(5, 4))
    idx = np.array([0, 2, 2, 4])  # duplicates must accumulate
    w = rng.normal(size=(4, 4))

    def f(x_):
        t = Tensor(x_)
        picked = t[idx]
        cols = ad.concat([picked[:, 0:2], picked[:, 2:4]], axis=0)  # [8, 2]
        return float((cols.reshape(4, 4).T.data * w.T).sum())

    tx = Tensor(x, requires_grad=True)
    picked = tx[idx]
    cols = ad.concat([picked[:, 0:2], picked[:, 2:4]], axis=0)
    (ad.transpose(cols.reshape(4, 4)) * Tensor(w.T)).sum().backward()
    fd, = finite_difference(f, [x.copy()])
    assert rel_err(tx.grad, fd) < 1e-6


def test_sum_mean_axis_gradients(rng):
    x = rng.normal(size=(3, 5))
    w = rng.normal(size=(3, 1))

    def f(x_):
        t = Tensor(x_)
        return float((t.sum(axis=1, keepdims=True) * w + t.mean(axis=1, keepdims=True)).sum().data)

    tx = Tensor(x, requires_grad=True)
    (tx.sum(axis=1, keepdims=True) * Tensor(w) + tx.mean(axis=1, keepdims=True)).sum().backward()
    fd, = finite_difference(f, [x.copy()])
    assert rel_err(tx.grad, fd) < 1e-6


def test_tape_linearity(rng):
    """Backward of a sum of subgraphs equals the sum of separate backwards."""
    x = rng.normal(size=(4, 4))

    def build(t):
        return (ad.relu(t) * 2.0).sum(), (ad.sigmoid(t) + t * t).sum()

    t_joint = Tensor(x, requires_grad=True)
    f1, f2 = build(t_joint)
    (f1 + f2).backward()
    joint = t_joint.grad.copy()

    t_a = Tensor(x, requires_grad=True)
    build(t_a)[0].backward()
    t_b = Tensor(x, requires_grad=True)
    build(t_b)[1].backward()
    np.testing.assert_allclose(joint, t_a.grad + t_b.grad, rtol=1e-12)


def test_forward_deterministic(rng):
    x = rng.normal(size=(6, 6))
    a = ad.softmax(ad.matmul(Tensor(x), Tensor(x.T)), axis=1).data
    b = ad.softmax(ad.matmul(Tensor(x), Tensor(x.T)), axis=1).data
    assert np.array_equal(a, b)


def test_grad_shape_matches_data(rng):
    t = Tensor(rng.normal(size=(3, 7)), requires_grad=True)
    (t * t).sum().backward()
    assert t.grad.shape == t.data.shape


def test_no_grad_blocks_tape(rng):
    t = Tensor(rng.normal(size=(2, 2)), requires_grad=True)
    with ad.no_grad():
        out = (t * 3.0).sum()
    assert out._parents == () and not out.requires_grad


def test_backward_accumulates_across_calls(rng):
    t = Tensor(rng.normal(size=(3,)), requires_grad=True)
    (t * 2.0).sum().backward()
    first = t.grad.copy()
    (t * 2.0).sum().backward()
    np.testing.assert_allclose(t.grad, 2 * first)
