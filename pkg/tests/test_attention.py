"""Attention oracle tests and stack contracts."""

import numpy as np
import pytest

from tracq import autodiff as ad
from tracq.attention import (AttentionConfig, AttentionStack, MultiHeadAttention,
                             attention, sinusoidal_positions)
from tracq.autodiff import ShapeError, Tensor

from conftest import finite_difference, rel_err


def naive_attention(q, k, v):
    """Per-row double-loop oracle for Softmax(q kT / sqrt(d)) v."""
    out = np.zeros((q.shape[0], v.shape[1]))
    scale = 1.0 / np.sqrt(q.shape[1])
    for i in range(q.shape[0]):
        logits = np.array([np.dot(q[i], k[j]) * scale for j in range(k.shape[0])])
        logits -= logits.max()
        w = np.exp(logits)
        w /= w.sum()
        for j in range(k.shape[0]):
            out[i] += w[j] * v[j]
    return out


class TestAttention:
    def test_single_key_returns_value(self, rng):
        q = rng.normal(size=(5, 3))
        k = rng.normal(size=(1, 3))
        v = rng.normal(size=(1, 4))
        out = attention(Tensor(q), Tensor(k), Tensor(v))
        np.testing.assert_allclose(out.data, np.repeat(v, 5, axis=0), atol=1e-12)

    def test_equal_logits_average_values(self, rng):
        q = np.zeros((2, 3))  # orthogonal to every key
        k = rng.normal(size=(6, 3))
        v = rng.normal(size=(6, 4))
        out = attention(Tensor(q), Tensor(k), Tensor(v))
        np.testing.assert_allclose(out.data, np.tile(v.mean(axis=0), (2, 1)), atol=1e-12)

    def test_matches_double_loop_oracle(self, rng):
        q = rng.normal(size=(4, 8))
        k = rng.normal(size=(6, 8))
        v = rng.normal(size=(6, 8))
        out = attention(Tensor(q), Tensor(k), Tensor(v))
        np.testing.assert_allclose(out.data, naive_attention(q, k, v), atol=1e-12)

    def test_rows_sum_to_one(self, rng):
        q = rng.normal(size=(4, 8))
        k = rng.normal(size=(6, 8))
        weights = ad.softmax(ad.matmul(Tensor(q), Tensor(k.T)) * (1 / np.sqrt(8)), axis=-1)
        np.testing.assert_allclose(weights.data.sum(axis=1), 1.0, atol=1e-9)

    def test_key_value_permutation_invariance(self, rng):
        q = rng.normal(size=(3, 5))
        k = rng.normal(size=(7, 5))
        v = rng.normal(size=(7, 4))
        perm = rng.permutation(7)
        a = attention(Tensor(q), Tensor(k), Tensor(v)).data
        b = attention(Tensor(q), Tensor(k[perm]), Tensor(v[perm])).data
        np.testing.assert_allclose(a, b, atol=1e-12)

    def test_query_permutation_permutes_rows(self, rng):
        q = rng.normal(size=(5, 4))
        k = rng.normal(size=(6, 4))
        v = rng.normal(size=(6, 4))
        perm = rng.permutation(5)
        a = attention(Tensor(q), Tensor(k), Tensor(v)).data
        b = attention(Tensor(q[perm]), Tensor(k), Tensor(v)).data
        np.testing.assert_allclose(a[perm], b, atol=1e-12)

    def test_dim_mismatch(self, rng):
        with pytest.raises(ShapeError):
            attention(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 5))), Tensor(np.zeros((4, 2))))


class TestMultiHead:
    def test_single_head_identity_projections_reduce_to_attention(self, rng):
        d = 6
        mha = MultiHeadAttention(d, 1, rng)
        for lin in (mha.w_q, mha.w_k, mha.w_v, mha.w_o):
            lin.weight.data = np.eye(d)
            lin.bias.data = np.zeros(d)
        q = rng.normal(size=(4, d))
        k = rng.normal(size=(5, d))
        v = rng.normal(size=(5, d))
        got = mha(Tensor(q), Tensor(k), Tensor(v)).data
        want = attention(Tensor(q), Tensor(k), Tensor(v)).data
        np.testing.assert_allclose(got, want, atol=1e-12)

    def test_output_shape(self, rng):
        mha = MultiHeadAttention(12, 3, rng)
        out = mha(Tensor(rng.normal(size=(5, 12))), Tensor(rng.normal(size=(7, 12))),
                  Tensor(rng.normal(size=(7, 12))))
        assert out.shape == (5, 12)

    def test_matches_concat_of_slices_oracle(self, rng):
        d, h = 8, 4
        mha = MultiHeadAttention(d, h, rng)
        q = rng.normal(size=(3, d))
        k = rng.normal(size=(5, d))
        v = rng.normal(size=(5, d))
        got = mha(Tensor(q), Tensor(k), Tensor(v)).data

        def project(lin, x):
            return x @ lin.weight.data + lin.bias.data

        qp, kp, vp = project(mha.w_q, q), project(mha.w_k, k), project(mha.w_v, v)
        dk = d // h
        heads = [naive_attention(qp[:, i * dk:(i + 1) * dk], kp[:, i * dk:(i + 1) * dk],
                                 vp[:, i * dk:(i + 1) * dk]) for i in range(h)]
        want = project(mha.w_o, np.concatenate(heads, axis=1))
        np.testing.assert_allclose(got, want, atol=1e-12)

    def test_end_to_end_gradient(self, rng):
        d = 4
        mha = MultiHeadAttention(d, 2, rng)
        q = rng.normal(size=(3, d))
        k = rng.normal(size=(4, d))
        v = rng.normal(size=(4, d))
        w = rng.normal(size=(3, d))

        def f(q_, k_, v_):
            with_mha = mha(Tensor(q_), Tensor(k_), Tensor(v_))
            return float((with_mha.data * w).sum())

        tq, tk, tv = (Tensor(x, requires_grad=True) for x in (q, k, v))
        (mha(tq, tk, tv) * Tensor(w)).sum().backward()
        fds = finite_difference(f, [q.copy(), k.copy(), v.copy()])
        for got, want in zip((tq.grad, tk.grad, tv.grad), fds):
            assert rel_err(got, want) < 1e-4


class TestStack:
    def test_zero_depth_is_identity(self, rng):
        cfg = AttentionConfig(8, 2, 16, n_layers=0)
        stack = AttentionStack(cfg, "encoder", rng)
        x = rng.normal(size=(5, 8))
        np.testing.assert_array_equal(stack(Tensor(x)).data, x)

    def test_decoder_output_shape(self, rng):
        cfg = AttentionConfig(8, 2, 16, n_layers=2)
        dec = AttentionStack(cfg, "decoder", rng)
        queries = Tensor(rng.normal(size=(6, 8)))
        memory = Tensor(rng.normal(size=(10, 8)))
        assert dec(queries, memory).shape == (6, 8)

    def test_decoder_needs_memory(self, rng):
        cfg = AttentionConfig(8, 2, 16, n_layers=1)
        dec = AttentionStack(cfg, "decoder", rng)
        with pytest.raises(ValueError):
            dec(Tensor(np.zeros((2, 8))))

    def test_two_layer_gradient(self, rng):
        cfg = AttentionConfig(4, 2, 8, n_layers=2)
        enc = AttentionStack(cfg, "encoder", rng)
        x = rng.normal(size=(3, 4))
        w = rng.normal(size=(3, 4))

        def f(x_):
            return float((enc(Tensor(x_)).data * w).sum())

        tx = Tensor(x, requires_grad=True)
        (enc(tx) * Tensor(w)).sum().backward()
        fd, = finite_difference(f, [x.copy()])
        assert rel_err(tx.grad, fd) < 1e-4

    def test_config_rejects_bad_head_split(self):
        with pytest.raises(ValueError):
            AttentionConfig(10, 3, 16, 1)


def test_sinusoidal_positions_properties():
    table = sinusoidal_positions(40, 16)
    assert table.shape == (40, 16)
    assert np.abs(table).max() <= 1.0
    assert np.array_equal(table, sinusoidal_positions(40, 16))
    # distinct rows
    assert len({tuple(np.round(r, 12)) for r in table}) == 40
