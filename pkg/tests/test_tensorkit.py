import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from core.errors import ContractError, DimensionError, InputError, NumericError
from core.tensorkit import ops
from core.tensorkit.rng import derive_seed, make_rng
from core.tensorkit.tensor import Tape, Tensor, backward, parameter_digest, zero_grad


def t64(a, grad=False):
    return Tensor(np.asarray(a, dtype=np.float64), requires_grad=grad)


def triple_loop(a, b):
    m, k = a.shape
    n = b.shape[1]
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            s = 0.0
            for p in range(k):
                s += a[i, p] * b[p, j]
            out[i, j] = s
    return out


class TestMatmul:
    def test_identity(self, rng):
        x = rng.standard_normal((3, 5)).astype(np.float32)
        out = ops.matmul(Tensor(np.eye(3, dtype=np.float32)), Tensor(x))
        assert np.array_equal(out.data, x)

    def test_zeros(self, rng):
        out = ops.matmul(Tensor(np.zeros((2, 4))), Tensor(rng.standard_normal((4, 2))))
        assert np.array_equal(out.data, np.zeros((2, 2), dtype=np.float32))

    def test_triple_loop_oracle(self, rng):
        a, b = rng.standard_normal((3, 2)), rng.standard_normal((2, 3))
        out = ops.matmul(t64(a), t64(b))
        np.testing.assert_allclose(out.data, triple_loop(a, b), rtol=1e-6, atol=1e-12)

    def test_shared_weights_over_batch(self, rng):
        a, b = rng.standard_normal((2, 3, 4)), rng.standard_normal((4, 5))
        out = ops.matmul(t64(a), t64(b))
        for i in range(2):
            np.testing.assert_allclose(out.data[i], triple_loop(a[i], b), rtol=1e-6, atol=1e-12)

    def test_inner_dim_mismatch(self):
        with pytest.raises(DimensionError):
            ops.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((4, 2))))

    def test_batch_mismatch(self):
        with pytest.raises(DimensionError):
            ops.matmul(Tensor(np.ones((2, 2, 3))), Tensor(np.ones((3, 3, 2))))


class TestSoftmax:
    def test_uniform(self):
        out = ops.softmax(Tensor(np.zeros(3)))
        np.testing.assert_allclose(out.data, [1 / 3] * 3, atol=1e-7)

    def test_large_logit_is_stable(self):
        out = ops.softmax(Tensor(np.array([1000.0, 0.0])))
        assert np.isfinite(out.data).all()
        np.testing.assert_allclose(out.data, [1.0, 0.0], atol=1e-7)

    def test_float64_oracle(self, rng):
        x = rng.standard_normal(17) * 3
        ref = np.exp(x - x.max()) / np.exp(x - x.max()).sum()
        out = ops.softmax(Tensor(x.astype(np.float32)))
        np.testing.assert_allclose(out.data, ref, atol=1e-6)

    @given(arrays(np.float32, st.tuples(st.integers(1, 5), st.integers(1, 9)),
                  elements=st.floats(-1e4, 1e4, width=32)))
    def test_rows_sum_to_one(self, x):
        out = ops.softmax(Tensor(x), axis=-1)
        np.testing.assert_allclose(out.data.sum(axis=-1), 1.0, atol=1e-6)

    def test_non_finite_input(self):
        with pytest.raises(NumericError):
            ops.softmax(Tensor(np.array([0.0, np.nan])))


class TestLayerNorm:
    def test_constant_row_maps_to_zero(self):
        out = ops.layer_norm(Tensor(np.full((2, 6), 3.5)), Tensor(np.ones(6)), Tensor(np.zeros(6)))
        assert np.array_equal(out.data, np.zeros((2, 6), dtype=np.float32))

    def test_zero_gain_gives_bias(self, rng):
        bias = rng.standard_normal(5).astype(np.float32)
        out = ops.layer_norm(Tensor(rng.standard_normal((3, 5))), Tensor(np.zeros(5)), Tensor(bias))
        np.testing.assert_array_equal(out.data, np.broadcast_to(bias, (3, 5)))

    def test_normalised_moments(self, rng):
        x = rng.standard_normal((4, 32)) * 10 + 3
        out = ops.layer_norm(t64(x), t64(np.ones(32)), t64(np.zeros(32)))
        assert np.abs(out.data.mean(axis=-1)).max() <= 1e-6
        np.testing.assert_allclose(out.data.var(axis=-1), 1.0, atol=1e-5)

    def test_gain_shape_checked(self):
        with pytest.raises(DimensionError):
            ops.layer_norm(Tensor(np.ones((2, 4))), Tensor(np.ones(3)), Tensor(np.zeros(4)))


class TestCrossEntropy:
    def test_uniform_logits(self):
        loss = ops.cross_entropy(Tensor(np.zeros((3, 4))), [0, 1, 3])
        assert loss.item() == pytest.approx(math.log(4), abs=1e-6)

    def test_confident_correct(self):
        logits = np.zeros((2, 5))
        logits[0, 2] = logits[1, 4] = 1e4
        assert ops.cross_entropy(Tensor(logits), [2, 4]).item() == pytest.approx(0.0, abs=1e-6)

    def test_logsumexp_oracle(self, rng):
        logits = rng.standard_normal((6, 10)) * 2
        targets = rng.integers(0, 10, size=6)
        m = logits.max(axis=1, keepdims=True)
        lse = (m + np.log(np.exp(logits - m).sum(axis=1, keepdims=True)))[:, 0]
        ref = np.mean(lse - logits[np.arange(6), targets])
        loss = ops.cross_entropy(Tensor(logits.astype(np.float32)), targets)
        assert loss.item() == pytest.approx(ref, abs=1e-5)

    def test_target_out_of_range(self):
        with pytest.raises(InputError):
            ops.cross_entropy(Tensor(np.zeros((2, 4))), [0, 4])
        with pytest.raises(IndexError):
            ops.cross_entropy(Tensor(np.zeros((2, 4))), [-1, 0])


class TestBackward:
    def test_sum_gives_ones(self, rng):
        x = t64(rng.standard_normal((3, 4)), grad=True)
        with Tape() as tape:
            loss = ops.sum_all(x)
        backward(tape, loss)
        assert np.array_equal(x.grad, np.ones((3, 4)))

    def test_matmul_hand_formula(self, rng):
        a = t64(rng.standard_normal((3, 4)), grad=True)
        b = t64(rng.standard_normal((4, 2)), grad=True)
        with Tape() as tape:
            loss = ops.sum_all(ops.matmul(a, b))
        backward(tape, loss)
        np.testing.assert_allclose(a.grad, np.ones((3, 2)) @ b.data.T)
        np.testing.assert_allclose(b.grad, a.data.T @ np.ones((3, 2)))

    def test_unreached_tensor_gets_zero_grad(self, rng):
        x = t64(rng.standard_normal(4), grad=True)
        y = t64(rng.standard_normal(4), grad=True)
        with Tape() as tape:
            ops.scale(y, 2.0)
            loss = ops.sum_all(x)
        backward(tape, loss)
        assert np.array_equal(y.grad, np.zeros(4))

    def test_off_tape_grad_is_stale_until_zeroed(self, rng):
        x = t64(rng.standard_normal(4), grad=True)
        idle = t64(rng.standard_normal(4), grad=True)
        idle.grad = np.full(4, 7.0)
        with Tape() as tape:
            loss = ops.sum_all(x)
        backward(tape, loss)
        assert np.array_equal(idle.grad, np.full(4, 7.0))
        zero_grad([x, idle])
        assert not idle.grad.any() and not x.grad.any()

    def test_shared_input_accumulates(self, rng):
        x = t64(rng.standard_normal(5), grad=True)
        with Tape() as tape:
            loss = ops.sum_all(ops.mul(x, x))
        backward(tape, loss)
        np.testing.assert_allclose(x.grad, 2 * x.data)

    def test_non_scalar_loss(self, rng):
        x = t64(rng.standard_normal(3), grad=True)
        with Tape() as tape:
            y = ops.scale(x, 2.0)
        with pytest.raises(ContractError):
            backward(tape, y)

    def test_untaped_ops_record_nothing(self, rng):
        x = t64(rng.standard_normal(3), grad=True)
        ops.scale(x, 2.0)
        with Tape() as tape:
            ops.scale(Tensor(np.ones(3)), 2.0)
        assert len(tape) == 0

    def test_tape_visits_in_reverse_once(self, rng):
        x = t64(rng.standard_normal(3), grad=True)
        with Tape() as tape:
            loss = ops.sum_all(ops.gelu(ops.scale(x, 0.5)))
        assert [e.op for e in tape.entries] == ["scale", "gelu", "sum"]
        backward(tape, loss)
        assert x.grad.shape == (3,)


class TestShapeOps:
    def test_add_trailing_broadcast_grad(self, rng):
        a = t64(rng.standard_normal((2, 3, 4)), grad=True)
        b = t64(rng.standard_normal(4), grad=True)
        with Tape() as tape:
            loss = ops.sum_all(ops.add(a, b))
        backward(tape, loss)
        assert np.array_equal(b.grad, np.full(4, 6.0))

    def test_add_rejects_leading_broadcast(self):
        with pytest.raises(DimensionError):
            ops.add(Tensor(np.ones((2, 3))), Tensor(np.ones(2)))

    def test_transpose_round_trip(self, rng):
        x = rng.standard_normal((2, 3, 4))
        out = ops.transpose(ops.transpose(t64(x), (2, 0, 1)), (1, 2, 0))
        assert np.array_equal(out.data, x)

    def test_reshape_bad_size(self):
        with pytest.raises(DimensionError):
            ops.reshape(Tensor(np.ones((2, 3))), (4, 2))

    def test_embedding_scatter_add(self):
        w = t64(np.arange(12.0).reshape(4, 3), grad=True)
        with Tape() as tape:
            loss = ops.sum_all(ops.embedding(w, [[1, 1], [3, 0]]))
        backward(tape, loss)
        np.testing.assert_array_equal(w.grad[:, 0], [1.0, 2.0, 0.0, 1.0])

    def test_embedding_out_of_range(self):
        with pytest.raises(InputError):
            ops.embedding(Tensor(np.ones((4, 2))), [0, 4])

    def test_take_backward(self, rng):
        x = t64(rng.standard_normal((2, 5, 3)), grad=True)
        with Tape() as tape:
            loss = ops.sum_all(ops.take(x, 4, axis=1))
        backward(tape, loss)
        assert x.grad[:, 4].sum() == 6.0 and x.grad[:, :4].sum() == 0.0

    def test_override_rows(self, rng):
        base = t64(rng.standard_normal((1, 4, 2)), grad=True)
        vals = t64(rng.standard_normal((1, 2, 2)), grad=True)
        with Tape() as tape:
            out = ops.override_rows(base, [1, 3], vals)
            loss = ops.sum_all(out)
        backward(tape, loss)
        assert np.array_equal(out.data[0, [1, 3]], vals.data[0])
        assert np.array_equal(out.data[0, [0, 2]], base.data[0, [0, 2]])
        assert np.array_equal(base.grad[0, [1, 3]], np.zeros((2, 2)))
        assert np.array_equal(vals.grad, np.ones((1, 2, 2)))

    def test_override_rows_unique_positions(self):
        with pytest.raises(ContractError):
            ops.override_rows(Tensor(np.ones((1, 4, 2))), [1, 1], Tensor(np.ones((1, 2, 2))))

    def test_causal_mask_zeroes_future(self, rng):
        att = ops.softmax(ops.causal_mask(Tensor(rng.standard_normal((3, 3)))))
        assert np.array_equal(np.triu(att.data, k=1), np.zeros((3, 3), dtype=np.float32))


class TestDeterminism:
    def test_bit_identical(self, rng):
        x = rng.standard_normal((4, 8)).astype(np.float32)
        w = rng.standard_normal((8, 8)).astype(np.float32)

        def run():
            h = ops.gelu(ops.matmul(Tensor(x), Tensor(w)))
            return ops.softmax(h).data

        assert np.array_equal(run(), run())

    def test_parameter_digest_tracks_bytes(self):
        a = Tensor(np.ones(3))
        d1 = parameter_digest([("a", a)])
        a.data[0] = 2.0
        assert parameter_digest([("a", a)]) != d1


class TestRng:
    def test_streams_are_reproducible(self):
        assert np.array_equal(make_rng(5, "init").standard_normal(4), make_rng(5, "init").standard_normal(4))

    def test_streams_are_independent(self):
        assert not np.array_equal(make_rng(5, "init").standard_normal(4), make_rng(5, "data").standard_normal(4))

    def test_derive_seed(self):
        assert derive_seed(1, "a") == derive_seed(1, "a")
        assert derive_seed(1, "a") != derive_seed(1, "b")
