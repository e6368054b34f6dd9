import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from deatt import numeric_core as nc


def finite_rows(max_side=6):
    return arrays(
        np.float64,
        st.tuples(st.integers(1, max_side), st.integers(1, max_side)),
        elements=st.floats(-50, 50, allow_nan=False, allow_infinity=False),
    )


class TestMatmul:
    def test_identity(self):
        B = np.array([[1.5, -2.0], [0.25, 4.0]])
        np.testing.assert_array_equal(nc.matmul(np.eye(2), B).data, B)

    def test_zero(self):
        B = np.arange(4.0).reshape(2, 2)
        np.testing.assert_array_equal(nc.matmul(np.zeros((2, 2)), B).data, np.zeros((2, 2)))

    def test_hand_case(self):
        # 1*5+2*7=19, 1*6+2*8=22, 3*5+4*7=43, 3*6+4*8=50
        out = nc.matmul(np.array([[1.0, 2.0], [3.0, 4.0]]), np.array([[5.0, 6.0], [7.0, 8.0]]))
        np.testing.assert_array_equal(out.data, [[19, 22], [43, 50]])

    def test_shape_error(self):
        with pytest.raises(nc.ShapeError):
            nc.matmul(np.ones((2, 3)), np.ones((2, 3)))

    def test_associativity(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            m, k, l, n = rng.integers(1, 7, size=4)
            a, b, c = rng.normal(size=(m, k)), rng.normal(size=(k, l)), rng.normal(size=(l, n))
            left = nc.matmul(nc.matmul(a, b), c).data
            right = nc.matmul(a, nc.matmul(b, c)).data
            np.testing.assert_allclose(left, right, atol=1e-9, rtol=0)

    def test_batched_against_weight_matches_loop(self):
        rng = np.random.default_rng(0)
        a, w = rng.normal(size=(3, 4, 5, 6)), rng.normal(size=(6, 2))
        out = nc.matmul(a, w).data
        for idx in np.ndindex(3, 4):
            np.testing.assert_allclose(out[idx], a[idx] @ w, atol=1e-12)


class TestSoftmax:
    def test_uniform_row(self):
        np.testing.assert_allclose(nc.softmax_rows(np.array([[2.0, 2.0, 2.0]])).data, [[1 / 3] * 3])

    def test_masked_entry(self):
        p = nc.softmax_rows(np.array([[0.0, nc.SENTINEL]])).data
        assert p[0, 0] == pytest.approx(1.0)
        assert p[0, 1] < 1e-6

    def test_direct_formula(self):
        z = sum(math.exp(v) for v in (1, 2, 3))
        expected = [math.exp(v) / z for v in (1, 2, 3)]
        np.testing.assert_allclose(nc.softmax_rows(np.array([[1.0, 2.0, 3.0]])).data[0], expected,
                                   rtol=1e-14)

    def test_degenerate_row(self):
        with pytest.raises(nc.DegenerateRowError):
            nc.softmax_rows(np.array([[0.0, 1.0], [nc.SENTINEL, nc.SENTINEL]]))

    @settings(max_examples=200, deadline=None)
    @given(finite_rows())
    def test_rows_sum_to_one(self, s):
        p = nc.softmax_rows(s).data
        np.testing.assert_allclose(p.sum(axis=-1), 1.0, atol=1e-6)


class TestActivations:
    def test_sigmoid_zero(self):
        assert nc.sigmoid(np.array([0.0])).data[0] == 0.5

    def test_relu(self):
        np.testing.assert_array_equal(nc.relu(np.array([-1.0, 2.0])).data, [0.0, 2.0])

    def test_sigmoid_saturation(self):
        eps = 1.0 - nc.sigmoid(np.array([20.0])).data[0]
        # 1 - 1/(1+e^-20) = e^-20/(1+e^-20) ~ 2.06e-9
        assert 0 < eps < 1e-8
        assert eps == pytest.approx(math.exp(-20) / (1 + math.exp(-20)), rel=1e-6)

    def test_sigmoid_extremes_finite(self):
        y = nc.sigmoid(np.array([-800.0, 800.0])).data
        assert np.all(np.isfinite(y))

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            nc.apply_activation("gelu", np.zeros(2))


class TestTape:
    def test_no_recording_outside_tape(self):
        p = nc.parameter(np.ones((2, 2)), "p")
        out = nc.matmul(p, p)
        assert not out.requires_grad

    def test_gradient_shapes_and_unused_param(self):
        rng = np.random.default_rng(0)
        a = nc.parameter(rng.normal(size=(3, 4)), "a")
        unused = nc.parameter(rng.normal(size=(5,)), "unused")
        with nc.GradTape() as tape:
            loss = nc.sum_all(nc.tanh(a))
        g = tape.gradient(loss, {"a": a, "unused": unused})
        assert g["a"].shape == a.shape
        np.testing.assert_array_equal(g["unused"], 0.0)
        np.testing.assert_allclose(g["a"], 1 - np.tanh(a.data) ** 2)

    def test_tape_records_primitives_in_order(self):
        p = nc.parameter(np.ones((2, 2)), "p")
        with nc.GradTape() as tape:
            nc.sum_all(nc.relu(nc.matmul(p, p)))
        assert tape.ops() == ["matmul", "relu", "sum"]

    def test_checked_mode_rejects_nan(self):
        with nc.checked(), np.errstate(invalid="ignore"), pytest.raises(nc.NumericError):
            nc.add(np.array([np.inf]), np.array([-np.inf]))

    def test_parameter_rejects_nan(self):
        with pytest.raises(nc.NumericError):
            nc.parameter(np.array([np.nan]))

    def test_scatter_rows_matches_add_at(self):
        rng = np.random.default_rng(1)
        idx = rng.integers(0, 20, size=(4, 7))
        vals = rng.normal(size=(28, 3))
        ref = np.zeros((20, 3))
        np.add.at(ref, idx.reshape(-1), vals)
        np.testing.assert_allclose(nc.scatter_rows(idx, vals, (20, 3)), ref, atol=1e-14)


class TestGradCheck:
    def test_quadratic(self):
        p = nc.parameter(np.array([0.3, -1.2, 2.5]), "p")
        rep = nc.grad_check(lambda: nc.sum_all(nc.mul(p, p)), {"p": p}, tol=1e-8)
        assert rep.passed
        assert rep.blocks[0].max_rel_error < 1e-8

    def test_constant_loss(self):
        p = nc.parameter(np.array([1.0, 2.0]), "p")
        with nc.GradTape() as tape:
            loss = nc.constant(np.array(3.0))
            loss = nc.add(loss, nc.scale(nc.sum_all(p), 0.0))
        np.testing.assert_array_equal(tape.gradient(loss, [p])[0], 0.0)
        rep = nc.grad_check(lambda: nc.add(3.0, nc.scale(nc.sum_all(p), 0.0)), {"p": p})
        assert rep.passed

    def test_every_primitive(self):
        rng = np.random.default_rng(7)
        a = nc.parameter(rng.normal(size=(2, 3, 4)), "a")
        w = nc.parameter(rng.normal(size=(4, 3)), "w")
        table = nc.parameter(rng.normal(size=(6, 4)), "table")
        idx = np.array([[0, 2, 2], [5, 1, 0]])
        mask = np.eye(3, dtype=bool)
        y = rng.integers(0, 2, size=6)

        def loss():
            h = nc.add(a, nc.gather_rows(table, idx))
            s = nc.matmul(h, nc.transpose(h))
            s = nc.mask_fill(nc.scale(s, 0.5), mask, nc.SENTINEL)
            att = nc.softmax_rows(s)
            v = nc.layer_norm(nc.matmul(att, a))
            z = nc.matmul(nc.mul(nc.sigmoid(v), nc.tanh(v)), w)
            z = nc.sub(nc.relu(z), nc.scale(z, 0.1))
            return nc.bce_with_logits(nc.reshape(nc.matmul(z, np.ones((3, 1))), (6,)), y)

        rep = nc.grad_check(loss, {"a": a, "w": w, "table": table})
        assert rep.passed, rep.to_dict()

    def test_concat_stack_gradients(self):
        rng = np.random.default_rng(2)
        a = nc.parameter(rng.normal(size=(2, 3)), "a")
        b = nc.parameter(rng.normal(size=(2, 2)), "b")

        def loss():
            c = nc.concat([a, b], axis=-1)
            s = nc.stack([c, nc.scale(c, 2.0)], axis=1)
            return nc.mean_all(nc.mul(s, s))

        assert nc.grad_check(loss, {"a": a, "b": b}).passed

    def test_detects_wrong_gradient(self):
        p = nc.parameter(np.array([1.0, 2.0]), "p")
        rep = nc.grad_check(lambda: nc.sum_all(nc.mul(p, p)), {"p": p},
                            grad_hook=lambda name, g: g * 1.5)
        assert not rep.passed
        assert rep.failures() == ["p"]

    def test_aborts_on_nonfinite(self):
        p = nc.parameter(np.array([0.0]), "p")
        h = 1e-5

        def loss():
            # finite at p=0, -inf at p=+-h
            with np.errstate(divide="ignore"):
                bad = np.log(1.0 - (p.data[0] / h) ** 2)
            return nc.add(bad, nc.scale(nc.sum_all(p), 0.0))

        with pytest.raises(nc.GradCheckAborted, match=r"p\[0\]"):
            nc.grad_check(loss, {"p": p}, h=h)

    def test_rejects_float32(self):
        p = nc.parameter(np.ones(2, dtype=np.float32), "p")
        with pytest.raises(TypeError):
            nc.grad_check(lambda: nc.sum_all(p), {"p": p})
