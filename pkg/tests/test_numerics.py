import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from ignn.numerics import (AdamState, ParameterStore, ShapeError, Tensor, adam_step, backward,
                           check_gradients, finite_difference_gradient, forward_primitive, new_tape,
                           no_grad, relative_error)
from ignn.numerics import tensor as T
from ignn.numerics.params import CheckpointError


def grad_of(fn, *xs):
    for x in xs:
        x.requires_grad = True
        x.grad = None
    with new_tape() as tape:
        backward(fn(*xs), tape)
    return [x.grad for x in xs]


class TestPrimitives:
    def test_matmul_identity(self):
        out = T.matmul(Tensor([[1, 2], [3, 4]]), Tensor(np.eye(2)))
        np.testing.assert_array_equal(out.data, [[1, 2], [3, 4]])

    def test_relu(self):
        np.testing.assert_array_equal(T.relu(Tensor([-1.0, 0.0, 2.0])).data, [0, 0, 2])

    def test_scatter_add_sums_same_row(self):
        out = T.scatter_add_rows(Tensor([[1.0, 2.0], [3.0, 4.0]]), [1, 1], 3)
        np.testing.assert_array_equal(out.data, [[0, 0], [4, 6], [0, 0]])

    def test_shape_mismatch_reports_both_shapes(self):
        with pytest.raises(ShapeError, match=r"\(2, 3\).*\(4, 5\)"):
            T.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 5))))
        with pytest.raises(ShapeError, match=r"\(2,\).*\(3,\)"):
            T.add(Tensor(np.zeros(2)), Tensor(np.zeros(3)))

    def test_unknown_primitive(self):
        with pytest.raises(KeyError, match="unknown primitive"):
            forward_primitive("conv9d", [Tensor([1.0])])

    def test_record_only_when_grad_needed(self):
        with new_tape() as tape:
            T.relu(Tensor([1.0]))
            assert len(tape) == 0
            T.relu(Tensor([1.0], requires_grad=True))
            assert len(tape) == 1
            with no_grad():
                T.relu(Tensor([1.0], requires_grad=True))
            assert len(tape) == 1

    def test_segment_softmax_rows_sum_to_one(self):
        seg = np.array([0, 0, 1, 2, 2, 2])
        a = T.segment_softmax(Tensor(np.arange(6.0)), seg, 3).data
        np.testing.assert_allclose(np.bincount(seg, weights=a), 1.0, atol=1e-15)
        assert a[2] == 1.0


class TestBackward:
    def test_sum_of_squares(self):
        (g,) = grad_of(lambda x: T.sum_(T.mul(x, x)), Tensor([1.0, 2.0, 3.0]))
        np.testing.assert_allclose(g, [2, 4, 6])

    def test_sigmoid_at_zero(self):
        (g,) = grad_of(lambda x: T.sum_(T.sigmoid(x)), Tensor([0.0]))
        assert g[0] == pytest.approx(0.25, abs=1e-15)

    def test_non_scalar_loss_rejected(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        with new_tape() as tape:
            with pytest.raises(ShapeError, match="scalar"):
                backward(T.mul(x, x), tape)

    def test_nan_reported_with_primitive(self):
        x = Tensor([0.0], requires_grad=True)
        with new_tape() as tape:
            # d/dx tanh at an infinite upstream gradient
            loss = T.sum_(T.scale(T.tanh(x), np.inf))
            with pytest.raises(FloatingPointError, match="scale"):
                backward(loss, tape)

    def test_tape_consumed(self):
        x = Tensor([1.0], requires_grad=True)
        with new_tape() as tape:
            loss = T.sum_(T.mul(x, x))
            assert len(tape) == 2
            backward(loss, tape)
            assert len(tape) == 0

    def test_accumulation_matches_fused_expression(self):
        rng = np.random.default_rng(0)
        x0 = rng.normal(size=4)
        (g_twice,) = grad_of(lambda x: T.sum_(T.add(T.mul(x, x), T.tanh(x))), Tensor(x0))
        # fused: d/dx (x^2 + tanh x) = 2x + 1 - tanh^2 x
        np.testing.assert_allclose(g_twice, 2 * x0 + 1 - np.tanh(x0) ** 2, rtol=1e-14)

    def test_leaf_grads_accumulate_across_backward_calls(self):
        x = Tensor([3.0], requires_grad=True)
        for _ in range(2):
            with new_tape() as tape:
                backward(T.sum_(T.scale(x, 2.0)), tape)
        assert x.grad[0] == 4.0


PRIMITIVE_CASES = {
    "matmul": lambda r: (lambda a, b: T.matmul(a, b), [r.normal(size=(3, 4)), r.normal(size=(4, 2))]),
    "add_broadcast": lambda r: (lambda a, b: T.add(a, b), [r.normal(size=(3, 4)), r.normal(size=(1, 4))]),
    "sub_broadcast": lambda r: (lambda a, b: T.sub(a, b), [r.normal(size=(3, 4)), r.normal(size=(4,))]),
    "mul_broadcast": lambda r: (lambda a, b: T.mul(a, b), [r.normal(size=(3, 4)), r.normal(size=(3, 1))]),
    "add_bias": lambda r: (lambda a, b: T.add_bias(a, b), [r.normal(size=(3, 4)), r.normal(size=4)]),
    "bmv": lambda r: (lambda w, x: T.bmv(w, x), [r.normal(size=(5, 3, 2)), r.normal(size=(5, 2))]),
    "sigmoid": lambda r: (T.sigmoid, [r.normal(size=(3, 4)) * 3]),
    "tanh": lambda r: (T.tanh, [r.normal(size=(3, 4))]),
    "relu": lambda r: (T.relu, [r.normal(size=(3, 4))]),
    "abs": lambda r: (T.abs_, [r.normal(size=(3, 4))]),
    "exp": lambda r: (T.exp, [r.normal(size=(3, 4))]),
    "concat": lambda r: (lambda a, b: T.concat([a, b], axis=1), [r.normal(size=(3, 2)), r.normal(size=(3, 4))]),
    "reshape": lambda r: (lambda a: T.reshape(a, (2, 6)), [r.normal(size=(3, 4))]),
    "sum_axis": lambda r: (lambda a: T.sum_(a, axis=0), [r.normal(size=(3, 4))]),
    "mean": lambda r: (lambda a: T.mean(a, axis=1), [r.normal(size=(3, 4))]),
    "mean_all": lambda r: (T.mean, [r.normal(size=(3, 4))]),
    "sqnorm": lambda r: (lambda a: T.sqnorm(a, axis=1), [r.normal(size=(3, 4))]),
    "softmax": lambda r: (lambda a: T.softmax(a, axis=1), [r.normal(size=(3, 4))]),
    "log_softmax": lambda r: (lambda a: T.log_softmax(a, axis=1), [r.normal(size=(3, 4))]),
    "segment_softmax": lambda r: (lambda a: T.segment_softmax(a, [0, 0, 1, 1, 1, 2], 3), [r.normal(size=6)]),
    "gather_rows": lambda r: (lambda a: T.gather_rows(a, [2, 0, 2, 1]), [r.normal(size=(3, 4))]),
    "scatter_add_rows": lambda r: (lambda a: T.scatter_add_rows(a, [1, 1, 0], 4), [r.normal(size=(3, 2))]),
    "pick": lambda r: (lambda a: T.pick(a, [0, 3, 3]), [r.normal(size=(3, 4))]),
}


@pytest.mark.parametrize("seed", range(5))
@pytest.mark.parametrize("name", sorted(PRIMITIVE_CASES))
def test_primitive_gradients_match_finite_differences(name, seed):
    rng = np.random.default_rng(seed)
    fn, arrays = PRIMITIVE_CASES[name](rng)
    inputs = [Tensor(a) for a in arrays]
    out_shape = fn(*inputs).shape
    c = Tensor(rng.normal(size=out_shape))
    errs = check_gradients(lambda: T.sum_(T.mul(fn(*inputs), c)), {str(i): t for i, t in enumerate(inputs)})
    assert max(errs.values()) <= 1e-4


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, st.integers(1, 6), elements=st.floats(-3, 3)))
def test_tanh_square_gradient_property(x0):
    (g,) = grad_of(lambda x: T.sum_(T.mul(T.tanh(x), T.tanh(x))), Tensor(x0))
    fd = finite_difference_gradient(lambda x: T.sum_(T.mul(T.tanh(x), T.tanh(x))), Tensor(x0.copy()))
    assert relative_error(g, fd) <= 1e-4


class TestFiniteDifferences:
    def test_square(self):
        g = finite_difference_gradient(lambda x: T.sum_(T.mul(x, x)), Tensor([3.0]), 1e-5)
        assert g[0] == pytest.approx(6.0, abs=1e-6)

    def test_sum_gives_ones(self):
        g = finite_difference_gradient(lambda x: T.sum_(x), Tensor(np.random.default_rng(1).normal(size=(2, 3))))
        np.testing.assert_allclose(g, 1.0, atol=1e-9)

    def test_non_finite_reports_coordinate(self):
        with pytest.raises(FloatingPointError, match="coordinate 1"):
            finite_difference_gradient(lambda x: float(np.log(x.data[0]) + (np.inf if x.data[1] > 2.0 else 0)),
                                       Tensor([1.0, 2.0]))

    def test_step_must_be_positive(self):
        with pytest.raises(ValueError):
            finite_difference_gradient(lambda x: 0.0, Tensor([1.0]), 0.0)


def _store(values: dict) -> ParameterStore:
    s = ParameterStore()
    for k, v in values.items():
        s.add(k, np.asarray(v, dtype=float))
    return s


class TestAdam:
    def test_zero_gradient_leaves_params(self):
        s = _store({"a": [1.0, -2.0], "b": [[0.5]]})
        before = s.snapshot()
        adam_step(s, AdamState(lr=0.1))
        for n, arr in s.snapshot().items():
            np.testing.assert_array_equal(arr, before[n])

    def test_first_step_magnitude_is_lr(self):
        s = _store({"w": [0.0]})
        s["w"].grad = np.array([-3.7])
        adam_step(s, AdamState(lr=0.01, eps=1e-300))
        assert s["w"].data[0] == pytest.approx(0.01, rel=1e-12)

    def test_converges_on_quadratic(self):
        s = _store({"w": [0.0]})
        state = AdamState(lr=0.1)
        for _ in range(500):
            w = s["w"]
            with new_tape() as tape:
                d = T.sub(w, Tensor([5.0]))
                backward(T.sum_(T.mul(d, d)), tape)
            adam_step(s, state)
        assert abs(s["w"].data[0] - 5.0) < 0.01
        assert state.t == 500

    def test_missing_grad_rejected(self):
        s = _store({"x.a": [1.0], "x.b": [2.0]})
        s["x.b"].grad = None
        with pytest.raises(ValueError, match="x.b"):
            adam_step(s, AdamState())

    def test_deterministic_and_zeroes_grads(self):
        runs = []
        for _ in range(2):
            s = _store({"w": [1.0, 2.0]})
            state = AdamState(lr=0.05)
            for k in range(3):
                s["w"].grad = np.array([0.3, -1.1]) * (k + 1)
                adam_step(s, state)
            assert (state.v["w"] >= 0).all()
            np.testing.assert_array_equal(s["w"].grad, 0.0)
            runs.append(s["w"].data.copy())
        np.testing.assert_array_equal(runs[0], runs[1])


class TestParameterStore:
    def test_sorted_and_unique(self):
        s = ParameterStore()
        s.add("b.w", np.zeros(2))
        s.add("a.w", np.zeros(3))
        assert s.names() == ["a.w", "b.w"]
        assert s.num_params == 5
        with pytest.raises(KeyError):
            s.add("a.w", np.zeros(1))

    def test_glorot_bounds_and_determinism(self):
        a = ParameterStore().glorot("w", 10, 20, seed=3).data
        b = ParameterStore().glorot("w", 10, 20, seed=3).data
        np.testing.assert_array_equal(a, b)
        assert np.abs(a).max() <= np.sqrt(6 / 30)
        c = ParameterStore().glorot("w", 10, 20, seed=4).data
        assert not np.array_equal(a, c)

    def test_checkpoint_round_trip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(0)
        s = _store({"x.w": rng.normal(size=(3, 4)), "x.b": rng.normal(size=4), "y": [np.pi]})
        s.save(tmp_path / "c.ckpt", {"hidden": 4}, extra={"note": 1})
        header, arrays = ParameterStore.read(tmp_path / "c.ckpt")
        assert header["config"] == {"hidden": 4} and header["extra"] == {"note": 1}
        for n, t in s.items():
            assert arrays[n].tobytes() == t.data.tobytes()

    def test_corrupted_checkpoint_rejected(self, tmp_path):
        s = _store({"w": [1.0, 2.0]})
        p = tmp_path / "c.ckpt"
        s.save(p, {"a": 1})
        raw = p.read_bytes()
        (tmp_path / "short.ckpt").write_bytes(raw[:-4])
        with pytest.raises(CheckpointError, match="truncated"):
            ParameterStore.read(tmp_path / "short.ckpt")
        (tmp_path / "bad.ckpt").write_bytes(raw.replace(b'"a": 1', b'"a": 2'))
        with pytest.raises(CheckpointError, match="hash"):
            ParameterStore.read(tmp_path / "bad.ckpt")
