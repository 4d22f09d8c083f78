import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from spepattern import tensor as T
from spepattern.errors import ContractError, DimensionError
from spepattern.optim import AdamState, adam_step, grad_check
from spepattern.symmetry import apply_symmetry
from spepattern.tensor import Tensor

from conftest import numeric_grad


def f64(a, grad=False):
    return Tensor(np.asarray(a, dtype=np.float64), requires_grad=grad)


class TestMatmul:
    def test_identity(self):
        out = T.matmul(f64(np.eye(2)), f64([[1, 2], [3, 4]]))
        np.testing.assert_array_equal(out.data, [[1, 2], [3, 4]])

    def test_inner_product(self):
        assert T.matmul(f64([[1, 2]]), f64([[3], [4]])).data.tolist() == [[11.0]]

    def test_gradient_of_sum(self):
        B = np.array([[2.0, 5.0], [7.0, 1.0]])
        expected = numeric_grad(lambda a: (a @ B).sum(), np.eye(2))
        np.testing.assert_allclose(expected, [[7, 8], [7, 8]], atol=1e-8)
        A = f64(np.eye(2), grad=True)
        T.sum(T.matmul(A, f64(B))).backward()
        np.testing.assert_allclose(A.grad, expected, atol=1e-8)

    def test_shape_mismatch_names_shapes(self):
        with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 2\)"):
            T.matmul(f64(np.zeros((2, 3))), f64(np.zeros((2, 2))))

    def test_batched_against_2d_weight(self, rng):
        a, b = rng.normal(size=(3, 4, 5)), rng.normal(size=(5, 2))
        assert grad_check(lambda t: T.sum(T.matmul(t, f64(b)) * 1.7), a) < 1e-6
        assert grad_check(lambda t: T.sum(T.matmul(f64(a), t)), b) < 1e-6


class TestConv:
    def test_zero_kernel_gives_bias(self):
        x = f64(np.random.default_rng(0).normal(size=(2, 3, 5, 4)))
        out = T.conv2d_3x3(x, f64(np.zeros((4, 3, 3, 3))), f64([1.0, -2.0, 0.5, 3.0]))
        assert out.shape == (2, 4, 5, 4)
        for c, b in enumerate([1.0, -2.0, 0.5, 3.0]):
            assert np.all(out.data[:, c] == b)

    def test_ones_direct_summation(self):
        out = T.conv2d_3x3(f64(np.ones((1, 1, 3, 3))), f64(np.ones((1, 1, 3, 3))), f64([0.0])).data[0, 0]
        assert out[1, 1] == 9
        assert out[0, 0] == out[0, 2] == out[2, 0] == out[2, 2] == 4
        assert out[0, 1] == 6

    def test_cross_correlation_convention(self):
        x = np.zeros((1, 1, 3, 3))
        x[0, 0, 1, 1] = 1.0
        w = np.arange(9.0).reshape(1, 1, 3, 3)
        out = T.conv2d(f64(x), f64(w)).data[0, 0]
        # a unit impulse through cross-correlation returns the flipped kernel
        np.testing.assert_array_equal(out, w[0, 0, ::-1, ::-1])

    @pytest.mark.parametrize("seed", [0, 1, 2])
    @pytest.mark.parametrize("stride", [1, 2])
    def test_gradients(self, seed, stride):
        r = np.random.default_rng(seed)
        x, w, b = r.normal(size=(1, 2, 4, 4)), r.normal(size=(3, 2, 3, 3)), r.normal(size=3)
        up = r.normal(size=(1, 3, (4 - 1) // stride + 1, (4 - 1) // stride + 1))
        def loss_x(t):
            return _weighted(T.conv2d(t, f64(w), f64(b), stride), up)

        def loss_w(t):
            return _weighted(T.conv2d(f64(x), t, f64(b), stride), up)
        def loss_b(t):
            return _weighted(T.conv2d(f64(x), f64(w), t, stride), up)
        assert grad_check(loss_x, x) < 1e-4
        assert grad_check(loss_w, w) < 1e-4
        assert grad_check(loss_b, b) < 1e-4

    def test_stride2_output_size(self):
        out = T.conv2d(f64(np.zeros((1, 1, 5, 7))), f64(np.zeros((2, 1, 3, 3))), stride=2)
        assert out.shape == (1, 2, 3, 4)

    def test_channel_mismatch(self):
        with pytest.raises(DimensionError):
            T.conv2d_3x3(f64(np.zeros((1, 2, 4, 4))), f64(np.zeros((1, 3, 3, 3))), f64([0.0]))


def _weighted(out, up):
    """sum(out * up) for a constant ``up``, via a dedicated linear op."""
    return T.sum(T.make_op(out.data * up, (out,), lambda g: (g * up,), "weight"))


class TestUpsample:
    def test_blocks(self):
        out = T.upsample2x_nearest(f64([[[[1, 2], [3, 4]]]])).data[0, 0]
        np.testing.assert_array_equal(out, [[1, 1, 2, 2], [1, 1, 2, 2], [3, 3, 4, 4], [3, 3, 4, 4]])

    def test_backward_sums_blocks(self):
        x = f64(np.ones((1, 2, 3, 3)), grad=True)
        T.sum(T.upsample2x_nearest(x)).backward()
        np.testing.assert_array_equal(x.grad, np.full((1, 2, 3, 3), 4.0))

    def test_avg_pool_inverts(self, rng):
        x = rng.normal(size=(2, 3, 4, 5))
        np.testing.assert_array_equal(T.avg_pool2x(T.upsample2x_nearest(f64(x))).data, x)

    def test_grad(self, rng):
        up = rng.normal(size=(1, 2, 6, 4))
        assert grad_check(lambda t: _weighted(T.upsample2x_nearest(t), up), rng.normal(size=(1, 2, 3, 2))) < 1e-6


class TestActivations:
    def test_leaky_relu(self):
        assert T.leaky_relu(f64([-1.0])).data[0] == pytest.approx(-0.2)
        assert T.leaky_relu(f64([3.0])).data[0] == 3.0

    def test_softmax_uniform(self):
        np.testing.assert_allclose(T.softmax(f64([0.0, 0.0, 0.0])).data, [1 / 3] * 3)

    def test_tanh_grad_at_zero(self):
        x = f64([0.0], grad=True)
        T.sum(T.tanh(x)).backward()
        assert x.grad[0] == 1.0

    def test_softmax_bad_axis(self):
        with pytest.raises(DimensionError):
            T.softmax(f64(np.zeros((2, 3))), axis=2)

    def test_softmax_stable_for_large_inputs(self):
        out = T.softmax(f64([1000.0, 1000.0]), axis=0).data
        np.testing.assert_allclose(out, [0.5, 0.5])

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 10_000), st.integers(0, 2))
    def test_softmax_normalized(self, seed, axis):
        x = np.random.default_rng(seed).normal(scale=5, size=(3, 4, 5)).astype(np.float32)
        s = T.softmax(Tensor(x), axis=axis).data
        assert np.all(s >= 0)
        np.testing.assert_allclose(s.sum(axis=axis), 1.0, atol=1e-6)

    @pytest.mark.parametrize("seed", [0, 1, 2])
    @pytest.mark.parametrize("kind,axis", [("leaky_relu", -1), ("tanh", -1), ("relu", -1), ("softmax", 0), ("softmax", 1)])
    def test_gradients(self, seed, kind, axis):
        r = np.random.default_rng(seed)
        up = r.normal(size=(3, 4))
        assert grad_check(lambda t: _weighted(T.activation(t, kind, axis), up), r.normal(size=(3, 4))) < 1e-4


class TestReduce:
    def test_msd_identical(self, rng):
        x = rng.normal(size=(2, 3))
        assert T.mean_sq_diff(f64(x), f64(x)).item() == 0.0

    def test_msd_value_and_grad(self):
        x = f64([1.0, 0.0], grad=True)
        loss = T.reduce(x, "mean_sq_diff", f64([0.0, 0.0]))
        assert loss.item() == 0.5
        loss.backward()
        np.testing.assert_array_equal(x.grad, [1.0, 0.0])

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            T.mean_sq_diff(f64([1.0, 2.0]), f64([1.0]))

    @pytest.mark.parametrize("kind", ["sum", "mean"])
    def test_linear_reductions(self, rng, kind):
        assert grad_check(lambda t: T.reduce(t, kind), rng.normal(size=(2, 5))) < 1e-10

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_diff_reductions(self, seed):
        r = np.random.default_rng(seed)
        c = r.normal(size=(4, 3))
        assert grad_check(lambda t: T.mean_sq_diff(t, f64(c)), r.normal(size=(4, 3))) < 1e-6
        assert grad_check(lambda t: T.mean_abs_diff(t, f64(c)), r.normal(size=(4, 3))) < 1e-4

    def test_l1(self):
        assert T.mean_abs_diff(f64([1.0, -3.0]), f64([0.0, 0.0])).item() == 2.0


class TestBackward:
    def test_sum_grad_is_ones(self, rng):
        x = f64(rng.normal(size=(3, 2)), grad=True)
        T.sum(x).backward()
        np.testing.assert_array_equal(x.grad, np.ones((3, 2)))

    def test_hflip_msd(self):
        x0 = np.array([[1.0, 0.0], [0.0, 0.0]])
        oracle = numeric_grad(lambda a: np.mean((a - a[::-1]) ** 2), x0)
        x = f64(x0, grad=True)
        T.mean_sq_diff(x, apply_symmetry(x, "h")).backward()
        np.testing.assert_allclose(x.grad, oracle, atol=1e-9)
        np.testing.assert_allclose(x.grad, [[1.0, 0.0], [-1.0, 0.0]], atol=1e-12)

    def test_accumulates(self, rng):
        x = f64(rng.normal(size=4), grad=True)
        loss = T.mean_sq_diff(x, f64(np.zeros(4)))
        loss.backward()
        first = x.grad.copy()
        loss.backward()
        np.testing.assert_allclose(x.grad, 2 * first)

    def test_non_scalar_loss(self):
        with pytest.raises(ContractError):
            f64([1.0, 2.0], grad=True).backward()

    def test_shared_subexpression_visited_once(self):
        x = f64([2.0], grad=True)
        y = x * 3.0
        T.sum(y * 1.0 + y).backward()  # d/dx (3x + 3x)
        assert x.grad[0] == 6.0

    def test_deep_chain_no_recursion_limit(self):
        x = f64([1.0], grad=True)
        y = x
        for _ in range(5000):
            y = y + 0.0
        T.sum(y).backward()
        assert x.grad[0] == 1.0

    def test_tape_records_in_topological_order(self):
        with T.Tape() as tape:
            x = f64([1.0, 2.0], grad=True)
            loss = T.sum(T.tanh(x) * 2.0)
        assert tape.ops == ["tanh", "mul_const", "sum"]
        pos = {id(n): i for i, n in enumerate(tape.nodes)}
        for n in tape.nodes:
            for p in n._parents:
                assert p.op == "leaf" or pos[id(p)] < pos[id(n)]
        assert [n.op for n in loss.ancestors()] == ["leaf", "tanh", "mul_const", "sum"]

    def test_no_grad(self):
        x = f64([1.0], grad=True)
        with T.no_grad():
            y = x * 2.0
        assert not y.requires_grad

    def test_determinism(self):
        def run():
            r = np.random.default_rng(5)
            x = Tensor(r.normal(size=(2, 3, 8, 8)).astype(np.float32), requires_grad=True)
            w = Tensor(r.normal(size=(4, 3, 3, 3)).astype(np.float32), requires_grad=True)
            T.mean(T.tanh(T.conv2d(x, w))).backward()
            return x.grad.tobytes() + w.grad.tobytes()
        assert run() == run()

    def test_precision_context(self):
        with T.precision(np.float64):
            assert Tensor([1.0]).dtype == np.float64
        assert Tensor([1.0]).dtype == np.float32


class TestAdam:
    def test_zero_gradient(self):
        p = Tensor(np.array([1.5]), requires_grad=True)
        p.grad = np.zeros(1)
        state = AdamState()
        adam_step([p], state)
        assert p.data[0] == 1.5 and state.step == 1 and p.grad is None

    def test_single_step_moves_by_lr(self):
        p = Tensor(np.array([1.0]), requires_grad=True)
        p.grad = np.ones(1)
        state = AdamState(lr=2e-4)
        adam_step([p], state)
        assert p.data[0] == pytest.approx(1.0 - 2e-4 / (1 + 1e-8), abs=1e-15)

    def test_alternating_signs(self):
        # closed-form recurrence with beta1=0.5, beta2=0.999
        p = Tensor(np.array([0.0]), requires_grad=True)
        state = AdamState(lr=1e-3)
        p.grad = np.ones(1)
        adam_step([p], state)
        first = -p.data[0]
        p.grad = -np.ones(1)
        adam_step([p], state)
        m = 0.5 * 0.5 * 1 + 0.5 * -1  # -0.25
        v = 0.999 * 0.001 + 0.001  # second moment stays ~1 after correction
        m_hat, v_hat = m / (1 - 0.25), v / (1 - 0.999**2)
        assert v_hat == pytest.approx(1.0)
        second = 1e-3 * m_hat / (np.sqrt(v_hat) + 1e-8)
        assert p.data[0] == pytest.approx(-first - second, rel=1e-9)
        assert abs(second) < first

    def test_missing_grad(self):
        with pytest.raises(ContractError):
            adam_step([Tensor(np.zeros(2), requires_grad=True)], AdamState())

    def test_step_counter_increases(self):
        p = Tensor(np.zeros(2), requires_grad=True)
        state = AdamState()
        for k in range(1, 4):
            p.grad = np.ones(2)
            adam_step([p], state)
            assert state.step == k
        assert state.m[0].shape == p.shape == state.v[0].shape


class TestGradCheck:
    def test_sum_is_exact(self, rng):
        assert grad_check(T.sum, rng.normal(size=(3, 3))) < 1e-10

    def test_msd(self, rng):
        c = rng.normal(size=5)
        assert grad_check(lambda t: T.mean_sq_diff(t, f64(c)), rng.normal(size=5)) < 1e-6

    def test_detects_wrong_gradient(self):
        def bad(t):
            return T.sum(T.make_op(t.data**2, (t,), lambda g: (g * t.data,), "bad_square"))
        assert grad_check(bad, np.array([1.0, 2.0])) > 0.1
