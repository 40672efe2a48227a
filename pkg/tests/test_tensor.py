import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from vidssm import tensor as T
from vidssm.tensor import NonFiniteError, ShapeError, Tensor, backward, finite_diff_check

from oracles import conv_loops


def test_add():
    assert T.elementwise("add", Tensor([1, 2]), Tensor([3, 4])).data.tolist() == [4, 6]


def test_relu():
    assert T.elementwise("relu", Tensor([-1, 0, 2])).data.tolist() == [0, 0, 2]


def test_sigmoid_symmetry_point():
    assert T.elementwise("sigmoid", Tensor([0.0])).data.tolist() == [0.5]


def test_scalar_broadcast_only():
    out = Tensor([1.0, 2.0]) * Tensor(3.0)
    assert out.data.tolist() == [3.0, 6.0]
    with pytest.raises(ShapeError):
        Tensor([1.0, 2.0]) + Tensor([1.0, 2.0, 3.0])
    with pytest.raises(ShapeError):
        Tensor(np.ones((2, 2))) + Tensor(np.ones(2))


def test_div_by_zero_and_sqrt_negative():
    with pytest.raises(ZeroDivisionError, match="div"):
        Tensor([1.0]) / Tensor([0.0])
    with pytest.raises(ValueError, match="sqrt"):
        T.sqrt(Tensor([-1.0]))


def test_nonfinite_is_an_error():
    with pytest.raises(NonFiniteError):
        T.exp(Tensor([100.0]))
    with pytest.raises(NonFiniteError):
        Tensor([np.nan])


def test_matmul_examples():
    m = Tensor([[1, 2], [3, 4]])
    assert T.matmul(Tensor(np.eye(2)), m).data.tolist() == [[1, 2], [3, 4]]
    assert T.matmul(Tensor([[1, 2]]), Tensor([[3], [4]])).data.tolist() == [[11]]
    rng = np.random.default_rng(0)
    assert not T.matmul(T.zeros((2, 3)), Tensor(rng.normal(size=(3, 2)))).data.any()
    with pytest.raises(ShapeError):
        T.matmul(T.zeros((2, 3)), T.zeros((2, 3)))


def test_conv_identity_kernel():
    rng = np.random.default_rng(1)
    x = Tensor(rng.normal(size=(5, 4, 3)))
    k = np.zeros((1, 1, 3, 3))
    k[0, 0] = np.eye(3)
    assert np.array_equal(T.conv2d(x, Tensor(k)).data, x.data)


def test_conv_ones_window_counts():
    out = T.conv2d(T.ones((5, 5, 1)), T.ones((3, 3, 1, 1))).data[..., 0]
    assert out[2, 2] == 9 and out[1, 3] == 9
    assert out[0, 0] == out[0, 4] == out[4, 0] == out[4, 4] == 4
    assert out[0, 2] == 6


def test_conv_zero_image():
    rng = np.random.default_rng(2)
    assert not T.conv2d(T.zeros((4, 4, 2)), Tensor(rng.normal(size=(3, 3, 2, 5)))).data.any()


def test_conv_even_kernel_rejected():
    with pytest.raises(ValueError, match="odd"):
        T.conv2d(T.zeros((4, 4, 1)), T.zeros((2, 2, 1, 1)))


def test_conv_matches_loops():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(6, 5, 2))
    k = rng.normal(size=(3, 3, 2, 4))
    b = rng.normal(size=4)
    got = T.conv2d(Tensor(x, dtype=np.float64), Tensor(k, dtype=np.float64), Tensor(b, dtype=np.float64))
    np.testing.assert_allclose(got.data, conv_loops(x, k, b), atol=1e-12)


def test_reduce():
    assert T.reduce("sum", Tensor([1, 2, 3])).item() == 6
    assert T.reduce("mean", Tensor([2, 4])).item() == 3
    assert T.reduce("sum", T.zeros((3, 4))).item() == 0
    assert T.reduce("sum", Tensor([1, 2])).ndim == 0


def test_backward_square():
    x = Tensor([1.0, -2.0, 3.0], requires_grad=True)
    (g,) = backward(T.tsum(x * x), [x])
    assert g.tolist() == [2.0, -4.0, 6.0]


def test_backward_linear_and_untouched():
    x = Tensor([0.3, 1.7], requires_grad=True)
    y = Tensor([5.0, 5.0], requires_grad=True)
    gx, gy = backward(T.tsum(x), [x, y])
    assert gx.tolist() == [1.0, 1.0]
    assert gy.tolist() == [0.0, 0.0]


def test_backward_needs_scalar():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with pytest.raises(ShapeError):
        backward(x * 2.0)


def test_relu_subgradient_at_zero():
    x = Tensor([0.0, 1.0, -1.0], requires_grad=True)
    (g,) = backward(T.tsum(T.relu(x)), [x])
    assert g.tolist() == [0.0, 1.0, 0.0]


def test_shared_subexpression_accumulates():
    x = Tensor([2.0], requires_grad=True)
    y = x * x
    (g,) = backward(T.tsum(y + y * x), [x])
    assert g.tolist() == [2 * 2 + 3 * 2 * 2]


def test_replay_is_deterministic():
    rng = np.random.default_rng(4)
    x = Tensor(rng.normal(size=(3, 3)), requires_grad=True)
    w = Tensor(rng.normal(size=(3, 2)), requires_grad=True)
    loss = T.tsum(T.sigmoid(T.matmul(x, w)))
    first = backward(loss, [x, w])
    second = backward(loss, [x, w])
    for a, b in zip(first, second):
        assert np.array_equal(a, b)


def test_record_is_topological():
    x = Tensor([1.0, 2.0], requires_grad=True)
    loss = T.tsum(T.exp(x) * x)
    order = T.record_of(loss)
    pos = {id(n): i for i, n in enumerate(order)}
    assert order[-1] is loss
    for node in order:
        for parent in node._parents:
            assert pos[id(parent)] < pos[id(node)]
    assert len(pos) == len(order)


def test_tracking_off_is_bit_identical():
    rng = np.random.default_rng(5)
    data = rng.normal(size=(4, 4, 2)).astype(np.float32)
    kernel = rng.normal(size=(3, 3, 2, 3)).astype(np.float32)

    def run(track):
        x = Tensor(data, requires_grad=track)
        k = Tensor(kernel, requires_grad=track)
        return T.sigmoid(T.conv2d(x, k)).data

    assert np.array_equal(run(True), run(False))


def test_finite_diff_constant_function():
    x = Tensor(np.ones((2, 3)))
    assert finite_diff_check(lambda v: T.tsum(v * 0.0) + 3.0, x, 1e-4) == 0.0


def test_finite_diff_eps_range():
    with pytest.raises(ValueError):
        finite_diff_check(lambda v: T.tsum(v), Tensor([1.0]), 0.1)


def test_finite_diff_sum_of_squares_float32():
    rng = np.random.default_rng(6)
    x = Tensor(rng.normal(size=(2, 3)))
    assert finite_diff_check(lambda v: T.tsum(T.square(v)), x, 1e-2) <= 1e-3


OPS = {
    "add": lambda a, b: a + b,
    "sub": lambda a, b: a - b,
    "mul": lambda a, b: a * b,
    "div": lambda a, b: a / (T.square(b) + 0.5),
    "square": lambda a, b: T.square(a),
    "sqrt": lambda a, b: T.sqrt(T.square(a) + 0.5),
    "exp": lambda a, b: T.exp(a),
    "sigmoid": lambda a, b: T.sigmoid(a),
    "relu": lambda a, b: T.relu(a),
    "matmul": lambda a, b: T.matmul(a, T.reshape(b, (4, 3))),
    "conv2d": lambda a, b: T.conv2d(T.reshape(a, (2, 2, 3)), T.reshape(b, (1, 1, 3, 4))),
    "mean": lambda a, b: T.mean(a) * a,
    "upsample": lambda a, b: T.upsample_nearest(T.reshape(a, (2, 2, 3))),
    "avg_pool": lambda a, b: T.avg_pool(T.reshape(b, (2, 2, 3)), 3),
    "slice_stack": lambda a, b: T.stack([a[1:], b[:-1]]),
    "concat": lambda a, b: T.concat([a, b[::2]]),
    "broadcast_to": lambda a, b: T.broadcast_to(a[0:1], (5, 4)),
    "clamp": lambda a, b: T.clamp(a, -0.5, 0.5),
}


@pytest.mark.parametrize("name", sorted(OPS))
@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_op_gradients_match_central_differences(name, seed):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(3, 4)) if name != "matmul" else rng.normal(size=(4, 4))
    b = rng.normal(size=(3, 4))
    if name in ("relu", "clamp"):
        # keep clear of the kinks so the difference quotient is well defined
        a = np.where(np.abs(a) < 0.05, 0.1, a)
        a = np.where(np.abs(np.abs(a) - 0.5) < 0.05, 0.3, a)
    if name in ("conv2d", "upsample"):
        a = a.reshape(-1)[:12]
    if name == "matmul":
        b = b.reshape(-1)[:12]
    if name == "conv2d":
        b = b.reshape(-1)[:12]
    proj = rng.normal(size=np.shape(OPS[name](Tensor(a, dtype=np.float64), Tensor(b, dtype=np.float64)).data))
    bt = Tensor(b, dtype=np.float64)

    def f_a(v):
        return T.tsum(OPS[name](v, bt) * proj)

    at = Tensor(a, dtype=np.float64)

    def f_b(v):
        return T.tsum(OPS[name](at, v) * proj)

    assert finite_diff_check(f_a, at, 1e-5) <= 1e-3
    assert finite_diff_check(f_b, bt, 1e-5) <= 1e-3


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, (3, 5), elements=st.floats(-10, 10)))
def test_sum_gradient_is_ones(x):
    t = Tensor(x, requires_grad=True, dtype=np.float64)
    (g,) = backward(T.tsum(t), [t])
    assert np.array_equal(g, np.ones_like(x))


def test_data_length_matches_shape():
    t = Tensor(np.zeros((2, 3, 4)))
    assert t.data.size == int(np.prod(t.shape))
    assert t.dtype == np.float32
