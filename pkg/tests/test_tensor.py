import numpy as np
import pytest

from preview_restore.errors import NonFiniteError, OptimizerStateError, ShapeError
from preview_restore.tensor import (
    SGD,
    AdamW,
    OptimizerConfig,
    Rng,
    Tensor,
    concat,
    conv2d,
    layer_norm,
    no_grad,
    precision,
    scaled_dot_product_attention,
    silu,
    softmax,
    split,
    take,
    transpose,
    upsample2x,
)

TOLERANCE = 1e-4


def leaf(stream, shape):
    return Tensor(stream.normal(size=shape), requires_grad=True)


@pytest.fixture
def stream():
    return np.random.default_rng(0)


def test_elementwise_and_reduction_gradients(gradcheck, stream):
    with precision(np.float64):
        a, b = leaf(stream, (3, 4)), leaf(stream, (4,))
        error = gradcheck(lambda: (silu(a * b + a) - b).mean(), [a, b])
    assert error < TOLERANCE


def test_matmul_softmax_layer_norm_gradients(gradcheck, stream):
    with precision(np.float64):
        a, b, w = leaf(stream, (2, 3, 5)), leaf(stream, (5, 4)), leaf(stream, (2, 3, 4))
        error = gradcheck(lambda: (softmax(layer_norm(a @ b), axis=-1) * w).sum(), [a, b, w])
    assert error < TOLERANCE


def test_attention_gradients(gradcheck, stream):
    with precision(np.float64):
        q, k, v = leaf(stream, (2, 3, 4)), leaf(stream, (2, 5, 4)), leaf(stream, (2, 5, 4))
        weights = Tensor(stream.normal(size=(2, 3, 4)))
        error = gradcheck(lambda: (scaled_dot_product_attention(q, k, v) * weights).sum(), [q, k, v])
    assert error < TOLERANCE


@pytest.mark.parametrize("stride", [1, 2])
def test_conv2d_gradients(gradcheck, stream, stride):
    with precision(np.float64):
        x, w, b = leaf(stream, (2, 3, 6, 6)), leaf(stream, (4, 3, 3, 3)), leaf(stream, (4,))
        weights = Tensor(stream.normal(size=(2, 4, 6 // stride, 6 // stride)))
        error = gradcheck(lambda: (conv2d(x, w, b, stride=stride) * weights).sum(), [x, w, b], max_entries=20)
    assert error < TOLERANCE


def test_shape_primitive_gradients(gradcheck, stream):
    with precision(np.float64):
        x, y, table = leaf(stream, (1, 2, 3, 3)), leaf(stream, (1, 2, 3, 3)), leaf(stream, (5, 4))
        weights = Tensor(stream.normal(size=(1, 4, 6, 6)))

        def loss():
            joint = concat([x, y], axis=1)
            left, right = split(transpose(joint, (0, 1, 3, 2)), 2, axis=1)
            spatial = (upsample2x(concat([right, left], axis=1)) * weights).sum()
            return spatial + (take(table, [0, 3, 3]) * take(table, [1, 1, 4])).sum()

        error = gradcheck(loss, [x, y, table])
    assert error < TOLERANCE


def test_conv2d_matches_reflect_padded_correlation():
    x = np.arange(16, dtype=np.float64).reshape(1, 1, 4, 4)
    kernel = np.zeros((1, 1, 3, 3))
    kernel[0, 0, 1, 2] = 1.0  # picks the right neighbour
    with precision(np.float64):
        out = conv2d(Tensor(x), Tensor(kernel)).data[0, 0]
    padded = np.pad(x[0, 0], 1, mode="reflect")
    np.testing.assert_array_equal(out, padded[1:-1, 2:])


def test_non_finite_results_raise():
    with pytest.raises(NonFiniteError):
        Tensor([1.0, np.inf]) * 2.0


def test_shape_mismatches_raise():
    with pytest.raises(ShapeError):
        Tensor(np.ones((2, 3))) @ Tensor(np.ones((2, 3)))
    with pytest.raises(ShapeError):
        Tensor(np.ones((2, 3))) + Tensor(np.ones((4,)))
    with pytest.raises(ShapeError):
        Tensor(np.ones((2, 2)), requires_grad=True).backward()


def test_no_grad_records_nothing():
    a = Tensor([1.0, 2.0], requires_grad=True)
    with no_grad():
        out = (a * a).sum()
    assert not out.requires_grad
    out.backward()
    assert a.grad is None


def test_detach_cuts_the_graph():
    a = Tensor([3.0], requires_grad=True)
    loss = (a * a.detach()).sum()
    loss.backward()
    np.testing.assert_allclose(a.grad, [3.0])


def test_rng_streams_are_reproducible_and_independent():
    first, second = Rng(7).fork("data").normal((4,)), Rng(7).fork("data").normal((4,))
    np.testing.assert_array_equal(first, second)
    assert not np.array_equal(Rng(7).fork("data").normal((4,)), Rng(7).fork("init").normal((4,)))
    parent = Rng(7)
    parent.normal((100,))
    np.testing.assert_array_equal(parent.fork(3).normal((4,)), Rng(7).fork(3).normal((4,)))


def test_adamw_first_step_moves_by_learning_rate():
    param = Tensor(np.array([1.0, -1.0], dtype=np.float32), requires_grad=True)
    optimizer = AdamW([param], OptimizerConfig(lr=0.1))
    (param * Tensor([2.0, -3.0])).sum().backward()
    optimizer.step()
    np.testing.assert_allclose(param.data, [0.9, -0.9], atol=1e-6)


def test_sgd_step_and_weight_decay():
    param = Tensor(np.array([2.0], dtype=np.float32), requires_grad=True)
    optimizer = SGD([param], OptimizerConfig(lr=0.5, weight_decay=0.1))
    (param * 1.0).sum().backward()
    optimizer.step()
    np.testing.assert_allclose(param.data, [2.0 - 0.5 * (1.0 + 0.2)], atol=1e-6)


def test_optimizer_state_round_trip_continues_identically():
    def run(steps, state=None):
        param = Tensor(np.array([0.5, -0.25], dtype=np.float32), requires_grad=True)
        optimizer = AdamW([param], OptimizerConfig(lr=0.01))
        if state is not None:
            param.data = state[0].copy()
            optimizer.load_state_dict(state[1])
        for _ in range(steps):
            optimizer.zero_grad()
            (param * param).sum().backward()
            optimizer.step()
        return param.data.copy(), optimizer.state_dict()

    straight, _ = run(4)
    half = run(2)
    resumed, _ = run(2, half)
    np.testing.assert_array_equal(straight, resumed)


def test_optimizer_missing_state_raises():
    optimizer = AdamW([Tensor(np.zeros(2), requires_grad=True)], OptimizerConfig())
    with pytest.raises(OptimizerStateError):
        optimizer.load_state_dict({"0/step": np.array(1.0)})
