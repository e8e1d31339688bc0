import numpy as np
import pytest

from pegrad.errors import DomainError, IndexRangeError, ShapeError, TraceError
from pegrad.tensor_core import (
    RngState,
    add,
    col2im,
    concat,
    conv2d,
    conv2d_grad_weight,
    gather_rows,
    gaussian,
    global_avg_pool2d,
    im2col,
    log,
    matmul,
    mul,
    noise_stream,
    output_extent,
    pad_axis,
    permutation,
    pool2d,
    reduce_max,
    reduce_mean,
    reduce_sum,
    relu,
    reshape,
    scatter_add,
    shift_right,
    shuffle_stream,
    sigmoid,
    slice_axis,
    softmax_xent,
    sqrt,
    transpose,
    uniform,
)
from pegrad.tensor_core.conv import max_pool2d_grad_p
from pegrad.tensor_core.recurrent import lstm_scan


def naive_conv(x, w, stride, pad):
    n, c, h, width = x.shape
    d, _, k, _ = w.shape
    xp = np.pad(x, [(0, 0), (0, 0), (pad, pad), (pad, pad)])
    oh = (h + 2 * pad - k) // stride + 1
    ow = (width + 2 * pad - k) // stride + 1
    out = np.zeros((n, d, oh, ow))
    for i in range(oh):
        for j in range(ow):
            patch = xp[:, :, i * stride : i * stride + k, j * stride : j * stride + k]
            out[:, :, i, j] = np.einsum("nckl,dckl->nd", patch, w)
    return out


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(0)


def test_add_broadcasts():
    out = add(np.ones((2, 3)), np.arange(3.0))
    np.testing.assert_array_equal(out, [[1, 2, 3], [1, 2, 3]])


def test_add_rejects_incompatible_shapes():
    with pytest.raises(ShapeError):
        add(np.ones((2, 3)), np.ones((4,)))


def test_scalars_are_lifted_to_the_tensor_dtype():
    out = mul(np.ones(3, dtype=np.float32), 2.0)
    assert out.dtype == np.float32
    np.testing.assert_array_equal(out, [2, 2, 2])


def test_log_domain_error_carries_index():
    with pytest.raises(DomainError) as excinfo:
        log(np.array([[1.0, 2.0], [0.0, 3.0]]))
    assert excinfo.value.index == (1, 0)


def test_sqrt_rejects_negative():
    with pytest.raises(DomainError):
        sqrt(np.array([4.0, -1.0]))


def test_sigmoid_is_stable_for_large_inputs():
    out = sigmoid(np.array([-1000.0, 0.0, 1000.0]))
    np.testing.assert_allclose(out, [0.0, 0.5, 1.0])
    assert np.all(np.isfinite(out))


def test_relu():
    np.testing.assert_array_equal(relu(np.array([-1.0, 0.0, 2.0])), [0, 0, 2])


def test_ops_do_not_mutate_inputs(rng):
    x = rng.standard_normal((3, 4))
    before = x.copy()
    relu(x)
    sigmoid(x)
    transpose(x)
    assert np.array_equal(x, before)


def test_non_tensor_operand_is_a_trace_error():
    with pytest.raises(TraceError):
        add(np.ones(2), [1.0, 2.0])


def test_matmul_shape_check():
    with pytest.raises(ShapeError):
        matmul(np.ones((2, 3)), np.ones((4, 5)))


def test_reductions(rng):
    x = rng.standard_normal((2, 3, 4))
    np.testing.assert_allclose(reduce_sum(x, axes=(0, 2)), x.sum(axis=(0, 2)))
    np.testing.assert_allclose(reduce_mean(x, axes=1), x.mean(axis=1))
    np.testing.assert_allclose(reduce_max(x), x.max())
    with pytest.raises(ShapeError):
        reduce_sum(x, axes=3)


def test_reshape_infers_one_extent():
    assert reshape(np.arange(12.0), (3, -1)).shape == (3, 4)
    with pytest.raises(ShapeError):
        reshape(np.arange(12.0), (5, -1))


def test_transpose_is_contiguous(rng):
    x = rng.standard_normal((2, 3))
    out = transpose(x)
    assert out.flags["C_CONTIGUOUS"]
    np.testing.assert_array_equal(out, x.T)


def test_slice_pad_concat_and_shift():
    x = np.arange(6.0).reshape(2, 3)
    np.testing.assert_array_equal(slice_axis(x, 1, 1, 3), [[1, 2], [4, 5]])
    np.testing.assert_array_equal(pad_axis(np.ones((2, 1)), 1, 1, 3), [[0, 1, 0], [0, 1, 0]])
    np.testing.assert_array_equal(concat([x, x], axis=0), np.vstack([x, x]))
    np.testing.assert_array_equal(shift_right(x, 1), [[0, 0, 1], [0, 3, 4]])


def test_output_extent_requires_exact_tiling():
    assert output_extent(28, 8, 2, 3) == 14
    with pytest.raises(ShapeError):
        output_extent(13, 4, 2, 0)


@pytest.mark.parametrize("stride, pad", [(1, 0), (1, 1), (2, 3)])
def test_conv2d_matches_direct_loop(rng, stride, pad):
    k = 2 if stride == 1 else 8
    size = 6 if stride == 1 else 28
    x = rng.standard_normal((2, 3, size, size))
    w = rng.standard_normal((4, 3, k, k))
    np.testing.assert_allclose(conv2d(x, w, stride, pad), naive_conv(x, w, stride, pad), rtol=1e-10)


def test_conv2d_rejects_channel_mismatch(rng):
    with pytest.raises(ShapeError):
        conv2d(rng.standard_normal((1, 3, 4, 4)), rng.standard_normal((2, 2, 3, 3)))


def test_im2col_col2im_adjoint(rng):
    x = rng.standard_normal((2, 3, 5, 5))
    cols = im2col(x, 3, 3, 1, 1)
    assert cols.shape == (2, 25, 27)
    y = rng.standard_normal(cols.shape)
    # <im2col(x), y> == <x, col2im(y)>
    lhs = np.sum(cols * y)
    rhs = np.sum(x * col2im(y, x.shape, 3, 3, 1, 1))
    assert lhs == pytest.approx(rhs, rel=1e-12)


def test_conv2d_grad_weight_batched_matches_per_example(rng):
    x = rng.standard_normal((3, 2, 5, 5))
    g = rng.standard_normal((3, 4, 3, 3))
    per_example = conv2d_grad_weight(x, g, (3, 3), 1, 0, batch_dims=1)
    assert per_example.shape == (3, 4, 2, 3, 3)
    for b in range(3):
        single = conv2d_grad_weight(x[b : b + 1], g[b : b + 1], (3, 3), 1, 0)
        np.testing.assert_allclose(per_example[b], single, rtol=1e-10)


def test_pooling():
    x = np.arange(16.0).reshape(1, 1, 4, 4)
    np.testing.assert_array_equal(pool2d("max", x, 2, 2)[0, 0], [[5, 7], [13, 15]])
    np.testing.assert_array_equal(pool2d("avg", x, 2, 2)[0, 0], [[2.5, 4.5], [10.5, 12.5]])
    np.testing.assert_array_equal(global_avg_pool2d(x), [[7.5]])
    with pytest.raises(ValueError):
        pool2d("min", x, 2, 2)


def test_max_pool_grad_routes_to_argmax():
    x = np.arange(16.0).reshape(1, 1, 4, 4)
    g = np.ones((1, 1, 2, 2))
    dx = max_pool2d_grad_p(x, g, k=2, stride=2, input_hw=(4, 4))
    expected = np.zeros((4, 4))
    expected[[1, 1, 3, 3], [1, 3, 1, 3]] = 1
    np.testing.assert_array_equal(dx[0, 0], expected)


def test_gather_and_scatter(rng):
    table = rng.standard_normal((5, 3))
    ids = np.array([[0, 4], [4, 4]])
    rows = gather_rows(table, ids)
    np.testing.assert_array_equal(rows[1, 0], table[4])
    acc = scatter_add(np.ones((2, 2, 3)), ids, 5)
    np.testing.assert_array_equal(acc[:, 0], [1, 0, 0, 0, 3])
    per_example = scatter_add(np.ones((2, 2, 3)), ids, 5, batch_dims=1)
    np.testing.assert_array_equal(per_example[:, :, 0], [[1, 0, 0, 0, 1], [0, 0, 0, 0, 2]])


def test_gather_out_of_range_reports_position():
    with pytest.raises(IndexRangeError) as excinfo:
        gather_rows(np.zeros((3, 2)), np.array([[0, 1], [3, 0]]))
    assert excinfo.value.position == (1, 0)


def test_uniform_logits_give_log_k():
    losses = softmax_xent(np.zeros((4, 5)), np.array([0, 1, 2, 4]))
    np.testing.assert_allclose(losses, np.log(5))


def test_confident_logits_give_vanishing_loss():
    logits = np.array([[20.0, 0.0, 0.0]])
    assert softmax_xent(logits, np.array([0]))[0] < 1e-8


def test_softmax_xent_matches_high_precision_oracle(rng):
    logits = rng.standard_normal((6, 3))
    labels = rng.integers(0, 3, size=6)
    expected = [np.log(np.sum(np.exp(row))) - row[y] for row, y in zip(logits.astype(np.longdouble), labels)]
    np.testing.assert_allclose(softmax_xent(logits, labels), np.array(expected, dtype=np.float64), rtol=1e-14)


def test_binary_xent_with_one_logit():
    z = np.array([[0.3], [-1.2]])
    y = np.array([1, 0])
    expected = [np.log1p(np.exp(-0.3)), np.log1p(np.exp(-1.2))]
    np.testing.assert_allclose(softmax_xent(z, y), expected, rtol=1e-12)


def test_xent_label_out_of_range():
    with pytest.raises(IndexRangeError):
        softmax_xent(np.zeros((2, 3)), np.array([0, 3]))


def test_lstm_scan_zero_weights_give_zero_state():
    out = lstm_scan(np.zeros((2, 4, 8)), np.zeros((2, 8)))
    np.testing.assert_array_equal(out, np.zeros((2, 4, 2)))


def test_rng_is_reproducible_and_forkable():
    a = uniform((5,), RngState(3))
    b = uniform((5,), RngState(3))
    np.testing.assert_array_equal(a, b)
    assert np.all((a > 0) & (a <= 1))
    state = RngState(3)
    first = gaussian((4,), state.fork(1))
    assert not np.array_equal(first, gaussian((4,), state.fork(2)))
    np.testing.assert_array_equal(first, gaussian((4,), RngState(3).fork(1)))


def test_rng_counter_advances():
    state = RngState(0)
    first = uniform((3,), state)
    second = uniform((3,), state)
    assert state.counter == 6
    assert not np.array_equal(first, second)


def test_gaussian_moments():
    samples = gaussian((200_000,), RngState(11))
    assert abs(samples.mean()) < 0.01
    assert samples.var() == pytest.approx(1.0, rel=0.02)


def test_noise_stream_ids_are_distinct():
    ids = {noise_stream(step, i, 4) for step in range(3) for i in range(4)}
    assert len(ids) == 12


def test_shuffle_streams_do_not_meet_noise_streams():
    shuffles = {shuffle_stream(epoch) for epoch in range(100)}
    noise = {noise_stream(step, i, 4) for step in range(1000) for i in range(4)}
    assert len(shuffles) == 100
    assert not shuffles & noise


def test_permutation_is_replayable():
    order = permutation(50, RngState(3).fork(shuffle_stream(0)))
    assert sorted(order.tolist()) == list(range(50))
    assert np.array_equal(order, permutation(50, RngState(3).fork(shuffle_stream(0))))
    assert not np.array_equal(order, permutation(50, RngState(3).fork(shuffle_stream(1))))
    assert not np.array_equal(order, permutation(50, RngState(4).fork(shuffle_stream(0))))
