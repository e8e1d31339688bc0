import logging

import numpy as np
import pytest

from pegrad.autodiff import check_gradients, evaluate, grad, grad_name, numerical_gradient, record, vjp_rule
from pegrad.errors import ContractError, TraceError, UnsupportedOpError
from pegrad.models import build
from pegrad.tensor_core import (
    add,
    batch_matmul,
    concat,
    conv2d,
    div,
    exp,
    gather_rows,
    log,
    lstm_scan,
    matmul,
    maximum,
    mul,
    pad_axis,
    pool2d,
    reduce_max,
    reduce_mean,
    reduce_sum,
    relu,
    reshape,
    shift_right,
    sigmoid,
    slice_axis,
    softmax_xent,
    sqrt,
    square,
    sub,
    tanh,
    transpose,
)
from pegrad.tensor_core.rng import RngState


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(42)


def weighted_sum(f):
    """Loss program ``sum(f(a) * c)`` with a fixed random weighting ``c``."""

    def program(p, i):
        return reduce_sum(mul(f(p["a"]), i["c"]))

    return program


def gradcheck(program, params, inputs, **kwargs):
    tape = record(program, params, inputs)
    results = check_gradients(tape, inputs, params, num_coords=12, **kwargs)
    assert results
    for result in results:
        assert result.passed, f"{result.param}: max abs error {result.max_abs_error:.3e}"


def test_quadratic_gradient_is_exact(rng):
    x = rng.standard_normal((4, 3))
    t = rng.standard_normal((4, 2))
    w = rng.standard_normal((3, 2))
    tape = record(
        lambda p, i: reduce_sum(square(sub(matmul(i["x"], p["w"]), i["t"]))),
        {"w": w},
        {"x": x, "t": t},
    )
    out = evaluate(grad(tape), {"x": x, "t": t}, {"w": w})
    np.testing.assert_allclose(out[grad_name("w")], 2 * x.T @ (x @ w - t), rtol=1e-12)
    assert out["loss"] == pytest.approx(np.sum((x @ w - t) ** 2))


@pytest.mark.parametrize("op", [exp, log, tanh, sigmoid, sqrt, relu, square], ids=lambda f: f.name)
def test_unary_vjps(rng, op):
    a = rng.uniform(0.5, 2.0, size=(3, 4))
    gradcheck(weighted_sum(op), {"a": a}, {"c": rng.standard_normal((3, 4))})


@pytest.mark.parametrize("op", [add, sub, mul, div, maximum], ids=lambda f: f.name)
def test_binary_vjps_with_broadcasting(rng, op):
    params = {"a": rng.uniform(0.5, 2.0, size=(3, 4)), "b": rng.uniform(0.5, 2.0, size=(4,))}

    def program(p, i):
        return reduce_sum(mul(op(p["a"], p["b"]), i["c"]))

    gradcheck(program, params, {"c": rng.standard_normal((3, 4))})


def test_binary_vjp_reduces_broadcast_axes(rng):
    a = rng.standard_normal((3, 4))
    b = rng.standard_normal((1, 4))
    tape = record(lambda p, i: reduce_sum(add(p["a"], p["b"])), {"a": a, "b": b}, {})
    out = evaluate(grad(tape), {}, {"a": a, "b": b})
    np.testing.assert_array_equal(out[grad_name("b")], np.full((1, 4), 3.0))


def test_shape_op_vjps(rng):
    def program(p, i):
        a = p["a"]
        parts = [
            reshape(transpose(a), (2, 12)),
            reshape(slice_axis(a, 1, 1, 3), (2, 4)),
            reshape(pad_axis(a, 0, 1, 6), (6, 6)),
            reshape(shift_right(a, 0), (3, 8)),
        ]
        total = reduce_sum(mul(concat([reshape(q, (1, -1)) for q in parts], axis=1), i["c"]))
        return add(total, add(reduce_sum(reduce_max(a, axes=1)), reduce_mean(a)))

    a = rng.standard_normal((4, 6))
    gradcheck(program, {"a": a}, {"c": rng.standard_normal((1, 24 + 8 + 36 + 24))})


def test_matmul_vjps(rng):
    def program(p, i):
        return reduce_sum(mul(batch_matmul(p["a"], p["b"]), i["c"]))

    params = {"a": rng.standard_normal((2, 3, 4)), "b": rng.standard_normal((2, 4, 5))}
    gradcheck(program, params, {"c": rng.standard_normal((2, 3, 5))})


@pytest.mark.parametrize("stride, pad", [(1, 1), (2, 0)])
def test_conv2d_vjp(rng, stride, pad):
    def program(p, i):
        return reduce_sum(mul(conv2d(p["x"], p["w"], stride, pad), i["c"]))

    params = {"x": rng.standard_normal((2, 3, 6, 6)), "w": rng.standard_normal((4, 3, 2, 2))}
    out_hw = (6 + 2 * pad - 2) // stride + 1
    gradcheck(program, params, {"c": rng.standard_normal((2, 4, out_hw, out_hw))})


@pytest.mark.parametrize("kind", ["max", "avg"])
def test_pool_vjp(rng, kind):
    def program(p, i):
        return reduce_sum(mul(pool2d(kind, p["x"], 2, 1), i["c"]))

    gradcheck(program, {"x": rng.standard_normal((1, 2, 4, 4))}, {"c": rng.standard_normal((1, 2, 3, 3))})


def test_gather_rows_vjp_accumulates_repeated_ids(rng):
    table = rng.standard_normal((5, 3))
    ids = np.array([[1, 1], [4, 1]])
    tape = record(lambda p, i: reduce_sum(gather_rows(p["E"], i["ids"])), {"E": table}, {"ids": ids})
    out = evaluate(grad(tape), {"ids": ids}, {"E": table})
    expected = np.zeros((5, 3))
    expected[1] = 3
    expected[4] = 1
    np.testing.assert_array_equal(out[grad_name("E")], expected)


def test_softmax_xent_vjp(rng):
    def program(p, i):
        return reduce_sum(softmax_xent(p["z"], i["y"]))

    gradcheck(program, {"z": rng.standard_normal((4, 3))}, {"y": np.array([0, 2, 1, 2])})


def test_lstm_scan_vjp(rng):
    def program(p, i):
        return reduce_sum(mul(lstm_scan(p["xp"], p["u"]), i["c"]))

    params = {"xp": rng.standard_normal((2, 3, 8)), "u": 0.5 * rng.standard_normal((2, 8))}
    gradcheck(program, params, {"c": rng.standard_normal((2, 3, 2))})


@pytest.mark.parametrize("unroll", [False, True])
def test_lstm_model_gradients_over_three_steps(unroll):
    model = build("lstm", RngState(5), seq_len=3, unroll=unroll)
    x = np.array([[3, 17, 9999], [0, 5, 5]])
    y = np.array([1, 0])
    results = check_gradients(model.loss_tape(2), {"x": x, "y": y}, model.params, num_coords=6)
    assert all(r.passed for r in results), [(r.param, r.max_abs_error) for r in results]


def test_unused_parameter_gets_zero_gradient(caplog, rng):
    params = {"used": rng.standard_normal(3), "unused": rng.standard_normal((2, 2))}
    tape = record(lambda p, i: reduce_sum(square(p["used"])), params, {})
    with caplog.at_level(logging.WARNING):
        backward = grad(tape)
    out = evaluate(backward, {}, params)
    np.testing.assert_array_equal(out[grad_name("unused")], np.zeros((2, 2)))
    np.testing.assert_allclose(out[grad_name("used")], 2 * params["used"])
    assert "unused" in caplog.text


def test_grad_needs_a_scalar_loss(rng):
    vector = record(lambda p, i: mul(p["a"], 2.0), {"a": rng.standard_normal(3)}, {})
    assert "output" in vector.outputs
    with pytest.raises(ContractError):
        grad(vector)
    named = record(lambda p, i: {"loss": mul(p["a"], 2.0)}, {"a": rng.standard_normal(3)}, {})
    with pytest.raises(ContractError):
        grad(named)


def test_grad_rejects_unknown_parameters(rng):
    tape = record(lambda p, i: reduce_sum(p["a"]), {"a": rng.standard_normal(3)}, {})
    with pytest.raises(ValueError):
        grad(tape, wrt=["b"])


def test_wrt_restricts_outputs(rng):
    params = {"a": rng.standard_normal(3), "b": rng.standard_normal(3)}
    tape = record(lambda p, i: reduce_sum(mul(p["a"], p["b"])), params, {})
    out = evaluate(grad(tape, wrt=["b"]), {}, params)
    assert grad_name("a") not in out
    np.testing.assert_allclose(out[grad_name("b")], params["a"])


def test_grad_does_not_modify_the_forward_tape(rng):
    tape = record(lambda p, i: reduce_sum(square(p["a"])), {"a": rng.standard_normal(3)}, {})
    before = len(tape)
    backward = grad(tape)
    assert len(tape) == before
    assert len(backward) > before
    assert set(tape.outputs) == {"loss"}


def test_taps_expose_activation_and_output_cotangent():
    model = build("fcnn")
    x = np.random.default_rng(0).standard_normal((3, 104))
    y = np.array([1, 2, 3])
    out = evaluate(grad(model.loss_tape(3, taps=True), taps=True), {"x": x, "y": y}, model.params)
    np.testing.assert_array_equal(out["act:fc1"], x)
    # dense weight gradient is the sum over the batch of activation outer cotangent
    np.testing.assert_allclose(out["act:fc1"].T @ out["cot:fc1"], out[grad_name("fc1.W")], rtol=1e-12)
    np.testing.assert_allclose(out["cot:fc2"].sum(axis=0), out[grad_name("fc2.b")], rtol=1e-12)


def test_branching_on_traced_values_is_a_trace_error(rng):
    def program(p, i):
        if p["a"]:
            return reduce_sum(p["a"])
        return reduce_sum(p["a"])

    with pytest.raises(TraceError):
        record(program, {"a": rng.standard_normal(3)}, {})


def test_returning_an_array_is_a_trace_error():
    with pytest.raises(TraceError):
        record(lambda p, i: np.ones(3), {"a": np.ones(3)}, {})


def test_unknown_vjp_kind():
    with pytest.raises(UnsupportedOpError):
        vjp_rule("no_such_op")


def test_numerical_gradient_of_a_square():
    tape = record(lambda p, i: reduce_sum(square(p["a"])), {"a": np.array([1.5, -2.0])}, {})
    assert numerical_gradient(tape, {}, {"a": np.array([1.5, -2.0])}, "a", (1,)) == pytest.approx(-4.0)


def test_gradcheck_refuses_single_precision():
    tape = record(lambda p, i: reduce_sum(square(p["a"])), {"a": np.ones(3)}, {}, dtype=np.float32)
    with pytest.raises(ContractError):
        check_gradients(tape, {}, {"a": np.ones(3, dtype=np.float32)})
