import numpy as np
import pytest

from pegrad.autodiff import grad, record
from pegrad.errors import ShapeError, UnsupportedOpError
from pegrad.models import build
from pegrad.strategies import NaiveLoop
from pegrad.tensor_core import add, matmul, mul, reduce_max, reduce_sum, square, tanh, transpose
from pegrad.tensor_core.rng import RngState
from pegrad.vmap import batch_tape, batched_per_example_grads, batching_rule, registered_batching_rules, vmap


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(3)


def per_example_data(model, batch_size, seed=0):
    rng = np.random.default_rng(seed)
    if model.token_input:
        x = rng.integers(0, 10_004, size=(batch_size,) + model.example_shape)
    else:
        x = rng.standard_normal((batch_size,) + model.example_shape)
    return x, rng.integers(0, model.num_classes, size=batch_size)


def test_square_sum_per_example():
    f = vmap(lambda p, i: reduce_sum(square(i["x"])), {"x": 0})
    out = f({}, {"x": np.array([[1.0, 2.0], [3.0, 4.0], [0.0, 0.5]])})
    np.testing.assert_array_equal(out, [5.0, 25.0, 0.25])


def test_unbatched_parameters_are_shared(rng):
    def layer(p, i):
        return tanh(add(matmul(i["x"], p["W"]), p["b"]))

    params = {"W": rng.standard_normal((4, 3)), "b": rng.standard_normal(3)}
    x = rng.standard_normal((5, 2, 4))
    out = vmap(layer, {"x": 0})(params, {"x": x})
    expected = np.stack([np.tanh(x[i] @ params["W"] + params["b"]) for i in range(5)])
    np.testing.assert_allclose(out, expected, rtol=1e-12)


def test_batched_parameter_with_unbatched_input(rng):
    def program(p, i):
        return reduce_sum(matmul(i["a"], p["w"]))

    a = rng.standard_normal((2, 3))
    w = rng.standard_normal((4, 3, 5))
    out = vmap(program, {"w": 0})({"w": w}, {"a": a})
    np.testing.assert_allclose(out, [np.sum(a @ w[i]) for i in range(4)], rtol=1e-12)


def test_dict_outputs_keep_their_names(rng):
    def program(p, i):
        return {"t": transpose(i["x"]), "m": reduce_max(i["x"], axes=0)}

    x = rng.standard_normal((3, 2, 4))
    out = vmap(program, {"x": 0})({}, {"x": x})
    np.testing.assert_array_equal(out["t"], np.transpose(x, (0, 2, 1)))
    np.testing.assert_array_equal(out["m"], x.max(axis=1))


def test_unbatched_outputs_are_broadcast(rng):
    def program(p, i):
        return {"scaled": mul(i["x"], 2.0), "const": square(p["c"])}

    out = vmap(program, {"x": 0})({"c": np.array([3.0])}, {"x": rng.standard_normal((4, 2))})
    np.testing.assert_array_equal(out["const"], np.full((4, 1), 9.0))


def test_inconsistent_batch_sizes():
    f = vmap(lambda p, i: add(i["a"], i["b"]), {"a": 0, "b": 0})
    with pytest.raises(ShapeError):
        f({}, {"a": np.ones((3, 2)), "b": np.ones((4, 2))})


def test_vmap_needs_a_batched_input():
    with pytest.raises(ShapeError):
        vmap(lambda p, i: square(i["x"]), {"x": None})({}, {"x": np.ones(2)})


def test_only_leading_axis_batching():
    with pytest.raises(ValueError):
        vmap(lambda p, i: square(i["x"]), {"x": 1})


def test_batch_tape_rejects_unknown_leaves():
    tape = record(lambda p, i: reduce_sum(i["x"]), {}, {"x": np.ones(2)})
    with pytest.raises(ValueError):
        batch_tape(tape, {"z": 0}, 4)
    with pytest.raises(ShapeError):
        batch_tape(tape, {"x": 0}, 0)


@pytest.mark.parametrize("kind", ["fcnn", "mnist_cnn"])
def test_tape_size_does_not_depend_on_batch_size(kind):
    per_example = grad(build(kind).example_loss_tape())
    sizes = {len(batch_tape(per_example, {"x": 0, "y": 0}, b)) for b in (1, 4, 32)}
    assert len(sizes) == 1


@pytest.mark.parametrize("kind", ["logreg", "fcnn", "mnist_cnn", "embed", "lstm"])
def test_batched_gradients_match_the_per_example_loop(kind):
    model = build(kind, RngState(2), seq_len=4)
    x, y = per_example_data(model, 3)
    expected = NaiveLoop("eager").per_example_grads(model, model.params, x, y)
    actual = batched_per_example_grads(model, model.params, x, y)
    assert set(actual.grads) == set(expected.grads)
    for name, g in expected.grads.items():
        assert actual.grads[name].shape == g.shape
        np.testing.assert_allclose(actual.grads[name], g, rtol=1e-8, atol=1e-12)


def test_every_differentiable_op_has_a_batching_rule():
    kinds = set(registered_batching_rules())
    assert {"matmul", "conv2d", "gather_rows", "lstm_scan", "softmax_xent", "max_pool2d"} <= kinds


def test_unknown_batching_rule():
    with pytest.raises(UnsupportedOpError):
        batching_rule("no_such_op")
