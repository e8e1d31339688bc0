import numpy as np
import pytest

from pegrad.errors import ContractError, UnsupportedArchitectureError
from pegrad.models import Dense, Model, build
from pegrad.strategies import (
    DenseNorms,
    NaiveLoop,
    conv_weight_grads,
    dense_grads,
    get_strategy,
    grouped_conv_weight_grads,
)
from pegrad.strategies.programs import Engine, batch_grad_tape
from pegrad.tensor_core.rng import RngState

SUPPORT = {
    "vmap": {"logreg", "fcnn", "mnist_cnn", "cifar_cnn", "embed", "lstm"},
    "outer": {"logreg", "fcnn"},
    "norms": {"logreg", "fcnn"},
    "groupconv": {"logreg", "fcnn", "mnist_cnn", "cifar_cnn"},
    "jacmm": {"logreg", "fcnn", "mnist_cnn", "cifar_cnn", "embed"},
}
FAST_MODELS = ["logreg", "fcnn", "mnist_cnn", "embed", "lstm"]


def batch(model, batch_size, seed=0):
    rng = np.random.default_rng(seed)
    if model.token_input:
        x = rng.integers(0, 10_004, size=(batch_size,) + model.example_shape)
    else:
        x = rng.standard_normal((batch_size,) + model.example_shape)
    return x, rng.integers(0, model.num_classes, size=batch_size)


def relative_error(actual, expected):
    return np.max(np.abs(actual - expected)) / max(np.max(np.abs(expected)), 1e-300)


@pytest.fixture(scope="module")
def models():
    return {kind: build(kind, RngState(1), seq_len=8) for kind in FAST_MODELS}


@pytest.mark.parametrize("strategy_name", list(SUPPORT))
@pytest.mark.parametrize("kind", FAST_MODELS)
@pytest.mark.parametrize("batch_size", [1, 2, 4])
def test_strategies_match_the_per_example_loop(models, strategy_name, kind, batch_size):
    if kind not in SUPPORT[strategy_name]:
        pytest.skip(f"{strategy_name} does not support {kind}")
    model = models[kind]
    x, y = batch(model, batch_size, seed=batch_size)
    expected = NaiveLoop("eager").per_example_grads(model, model.params, x, y)
    actual = get_strategy(strategy_name).per_example_grads(model, model.params, x, y)
    assert actual.batch_size == batch_size
    if actual.norms_only:
        assert relative_error(actual.norms(), expected.norms()) <= 1e-8
        return
    assert set(actual.grads) == set(expected.grads)
    for name, g in expected.grads.items():
        assert actual.grads[name].shape == g.shape
        assert relative_error(actual.grads[name], g) <= 1e-8, name


@pytest.mark.slow
@pytest.mark.parametrize("strategy_name", ["vmap", "groupconv", "jacmm"])
def test_cifar_strategies_match_the_per_example_loop(strategy_name):
    model = build("cifar_cnn", RngState(1))
    x, y = batch(model, 2)
    expected = NaiveLoop("eager").per_example_grads(model, model.params, x, y)
    actual = get_strategy(strategy_name).per_example_grads(model, model.params, x, y)
    for name, g in expected.grads.items():
        assert relative_error(actual.grads[name], g) <= 1e-8, name


@pytest.mark.parametrize("strategy_name", ["naive", "vmap", "outer", "groupconv", "jacmm"])
def test_per_example_gradients_sum_to_the_batch_gradient(models, strategy_name):
    model = models["fcnn"]
    x, y = batch(model, 6)
    per_example = get_strategy(strategy_name).per_example_grads(model, model.params, x, y)
    engine = Engine("eager")
    full = engine.run("batch", lambda: batch_grad_tape(model, 6), {"x": x, "y": y}, model.params)
    for name, g in per_example.sum().items():
        np.testing.assert_allclose(g, full[f"grad:{name}"], rtol=1e-10, atol=1e-12)


@pytest.mark.parametrize(
    "strategy_name, kind, layer_kind",
    [
        ("outer", "mnist_cnn", "conv2d"),
        ("norms", "embed", "embedding"),
        ("groupconv", "embed", "embedding"),
        ("groupconv", "lstm", "embedding"),
        ("jacmm", "lstm", "lstm"),
    ],
)
def test_unsupported_architectures(models, strategy_name, kind, layer_kind):
    model = models[kind]
    strategy = get_strategy(strategy_name)
    assert not strategy.supports(model)
    x, y = batch(model, 2)
    with pytest.raises(UnsupportedArchitectureError) as excinfo:
        strategy.per_example_grads(model, model.params, x, y)
    assert excinfo.value.reason == "unsupported layer"
    assert excinfo.value.layer_kind == layer_kind


@pytest.mark.parametrize("strategy_name", list(SUPPORT))
def test_support_matrix(models, strategy_name):
    supported = {kind for kind, model in models.items() if get_strategy(strategy_name).supports(model)}
    assert supported == SUPPORT[strategy_name] & set(FAST_MODELS)


def test_dense_outer_product():
    layer = Dense("fc", 2, 2)
    grads = dense_grads(layer, np.array([[3.0, 4.0]]), np.array([[1.0, 2.0]]))
    np.testing.assert_array_equal(grads["fc.W"][0], [[3.0, 6.0], [4.0, 8.0]])
    np.testing.assert_array_equal(grads["fc.b"][0], [1.0, 2.0])
    assert np.sum(grads["fc.W"] ** 2) == 125.0


def test_dense_norms_without_gradients():
    model = Model("toy", [Dense("fc", 2, 2)], (2,), 2)
    taps = {"fc": (np.array([[3.0, 4.0], [0.0, 0.0]]), np.array([[1.0, 2.0], [1.0, 0.0]]))}
    grads = DenseNorms().assemble(model, taps)
    assert grads.norms_only
    # weight block 25 * 5 plus bias block 5, and a bias-only second example
    np.testing.assert_allclose(grads.norms() ** 2, [130.0, 1.0])
    with pytest.raises(ContractError):
        grads.sum()


def test_weighted_gradient_matches_weighted_sum(models):
    model = models["fcnn"]
    x, y = batch(model, 4)
    weights = np.array([1.0, 0.5, 0.0, 2.0])
    expected = NaiveLoop("eager").per_example_grads(model, model.params, x, y)
    actual = DenseNorms().weighted_gradient(model, model.params, x, y, weights)
    for name, g in expected.grads.items():
        np.testing.assert_allclose(actual[name], np.einsum("b,b...->...", weights, g), rtol=1e-10, atol=1e-12)


def test_grouped_conv_with_one_by_one_kernel():
    rng = np.random.default_rng(5)
    act = rng.standard_normal((3, 4, 5, 5))
    cot = rng.standard_normal((3, 2, 5, 5))
    grads = grouped_conv_weight_grads(act, cot, (1, 1), 1, 0)
    expected = np.einsum("bchw,bdhw->bdc", act, cot)
    np.testing.assert_allclose(grads[..., 0, 0], expected, rtol=1e-12)


@pytest.mark.parametrize("kernel, stride, pad, size", [(3, 1, 1, 6), (8, 2, 3, 28), (4, 2, 0, 12)])
def test_grouped_conv_agrees_with_patch_products(kernel, stride, pad, size):
    rng = np.random.default_rng(kernel)
    act = rng.standard_normal((2, 3, size, size))
    out = (size + 2 * pad - kernel) // stride + 1
    cot = rng.standard_normal((2, 4, out, out))
    np.testing.assert_allclose(
        grouped_conv_weight_grads(act, cot, (kernel, kernel), stride, pad),
        conv_weight_grads(act, cot, kernel, stride, pad),
        rtol=1e-10,
    )


def test_empty_and_mismatched_batches(models):
    model = models["fcnn"]
    strategy = get_strategy("vmap")
    with pytest.raises(ContractError):
        strategy.per_example_grads(model, model.params, np.zeros((0, 104)), np.zeros(0, dtype=np.int64))
    with pytest.raises(ContractError):
        strategy.per_example_grads(model, model.params, np.zeros((2, 104)), np.zeros(3, dtype=np.int64))


def test_unknown_strategy_and_mode():
    with pytest.raises(ValueError):
        get_strategy("ghost")
    with pytest.raises(ValueError):
        get_strategy("vmap", mode="lazy")


@pytest.mark.parametrize("strategy_name", ["vmap", "jacmm"])
def test_eager_and_graph_modes_agree_exactly(models, strategy_name):
    model = models["mnist_cnn"]
    x, y = batch(model, 3)
    eager = get_strategy(strategy_name, "eager").per_example_grads(model, model.params, x, y)
    graph = get_strategy(strategy_name, "graph").per_example_grads(model, model.params, x, y)
    for name in eager.grads:
        assert np.array_equal(eager.grads[name], graph.grads[name])


def test_graph_mode_compiles_once_per_batch_size(models):
    model = models["fcnn"]
    strategy = get_strategy("vmap")
    x, y = batch(model, 4)
    strategy.per_example_grads(model, model.params, x, y)
    compiled = strategy.engine.compile_seconds
    strategy.per_example_grads(model, model.params, x, y)
    assert strategy.engine.compile_seconds == compiled
    assert len(strategy.engine.reports) == 1
    strategy.per_example_grads(model, model.params, x[:2], y[:2])
    assert len(strategy.engine.reports) == 2


@pytest.mark.parametrize("strategy_name", ["naive", "vmap", "outer", "norms"])
def test_footprint_grows_with_batch_size(models, strategy_name):
    strategy = get_strategy(strategy_name)
    model = models["fcnn"]
    assert 0 < strategy.footprint_bytes(model, 2) < strategy.footprint_bytes(model, 16)
