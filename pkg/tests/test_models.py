from typing import get_args

import numpy as np
import pytest

from pegrad.autodiff import evaluate, grad
from pegrad.models import EXPECTED_PARAMETERS, build, lstm_cell
from pegrad.models.builders import ModelKind
from pegrad.tensor_core.rng import RngState


@pytest.mark.parametrize("kind", get_args(ModelKind))
def test_parameter_counts(kind):
    assert build(kind).num_parameters == EXPECTED_PARAMETERS[kind]


def test_parameter_counts_of_known_architectures():
    assert build("logreg").num_parameters == 105
    # conv 1,040 + 8,224 + 16,416 and dense 36,896 + 330
    assert build("mnist_cnn").num_parameters == 62_906
    assert build("cifar_cnn").num_parameters == 605_226
    assert build("embed").num_parameters == 160_098
    assert build("lstm").num_parameters == 1_081_002


def test_mnist_cnn_layer_shapes():
    shapes = {s.name: s.shape for s in build("mnist_cnn").layer_shapes(4)}
    assert shapes["conv1"] == (4, 16, 14, 14)
    assert shapes["pool1"] == (4, 16, 13, 13)
    assert shapes["conv2"] == (4, 32, 10, 10)
    assert shapes["pool2"] == (4, 32, 9, 9)
    assert shapes["conv3"] == (4, 32, 6, 6)
    assert shapes["flatten"] == (4, 1152)
    assert shapes["fc2"] == (4, 10)


def test_cifar_cnn_layer_shapes():
    shapes = build("cifar_cnn").layer_shapes(2)
    assert shapes[-1].shape == (2, 10)
    pools = [s.shape for s in shapes if s.kind == "avg_pool2d"]
    assert pools == [(2, 32, 16, 16), (2, 64, 8, 8), (2, 128, 4, 4)]


def test_embed_logits():
    model = build("embed", seq_len=6)
    x = np.array([[1, 2, 3, 4, 5, 6], [0, 0, 0, 0, 0, 10_003]])
    assert model.forward(model.params, x).shape == (2, 2)


def test_binary_model_has_one_logit():
    model = build("logreg")
    assert model.layer_shapes(3)[-1].shape == (3, 1)
    assert model.num_classes == 2


def test_per_example_losses_sum_to_the_batch_loss():
    model = build("fcnn")
    rng = np.random.default_rng(0)
    x = rng.standard_normal((5, 104))
    y = rng.integers(0, 10, size=5)
    per_example = model.per_example_loss(model.params, x, y)
    assert per_example.shape == (5,)
    assert float(model.loss(model.params, x, y)) == pytest.approx(per_example.sum(), rel=1e-12)


def test_example_loss_tape_matches_batch_of_one():
    model = build("fcnn")
    rng = np.random.default_rng(1)
    x = rng.standard_normal(104)
    y = np.array(3)
    single = evaluate(model.example_loss_tape(), {"x": x, "y": y}, model.params)["loss"]
    batch = evaluate(model.loss_tape(1), {"x": x[None], "y": y[None]}, model.params)["loss"]
    assert single == batch


def test_unrolled_lstm_matches_scan():
    scanned = build("lstm", RngState(4), seq_len=5)
    unrolled = build("lstm", RngState(4), seq_len=5, unroll=True)
    assert scanned.signature != unrolled.signature
    x = np.random.default_rng(2).integers(0, 10_004, size=(3, 5))
    y = np.array([0, 1, 1])
    np.testing.assert_allclose(
        unrolled.forward(unrolled.params, x), scanned.forward(scanned.params, x), rtol=1e-9, atol=1e-12
    )
    grads = [evaluate(grad(m.loss_tape(3)), {"x": x, "y": y}, m.params) for m in (scanned, unrolled)]
    for name in scanned.params:
        np.testing.assert_allclose(grads[1][f"grad:{name}"], grads[0][f"grad:{name}"], rtol=1e-9, atol=1e-12)


def test_unrolled_tape_grows_with_sequence_length():
    short = build("lstm", seq_len=2, unroll=True).loss_tape(1)
    long = build("lstm", seq_len=6, unroll=True).loss_tape(1)
    scanned = build("lstm", seq_len=6).loss_tape(1)
    assert len(long) > len(short)
    assert len(scanned) < len(long)


def test_lstm_cell_with_zero_weights():
    n, e, h = 2, 3, 4
    w = np.zeros((e, 4 * h))
    u = np.zeros((h, 4 * h))
    b = np.zeros(4 * h)
    h1, c1 = lstm_cell(np.ones((n, e)), np.zeros((n, h)), np.zeros((n, h)), w, u, b)
    np.testing.assert_array_equal(h1, 0.0)
    np.testing.assert_array_equal(c1, 0.0)
    # all gates at one half and a zero candidate halve the cell state
    h2, c2 = lstm_cell(np.ones((n, e)), np.zeros((n, h)), np.ones((n, h)), w, u, b)
    np.testing.assert_allclose(c2, 0.5)
    np.testing.assert_allclose(h2, 0.5 * np.tanh(0.5))


def test_initialization_is_deterministic():
    a = build("mnist_cnn", RngState(9))
    b = build("mnist_cnn", RngState(9))
    c = build("mnist_cnn", RngState(10))
    for name in a.params:
        np.testing.assert_array_equal(a.params[name], b.params[name])
    assert not np.array_equal(a.params["conv1.W"], c.params["conv1.W"])


def test_initialization_bounds():
    model = build("fcnn")
    np.testing.assert_array_equal(model.params["fc1.b"], 0.0)
    assert np.abs(model.params["fc1.W"]).max() <= 1 / np.sqrt(104)
    assert np.abs(model.params["fc2.W"]).max() <= 1 / np.sqrt(50)


def test_single_precision_models():
    model = build("fcnn", dtype=np.float32)
    assert all(p.dtype == np.float32 for p in model.params.values())
    assert model.parameter_bytes == 4 * model.num_parameters
    assert model.with_dtype(np.float64).parameter_bytes == 8 * model.num_parameters


def test_unknown_model_kind():
    with pytest.raises(ValueError):
        build("resnet")
