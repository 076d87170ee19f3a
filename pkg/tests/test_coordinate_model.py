import json

import numpy as np
import pytest

from api.coordinate_model import CoordinateModel, load_checkpoint, save_checkpoint, standardization
from models.errors import DimensionMismatch, InvalidParameter, ParseFailure


def _model(activation="tanh", width=5, n=4, m=2, seed=0):
    rng = np.random.default_rng(seed)
    data = rng.normal(loc=3.0, scale=[0.5, 1.0, 2.0, 4.0][:n], size=(20, n))
    return CoordinateModel.initialize(n, m, width=width, activation=activation, rng=rng, data=data), rng


def _finite_difference_jacobian(model, point, step=1e-4):
    columns = []
    for n in range(model.input_dim):
        h = step / model.scale[n]
        offset = np.zeros(model.input_dim)
        offset[n] = h
        columns.append((model.forward(point + offset) - model.forward(point - offset)) / (2 * h))
    return np.stack(columns, axis=1)


@pytest.mark.parametrize("activation", ["tanh", "sigmoid", "softplus"])
def test_jacobian_matches_finite_differences(activation):
    model, rng = _model(activation)
    for point in rng.normal(loc=3.0, size=(5, 4)):
        J = model.jacobian(point)
        J_fd = _finite_difference_jacobian(model, point)
        assert np.linalg.norm(J - J_fd) / np.linalg.norm(J) <= 1e-5


def test_batched_jacobian_matches_single_points():
    model, rng = _model()
    points = rng.normal(size=(3, 4))
    batched = model.jacobian(points)
    assert batched.shape == (3, 2, 4)
    for p in range(3):
        np.testing.assert_allclose(batched[p], model.jacobian(points[p]), rtol=1e-13, atol=1e-15)


@pytest.mark.parametrize("width,activation", [(0, "tanh"), (3, "tanh"), (4, "sigmoid"), (2, "softplus")])
def test_parameter_gradient_matches_finite_differences(width, activation):
    model, rng = _model(activation, width=width)
    points = rng.normal(loc=3.0, size=(6, 4))
    upstream = rng.normal(size=(6, 2, 4))

    def functional(theta):
        model.set_flat(theta)
        return float(np.sum(upstream * model.jacobian(points)))

    theta = model.get_flat()
    analytic = model.flatten_grad(model.jacobian_param_grad(points, upstream))
    numeric = np.zeros_like(theta)
    for i in range(theta.size):
        step = np.zeros_like(theta)
        step[i] = 1e-6
        numeric[i] = (functional(theta + step) - functional(theta - step)) / 2e-6
    model.set_flat(theta)
    assert np.linalg.norm(analytic - numeric) / np.linalg.norm(analytic) <= 1e-5


def test_identity_model():
    model = CoordinateModel.identity(3)
    point = np.array([0.3, -1.0, 2.0])
    np.testing.assert_array_equal(model.forward(point), point)
    np.testing.assert_array_equal(model.jacobian(point), np.eye(3))


def test_linear_model_without_hidden_layer():
    weight = np.array([[0.5, 0.0], [0.0, 1.0 / 3.0]])
    model = CoordinateModel.linear(weight, bias=[1.0, -1.0])
    np.testing.assert_allclose(model.forward([2.0, 3.0]), [2.0, 0.0])
    assert model.param_names == ("W", "b")


def test_flat_parameters_round_trip():
    model, _ = _model()
    theta = model.get_flat()
    assert theta.size == 5 * 4 + 5 + 2 * 5 + 2
    model.set_flat(theta * 2.0)
    np.testing.assert_array_equal(model.get_flat(), theta * 2.0)
    with pytest.raises(DimensionMismatch):
        model.set_flat(theta[:-1])


def test_standardization_floors_empty_coordinates():
    data = np.column_stack([np.linspace(0, 1, 10), np.linspace(0, 3, 10), np.zeros(10)])
    mean, scale = standardization(data)
    spreads = data.std(axis=0)
    assert np.all(np.isfinite(scale))
    assert scale[2] == pytest.approx(1.0 / spreads.mean())
    assert scale[1] == pytest.approx(1.0 / spreads[1])


def test_unknown_activation_is_rejected():
    with pytest.raises(InvalidParameter):
        CoordinateModel.initialize(3, 2, width=4, activation="relu")


def test_input_length_is_checked():
    model, _ = _model()
    with pytest.raises(DimensionMismatch):
        model.forward(np.zeros(5))


@pytest.mark.parametrize("activation", ["tanh", "sigmoid"])
def test_chart_model_reproduces_each_frame_at_its_anchor(activation):
    rng = np.random.default_rng(12)
    anchors = rng.normal(loc=2.0, scale=[0.5, 1.0, 2.0, 4.0], size=(6, 4))
    frames = np.stack([np.linalg.qr(rng.normal(size=(4, 2)))[0].T for _ in range(6)])
    model = CoordinateModel.from_charts(anchors, frames, activation=activation)

    assert model.width == 12
    np.testing.assert_allclose(model.jacobian(anchors), frames, atol=2e-2)


def test_chart_model_needs_a_saturating_activation_and_one_frame_per_anchor():
    anchors = np.zeros((3, 4))
    frames = np.tile(np.eye(4)[:2], (3, 1, 1))
    with pytest.raises(InvalidParameter):
        CoordinateModel.from_charts(anchors, frames, activation="softplus")
    with pytest.raises(DimensionMismatch):
        CoordinateModel.from_charts(anchors[:2], frames)


def test_checkpoint_round_trip(tmp_path):
    model, rng = _model("softplus")
    path = save_checkpoint(model, tmp_path / "checkpoint.json", seed=3, objective="coordinates")
    restored = load_checkpoint(path)
    points = rng.normal(size=(4, 4))
    np.testing.assert_array_equal(restored.forward(points), model.forward(points))
    assert restored.activation == "softplus"
    assert json.loads(path.read_text())["seed"] == 3


def test_checkpoint_schema_is_enforced(tmp_path):
    model, _ = _model()
    payload = model.to_dict()
    del payload["scale"]
    path = tmp_path / "broken.json"
    path.write_text(json.dumps(payload))
    with pytest.raises(ParseFailure):
        load_checkpoint(path)

    payload = model.to_dict()
    payload["activation"] = "relu"
    path.write_text(json.dumps(payload))
    with pytest.raises(ParseFailure):
        load_checkpoint(path)
