import math

import numpy as np
import pytest

from errors import ParameterDomainError
from models import MLP, SoftmaxRegression, finite_difference_check, model_from_spec


@pytest.fixture
def data():
    rng = np.random.default_rng(0)
    X = rng.standard_normal((30, 5))
    y = rng.integers(0, 3, size=30)
    return X, y


class TestModelFromSpec:
    def test_linear(self):
        model = model_from_spec('linear', 5, 3)
        assert isinstance(model, SoftmaxRegression)
        assert model.param_count == 5 * 3 + 3

    def test_one_hidden_layer(self):
        model = model_from_spec('mlp:16', 5, 3, loss='hinge')
        assert model.hidden == (16,)
        assert model.param_count == 5 * 16 + 16 + 16 * 3 + 3
        assert model.describe()['loss'] == 'hinge'

    def test_two_hidden_layers(self):
        assert model_from_spec('mlp:8,4', 5, 3).hidden == (8, 4)

    def test_default_width(self):
        assert model_from_spec('mlp', 784, 10).hidden == (128,)

    @pytest.mark.parametrize('spec', ['cnn', 'mlp:wide', 'mlp:8,8,8'])
    def test_rejected(self, spec):
        with pytest.raises(ParameterDomainError):
            model_from_spec(spec, 5, 3)

    def test_unknown_loss(self):
        with pytest.raises(ParameterDomainError):
            SoftmaxRegression(5, 3, loss='mse')

    def test_parameter_cap(self):
        with pytest.raises(ParameterDomainError):
            MLP(784, 10, hidden=(1000,))


class TestLossAndGradient:
    @pytest.mark.parametrize('spec', ['linear', 'mlp:16', 'mlp:8,6'])
    @pytest.mark.parametrize('loss', ['nll', 'hinge'])
    def test_gradient_matches_finite_differences(self, data, spec, loss):
        X, y = data
        model = model_from_spec(spec, 5, 3, loss=loss)
        w = model.init(seed=1)
        assert finite_difference_check(model, w, X, y, directions=20, seed=2) <= 1e-4

    @pytest.mark.parametrize('spec', ['linear', 'mlp:8,6'])
    @pytest.mark.parametrize('loss', ['nll', 'hinge'])
    def test_redundant_output_column_is_minus_the_rest(self, data, spec, loss):
        X, y = data
        model = model_from_spec(spec, 5, 3, loss=loss)
        g = model.grad(model.init(seed=4), X, y)
        mask = model.redundant_coordinates()
        fan_in, fan_out = model.shapes[-1]
        assert mask.sum() == fan_in + 1
        start = model.param_count - fan_in * fan_out - fan_out
        weights = g[start:start + fan_in * fan_out].reshape(fan_in, fan_out)
        biases = g[-fan_out:]
        np.testing.assert_allclose(weights.sum(axis=1), 0.0, atol=1e-12)
        assert biases.sum() == pytest.approx(0.0, abs=1e-12)
        assert np.all(mask[start:start + fan_in * fan_out].reshape(fan_in, fan_out)[:, -1])
        assert np.count_nonzero(mask[:start]) == 0

    def test_subset_gradient_is_mean_of_examples(self, data):
        X, y = data
        model = model_from_spec('mlp:8', 5, 3)
        w = model.init(seed=3)
        rows = [2, 7, 11, 19]
        batch = model.grad(w, X[rows], y[rows])
        singles = np.mean([model.grad(w, X[[r]], y[[r]]) for r in rows], axis=0)
        np.testing.assert_allclose(batch, singles, rtol=1e-10, atol=1e-14)

    def test_nll_at_zero_weights(self, data):
        X, y = data
        model = SoftmaxRegression(5, 3)
        assert model.loss(np.zeros(model.param_count), X, y) == pytest.approx(math.log(3))

    def test_hinge_at_zero_weights(self, data):
        X, y = data
        model = SoftmaxRegression(5, 3, loss='hinge')
        assert model.loss(np.zeros(model.param_count), X, y) == pytest.approx(2.0 / 3.0)

    def test_loss_and_grad_agree(self, data):
        X, y = data
        model = model_from_spec('mlp:8', 5, 3)
        w = model.init(seed=4)
        loss, g = model.loss_and_grad(w, X, y)
        assert loss == model.loss(w, X, y)
        np.testing.assert_array_equal(g, model.grad(w, X, y))

    def test_wrong_parameter_shape(self, data):
        X, y = data
        model = SoftmaxRegression(5, 3)
        with pytest.raises(ParameterDomainError):
            model.loss(np.zeros(model.param_count + 1), X, y)


class TestInit:
    def test_deterministic(self):
        model = MLP(5, 3, hidden=(8,))
        np.testing.assert_array_equal(model.init(7), model.init(7))

    def test_fan_in_bounds(self):
        model = MLP(16, 3, hidden=(4,))
        first_layer = model.unpack(model.init(1))[0][0]
        assert np.all(np.abs(first_layer) <= 0.25)


class TestAccuracy:
    def test_separable_data(self):
        X = np.array([[1.0, 0.0], [0.0, 1.0]] * 5)
        y = np.array([0, 1] * 5)
        model = SoftmaxRegression(2, 2)
        # identity weights score each class by its own coordinate
        w = np.concatenate([np.eye(2).ravel(), np.zeros(2)])
        assert model.accuracy(w, X, y) == 1.0
