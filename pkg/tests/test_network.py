"""Tests for the LSTM forward and backward passes."""

import numpy as np
import pytest

from lane_change_lstm.errors import ConfigError, ModelError, ShapeMismatch, StaleCache
from lane_change_lstm.network import (
    GATES,
    LstmCellParams,
    NetworkDims,
    clip_by_global_norm,
    init_params,
    lstm_cell_forward,
    network_backward,
    network_forward,
    predict_proba,
    sample_dropout_masks,
)


def _zero_cell(H, D):
    return LstmCellParams(W_x=np.zeros((4, H, D)), W_h=np.zeros((4, H, H)), b=np.zeros((4, H)))


def _random_params(seed, dims):
    """Glorot weights with nonzero biases so every path carries gradient."""
    rng = np.random.default_rng(seed + 1000)
    params = init_params(seed, dims)
    return params.map(lambda a: a + 0.1 * rng.standard_normal(a.shape))


def _mean_bce(params, X, y, masks=None):
    mode = "eval" if masks is None else "train"
    p, _ = network_forward(X, params, mode=mode, masks=masks)
    return float(np.mean(-(y * np.log(p) + (1 - y) * np.log(1 - p))))


def _check_gradients(params, X, y, masks=None):
    """Compare analytic gradients with central differences on every parameter entry."""
    eps = 1e-5
    mode = "eval" if masks is None else "train"
    _, cache = network_forward(X, params, mode=mode, masks=masks)
    grads = dict(network_backward(cache, X, params, y).named_arrays())
    for name, array in params.named_arrays():
        flat = array.reshape(-1)
        for index in range(flat.size):
            original = flat[index]
            flat[index] = original + eps
            plus = _mean_bce(params, X, y, masks)
            flat[index] = original - eps
            minus = _mean_bce(params, X, y, masks)
            flat[index] = original
            numeric = (plus - minus) / (2 * eps)
            analytic = grads[name].reshape(-1)[index]
            diff = abs(numeric - analytic)
            scale = max(abs(numeric), abs(analytic))
            assert diff <= 1e-8 or diff / scale <= 1e-4, (name, index, numeric, analytic)


class TestLstmCellForward:
    """Test cases for lstm_cell_forward."""

    def test_zero_params_zero_state(self):
        """Test that zero parameters give half-open gates and zero state."""
        params = _zero_cell(3, 2)

        h, c, record = lstm_cell_forward(np.array([1.0, -2.0]), np.zeros(3), np.zeros(3), params)

        for gate in (record.f, record.i, record.o):
            np.testing.assert_array_equal(gate, 0.5)
        np.testing.assert_array_equal(c, 0.0)
        np.testing.assert_array_equal(h, 0.0)

    def test_zero_params_unit_cell(self):
        """Test that c_prev = 1 halves the cell state."""
        params = _zero_cell(3, 2)

        h, c, _ = lstm_cell_forward(np.zeros(2), np.zeros(3), np.ones(3), params)

        np.testing.assert_array_equal(c, 0.5)
        np.testing.assert_allclose(h, 0.2310586, atol=1e-7)

    def test_cell_contraction(self):
        """Test that zero parameters shrink the cell state by half per step."""
        params = _zero_cell(2, 2)
        h, c = np.zeros(2), np.ones(2)
        for t in range(1, 11):
            h, c, _ = lstm_cell_forward(np.zeros(2), h, c, params)
            np.testing.assert_allclose(c, 0.5**t)

    def test_matches_extended_precision(self):
        """Test against a per-gate transcription of the cell in long double."""
        rng = np.random.default_rng(7)
        H = D = 3
        params = LstmCellParams(
            W_x=rng.normal(size=(4, H, D)), W_h=rng.normal(size=(4, H, H)), b=rng.normal(size=(4, H))
        )
        x, h_prev, c_prev = rng.normal(size=D), rng.normal(size=H), rng.normal(size=H)

        h, c, _ = lstm_cell_forward(x, h_prev, c_prev, params)

        ld = np.longdouble
        one = ld(1)
        gates = {}
        for name in GATES:
            W_xg, W_hg, b_g = params.gate(name)
            z = W_xg.astype(ld) @ x.astype(ld) + W_hg.astype(ld) @ h_prev.astype(ld) + b_g.astype(ld)
            gates[name] = np.tanh(z) if name == "c" else one / (one + np.exp(-z))
        c_ref = gates["f"] * c_prev.astype(ld) + gates["i"] * gates["c"]
        h_ref = gates["o"] * np.tanh(c_ref)
        assert np.max(np.abs(c - c_ref)) < 1e-12
        assert np.max(np.abs(h - h_ref)) < 1e-12

    def test_shape_mismatch(self):
        """Test that a wrong input width is rejected."""
        with pytest.raises(ShapeMismatch):
            lstm_cell_forward(np.zeros(4), np.zeros(3), np.zeros(3), _zero_cell(3, 2))


class TestNetworkForward:
    """Test cases for network_forward."""

    def setup_method(self):
        """Set up test fixtures."""
        self.dims = NetworkDims(input_size=6, cells=8)
        self.params = init_params(1, self.dims)
        self.X = np.random.default_rng(2).normal(size=(4, 5, 6))

    def test_zero_params(self):
        """Test that zero parameters predict exactly 0.5."""
        p, _ = network_forward(self.X[0], self.params.zeros_like())
        assert p == 0.5

    def test_single_sequence_returns_float(self):
        """Test that an (n, D) input returns a scalar probability."""
        p, cache = network_forward(self.X[0], self.params)
        assert isinstance(p, float)
        assert 0.0 < p < 1.0
        assert cache.timesteps == 5

    def test_batch_matches_single(self):
        """Test that batching does not change per-sequence outputs."""
        batch, _ = network_forward(self.X, self.params)
        singles = [network_forward(x, self.params)[0] for x in self.X]
        np.testing.assert_allclose(batch, singles, rtol=0, atol=1e-14)

    def test_eval_deterministic(self):
        """Test that eval mode is deterministic."""
        first, _ = network_forward(self.X, self.params, mode="eval")
        second, _ = network_forward(self.X, self.params, mode="eval")
        np.testing.assert_array_equal(first, second)

    def test_train_rate_zero_equals_eval(self):
        """Test that train mode without dropout matches eval mode."""
        train_p, cache = network_forward(
            self.X, self.params, mode="train", dropout_rate=0.0, rng=np.random.default_rng(0)
        )
        eval_p, _ = network_forward(self.X, self.params, mode="eval")
        np.testing.assert_array_equal(train_p, eval_p)
        assert cache.masks is None

    def test_dropout_needs_rng(self):
        """Test that train-mode dropout without an rng is a model error."""
        with pytest.raises(ModelError):
            network_forward(self.X, self.params, mode="train", dropout_rate=0.2)

    def test_unknown_mode(self):
        """Test that only train and eval modes exist."""
        with pytest.raises(ConfigError):
            network_forward(self.X, self.params, mode="infer")

    def test_wrong_width(self):
        """Test that input width must match the parameters."""
        with pytest.raises(ShapeMismatch):
            network_forward(np.zeros((5, 7)), self.params)

    def test_dropout_masks_are_inverted(self):
        """Test that kept units are scaled by 1 / keep."""
        m1, m2 = sample_dropout_masks((50, 5, 8), 0.2, np.random.default_rng(0))
        assert set(np.unique(m1)) <= {0.0, 1.25}
        assert set(np.unique(m2)) <= {0.0, 1.25}
        assert 0.7 < np.mean(m1 > 0) < 0.9

    def test_predict_proba_float32(self):
        """Test that float32 inference stays close to float64."""
        p64 = predict_proba(self.params, self.X)
        p32 = predict_proba(self.params, self.X, dtype=np.float32, batch_size=3)
        np.testing.assert_allclose(p32, p64, atol=1e-5)


class TestNetworkBackward:
    """Test cases for network_backward."""

    @pytest.mark.parametrize("instance", range(20))
    def test_gradient_check(self, instance):
        """Test every analytic gradient entry against central differences."""
        rng = np.random.default_rng(instance)
        H = (4, 8)[instance % 2]
        D = (3, 6, 24)[instance % 3]
        dims = NetworkDims(input_size=D, cells=H, fc_units=5)
        params = _random_params(instance, dims)
        X = rng.normal(size=(3, 5, D))
        y = np.array([1.0, 0.0, float(instance % 2)])

        _check_gradients(params, X, y)

    def test_gradient_check_with_dropout(self):
        """Test gradients in train mode with replayed dropout masks."""
        dims = NetworkDims(input_size=6, cells=8, fc_units=5)
        params = _random_params(3, dims)
        X = np.random.default_rng(3).normal(size=(2, 5, 6))
        masks = sample_dropout_masks((2, 5, 8), 0.3, np.random.default_rng(4))

        _check_gradients(params, X, np.array([1.0, 0.0]), masks=masks)

    def test_output_bias_gradient(self):
        """Test that the output bias gradient of one example is p - y."""
        dims = NetworkDims(input_size=3, cells=4, fc_units=5)
        params = _random_params(0, dims)
        x = np.random.default_rng(0).normal(size=(5, 3))
        p, cache = network_forward(x, params)

        grads = network_backward(cache, x, params, 1)

        assert grads.out_b[0] == pytest.approx(p - 1.0)

    def test_masked_fc_input_has_zero_gradient(self):
        """Test that a dropped last-step unit gets no FC weight gradient."""
        dims = NetworkDims(input_size=3, cells=4, fc_units=5)
        params = _random_params(1, dims)
        x = np.random.default_rng(1).normal(size=(1, 5, 3))
        m1 = np.ones((1, 5, 4))
        m2 = np.ones((1, 5, 4))
        m2[0, -1, 2] = 0.0
        _, cache = network_forward(x, params, mode="train", masks=(m1, m2))

        grads = network_backward(cache, x, params, np.array([1.0]))

        np.testing.assert_array_equal(grads.fc_W[:, 2], 0.0)

    def test_stale_cache(self):
        """Test that a cache from another input shape is rejected."""
        dims = NetworkDims(input_size=3, cells=4)
        params = init_params(0, dims)
        _, cache = network_forward(np.zeros((5, 3)), params)
        with pytest.raises(StaleCache):
            network_backward(cache, np.zeros((6, 3)), params, 1)

    def test_label_shape(self):
        """Test that the label count must match the batch."""
        dims = NetworkDims(input_size=3, cells=4)
        params = init_params(0, dims)
        X = np.zeros((2, 5, 3))
        _, cache = network_forward(X, params)
        with pytest.raises(ShapeMismatch):
            network_backward(cache, X, params, np.array([1.0, 0.0, 1.0]))


class TestInitParams:
    """Test cases for init_params."""

    def test_same_seed_identical(self):
        """Test that the same seed gives bitwise-identical parameters."""
        dims = NetworkDims(input_size=24, cells=16)
        first = dict(init_params(5, dims).named_arrays())
        second = dict(init_params(5, dims).named_arrays())
        for name, array in first.items():
            np.testing.assert_array_equal(array, second[name])

    def test_different_seed_differs(self):
        """Test that different seeds give different weights."""
        dims = NetworkDims(input_size=24, cells=16)
        assert not np.array_equal(init_params(1, dims).fc_W, init_params(2, dims).fc_W)

    def test_shapes_and_biases(self):
        """Test array shapes and zero biases."""
        params = init_params(0, NetworkDims(input_size=24, cells=16))

        assert params.layer1.W_x.shape == (4, 16, 24)
        assert params.layer2.W_h.shape == (4, 16, 16)
        assert params.fc_W.shape == (32, 16)
        assert params.out_W.shape == (1, 32)
        np.testing.assert_array_equal(params.layer1.b, 0.0)
        np.testing.assert_array_equal(params.out_b, 0.0)
        assert params.parameter_count == sum(a.size for _, a in params.named_arrays())

    def test_glorot_bounds_and_mean(self):
        """Test that weights stay inside the Glorot bound with centered mean."""
        D, H = 24, 128
        params = init_params(0, NetworkDims(input_size=D, cells=H))
        bound = np.sqrt(6.0 / (D + H))
        weights = params.layer1.W_x

        assert np.abs(weights).max() <= bound
        standard_error = bound / np.sqrt(3.0) / np.sqrt(weights.size)
        assert abs(weights.mean()) < 3 * standard_error


class TestClipByGlobalNorm:
    """Test cases for clip_by_global_norm."""

    def test_clips_large_gradients(self):
        """Test that the joint norm is scaled down to the limit."""
        grads = init_params(0, NetworkDims(input_size=3, cells=4)).map(lambda a: np.ones_like(a))

        clipped, norm = clip_by_global_norm(grads, 1.0)

        assert norm == pytest.approx(np.sqrt(grads.parameter_count))
        total = np.sqrt(sum(np.sum(g * g) for _, g in clipped.named_arrays()))
        assert total == pytest.approx(1.0)

    def test_small_gradients_untouched(self):
        """Test that gradients under the limit pass through."""
        grads = init_params(0, NetworkDims(input_size=3, cells=4)).zeros_like()
        clipped, norm = clip_by_global_norm(grads, 1.0)
        assert clipped is grads
        assert norm == 0.0
