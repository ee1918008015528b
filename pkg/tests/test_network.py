import numpy as np
import pytest

from specnet.block import SpecConvLayer, activate_values, spec_conv_forward
from specnet.errors import DimensionError, NumericIntegrityError, UsageError
from specnet.fft import fft2d, ifft2d
from specnet.memory import MemLedger
from specnet.network import (
    SPATIAL,
    SPECTRAL,
    Dense,
    DenseLayer,
    Flatten,
    Model,
    ModelSpec,
    SpatialActivation,
    SpecConv,
    SpectralPool,
    ToSpatial,
    dense_backward,
    dense_forward,
    model_backward,
    model_forward,
    softmax_xent,
    spatial_conv_reference,
    spec_lenet_mini,
    to_spatial,
)
from specnet.selftest import gradient_check, threshold_margin, tiny_model
from specnet.sparse import SparseSpectral, densify


class TestSpatialReference:
    def test_identity_kernel(self):
        x = np.arange(12.0).reshape(3, 4)
        np.testing.assert_array_equal(spatial_conv_reference(x, [[1.0]]), x)

    def test_hand_example(self):
        out = spatial_conv_reference([[1, 2], [3, 4]], [[1, 0], [0, 1]])
        np.testing.assert_array_equal(out, [[1, 2, 0], [3, 5, 2], [0, 3, 4]])

    def test_matches_fft_path(self):
        rng = np.random.default_rng(0)
        x, k = rng.standard_normal((9, 6)), rng.standard_normal((4, 4))
        _, cache = spec_conv_forward(x, SpecConvLayer(k, 0.0))
        np.testing.assert_allclose(ifft2d(densify(cache.Yhat))[0, 0].real,
                                   spatial_conv_reference(x, k), atol=1e-8)


class TestToSpatial:
    def test_matches_manual_pipeline(self):
        rng = np.random.default_rng(1)
        x, k = rng.standard_normal((5, 5)), rng.standard_normal((3, 3))
        Z, _ = spec_conv_forward(x, SpecConvLayer(k, 0.0))
        Y = fft2d(np.pad(x, ((0, 2), (0, 2)))) * fft2d(np.pad(k, ((0, 4), (0, 4))))
        expected = ifft2d(activate_values(Y)).real
        np.testing.assert_allclose(to_spatial(Z)[0, 0], expected, atol=1e-8)

    def test_empty(self):
        np.testing.assert_array_equal(to_spatial(SparseSpectral.empty((4, 4))), np.zeros((4, 4)))

    def test_broken_symmetry(self):
        S = SparseSpectral.from_entries(4, 4, [(0, 1, 1.0 + 0j)])
        with pytest.raises(NumericIntegrityError):
            to_spatial(S)


class TestDense:
    def test_identity(self):
        x = np.array([1.5, -2.0, 3.0])
        np.testing.assert_array_equal(dense_forward(x, DenseLayer(np.eye(3), np.zeros(3))), x)

    def test_one_row(self):
        out = dense_forward([2.0, 3.0], DenseLayer([[1.0, 1.0]], [0.5]))
        np.testing.assert_array_equal(out, [5.5])

    def test_weight_gradient(self):
        rng = np.random.default_rng(2)
        W, b, x = rng.standard_normal((3, 4)), rng.standard_normal(3), rng.standard_normal(4)

        def loss(w):
            return 0.5 * np.sum(dense_forward(x, DenseLayer(w, b)) ** 2)

        out = dense_forward(x, DenseLayer(W, b))
        _, gW, gb = dense_backward(out, x, DenseLayer(W, b))
        h = 1e-6
        for idx in np.ndindex(W.shape):
            Wp, Wm = W.copy(), W.copy()
            Wp[idx] += h
            Wm[idx] -= h
            assert abs((loss(Wp) - loss(Wm)) / (2 * h) - gW[idx]) < 1e-6
        np.testing.assert_allclose(gb, out)

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            dense_forward(np.ones(3), DenseLayer(np.ones((2, 4)), np.zeros(2)))


class TestSoftmaxXent:
    def test_uniform_logits(self):
        loss, _ = softmax_xent(np.full(7, 0.3), 2)
        assert loss == pytest.approx(np.log(7))

    def test_large_logit(self):
        loss, grad = softmax_xent(np.array([1000.0, 0.0]), 0)
        assert np.isfinite(loss) and loss == pytest.approx(0.0, abs=1e-12)
        assert np.all(np.isfinite(grad))

    def test_gradient(self):
        rng = np.random.default_rng(3)
        z = rng.standard_normal(5)
        _, g = softmax_xent(z, 3)
        h = 1e-6
        for i in range(5):
            zp, zm = z.copy(), z.copy()
            zp[i] += h
            zm[i] -= h
            fd = (softmax_xent(zp, 3)[0] - softmax_xent(zm, 3)[0]) / (2 * h)
            assert abs(fd - g[i]) < 1e-6

    def test_batch_is_mean(self):
        z = np.random.default_rng(4).standard_normal((4, 3))
        labels = np.array([0, 2, 1, 1])
        loss, _ = softmax_xent(z, labels)
        assert loss == pytest.approx(np.mean([softmax_xent(z[i], labels[i])[0] for i in range(4)]))

    def test_bad_label(self):
        with pytest.raises(ValueError):
            softmax_xent(np.zeros(3), 3)


def single_conv_spec(mode=SPECTRAL, beta=0.0):
    return ModelSpec((1, 6, 6), [SpecConv(2, 3), ToSpatial(), Flatten(), Dense(3)], 3, mode, beta)


class TestModel:
    def test_composition(self):
        model = Model.init(single_conv_spec(), seed=5)
        x = np.random.default_rng(5).standard_normal((1, 6, 6))
        logits = model_forward(model, x)[0][0]
        Z, _ = spec_conv_forward(x, SpecConvLayer(model.params["0.kernels"], 0.0))
        flat = to_spatial(Z).reshape(-1)
        expected = dense_forward(flat, DenseLayer(model.params["3.weight"], model.params["3.bias"]))
        np.testing.assert_allclose(logits, expected, atol=1e-12)

    @pytest.mark.parametrize("spec_fn", [single_conv_spec, lambda: spec_lenet_mini()])
    def test_cross_mode_at_zero_beta(self, spec_fn):
        spec = spec_fn()
        model = Model.init(spec, seed=6)
        x = np.random.default_rng(6).standard_normal((3,) + spec.input_shape)
        a = model_forward(model, x)[0]
        b = model_forward(model.with_mode(SPATIAL), x)[0]
        assert np.max(np.abs(a - b)) <= 1e-6

    def test_zero_model(self):
        model = Model.zeros(spec_lenet_mini(num_classes=4))
        logits = model_forward(model, np.zeros((2, 1, 12, 12)))[0]
        np.testing.assert_array_equal(logits, 0.0)
        assert softmax_xent(logits, [0, 3])[0] == pytest.approx(np.log(4))

    def test_lenet_mini_shapes(self):
        spec = spec_lenet_mini()
        assert spec.shapes[:4] == [(8, 14, 14), (8, 7, 7), (16, 7, 7), (16, 7, 7)]
        assert spec.shapes[-1] == (2,)

    def test_input_shape_checked(self):
        model = Model.init(spec_lenet_mini(), seed=0)
        with pytest.raises(DimensionError):
            model_forward(model, np.zeros((1, 1, 10, 12)))

    @pytest.mark.parametrize("layers", [
        [SpecConv(2), Flatten(), Dense(2)],
        [SpecConv(2), ToSpatial(), ToSpatial(), Flatten(), Dense(2)],
        [SpecConv(2), ToSpatial(), SpecConv(2), ToSpatial(), Flatten(), Dense(2)],
        [SpectralPool(), SpecConv(2), ToSpatial(), Flatten(), Dense(2)],
        [SpecConv(2), Flatten(), ToSpatial(), Dense(2)],
    ])
    def test_one_transition_rule(self, layers):
        with pytest.raises(UsageError):
            ModelSpec((1, 6, 6), layers, 2)

    def test_spectral_pass_has_one_transition(self):
        spec = spec_lenet_mini(beta=0.5)
        model = Model.init(spec, seed=0)
        _, caches, _ = model_forward(model, np.ones((1, 1, 12, 12)))
        spectral_outputs = [isinstance(c, SparseSpectral) for c in caches]
        # pool and to-spatial caches hold the spectral map they consumed
        assert [layer.kind for layer in spec.layers].count("to-spatial") == 1
        assert spectral_outputs[3] and not any(spectral_outputs[4:])

    def test_with_mode_shares_parameters(self):
        model = Model.init(spec_lenet_mini(), seed=0)
        other = model.with_mode(SPATIAL, 1.0)
        assert other.params is model.params and other.spec.beta == 1.0

    def test_description_round_trip(self):
        spec = spec_lenet_mini(beta=0.75)
        back = ModelSpec.from_description(spec.input_shape, spec.describe(), spec.num_classes,
                                          spec.mode, spec.beta)
        assert back.describe() == spec.describe() and back.shapes == spec.shapes

    def test_spatial_activation_head(self):
        spec = ModelSpec((1, 6, 6), [SpecConv(2), ToSpatial(), SpatialActivation("relu"),
                                     Flatten(), Dense(2)], 2)
        model = Model.init(spec, seed=1)
        x = np.random.default_rng(1).standard_normal((2, 1, 6, 6))
        assert gradient_check(model, x, np.array([0, 1])) <= 1e-4


class TestGradients:
    @pytest.mark.parametrize("beta", [0.0, 0.5, 1.0])
    def test_tiny_model(self, beta):
        model = tiny_model(seed=3, beta=beta)
        rng = np.random.default_rng(3)
        for _ in range(50):
            x = rng.standard_normal((2, 1, 6, 6))
            if threshold_margin(model, x) > 1e-4:
                break
        assert gradient_check(model, x, np.array([0, 2])) <= 1e-4

    def test_tiny_model_spatial_mode(self):
        model = tiny_model(seed=4).with_mode(SPATIAL)
        x = np.random.default_rng(4).standard_normal((2, 1, 6, 6))
        assert gradient_check(model, x, np.array([1, 2])) <= 1e-4

    @pytest.mark.parametrize("mode", [SPECTRAL, SPATIAL])
    def test_lenet_mini_with_pool(self, mode):
        spec = spec_lenet_mini(input_shape=(1, 6, 6), channels=(2, 2), beta=0.0, mode=mode)
        model = Model.init(spec, seed=8)
        x = np.random.default_rng(8).standard_normal((2, 1, 6, 6))
        assert gradient_check(model, x, np.array([0, 1])) <= 1e-4

    def test_input_gradient_is_returned(self):
        model = tiny_model(seed=0)
        logits, caches, _ = model_forward(model, np.ones((1, 1, 6, 6)))
        _, g = softmax_xent(logits, [0])
        grads, gx = model_backward(model, caches, g, grad_input=True)
        assert gx.shape == (1, 1, 6, 6) and set(grads) == set(model.params)


class TestLedgerEvents:
    def test_one_event_per_layer(self):
        model = Model.init(spec_lenet_mini(beta=1.0), seed=0)
        ledger = MemLedger()
        model_forward(model, np.ones((2, 1, 12, 12)), ledger)
        assert [e.layer for e in ledger.events] == list(range(6))
        assert ledger.events[4].bytes == 0

    def test_baseline_charges_dense_maps(self):
        model = Model.init(spec_lenet_mini(mode=SPATIAL), seed=0)
        ledger = MemLedger()
        model_forward(model, np.ones((2, 1, 12, 12)), ledger)
        sizes = [e.bytes for e in ledger.events]
        assert sizes[:4] == [2 * 8 * 14 * 14 * 8, 2 * 8 * 7 * 7 * 8,
                             2 * 16 * 7 * 7 * 8, 2 * 16 * 7 * 7 * 8]

    def test_spectral_bytes_shrink_with_beta(self):
        model = Model.init(spec_lenet_mini(), seed=0)
        x = np.random.default_rng(0).standard_normal((4, 1, 12, 12))
        averages = []
        for beta in (0.0, 0.5, 1.0, 1.5, 3.0):
            ledger = MemLedger()
            model_forward(model.with_mode(SPECTRAL, beta), x, ledger)
            averages.append(ledger.average)
        assert averages == sorted(averages, reverse=True)
