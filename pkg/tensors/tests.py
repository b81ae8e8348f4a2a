# -*- coding: utf-8 -*-

import numpy as np
from django.test import SimpleTestCase, override_settings

from . import ops
from .gradcheck import grad_check
from .layers import BatchNorm2d, Conv2d, GlobalAvgPool, Module, ReLU, Sequential, Sigmoid, Upsample2x, parameter_count
from .precision import NonFiniteError, as_tensor, check_finite, float64_mode
from .reference import conv2d_naive, dilate_kernel, upsample_bilinear_2x_naive


def _away_from_zero(x: np.ndarray) -> np.ndarray:
    # ReLU 在 0 处不可导，差分点避开
    x = x.copy()
    x[np.abs(x) < 1e-2] += 5e-2
    return x


class ConcatProbe(Module):
    """把输入按通道拆成两半再拼接回去，用于检查 concat/split"""

    def forward(self, x):
        half = x.shape[1] // 2
        self._sizes = [half, x.shape[1] - half]
        return ops.concat_channels([x[:, :half] * 2.0, x[:, half:]])

    def backward(self, grad_out):
        first, second = ops.split_channels(grad_out, self._sizes)
        return ops.concat_channels([first * 2.0, second])


class PoolBroadcastProbe(Module):
    def forward(self, x):
        self._shape = x.shape
        return ops.broadcast_spatial(ops.global_avg_pool(x), x.shape[2], x.shape[3])

    def backward(self, grad_out):
        return ops.global_avg_pool_backward(ops.broadcast_spatial_backward(grad_out), self._shape)


class FlippedConv(Conv2d):
    def backward(self, grad_out):
        return -super().backward(grad_out)


class NaNBackward(ReLU):
    def backward(self, grad_out):
        grad = super().backward(grad_out)
        grad[0, 0, 0, 0] = np.nan
        return grad


class ConvForwardTests(SimpleTestCase):
    def test_all_ones_kernel_center_and_corners(self):
        x = np.ones((1, 1, 3, 3), dtype=np.float32)
        w = np.ones((1, 1, 3, 3), dtype=np.float32)
        out = ops.conv2d_forward(x, w, None, ops.ConvParams(kernel=3, stride=1, padding=1, dilation=1))
        self.assertEqual(out.shape, (1, 1, 3, 3))
        self.assertEqual(out[0, 0, 1, 1], 9.0)
        for corner in [(0, 0), (0, 2), (2, 0), (2, 2)]:
            self.assertEqual(out[0, 0][corner], 4.0)

    def test_identity_kernel(self):
        x = np.random.default_rng(1).standard_normal((2, 1, 5, 7)).astype(np.float32)
        w = np.ones((1, 1, 1, 1), dtype=np.float32)
        out = ops.conv2d_forward(x, w, None, ops.ConvParams(kernel=1))
        np.testing.assert_array_equal(out, x)

    def test_dilation_matches_zero_inserted_kernel(self):
        rng = np.random.default_rng(2)
        x = rng.standard_normal((1, 2, 9, 9))
        w = rng.standard_normal((3, 2, 3, 3))
        dilated = ops.conv2d_forward(x, w, None, ops.ConvParams(kernel=3, dilation=2))
        expanded = dilate_kernel(w, 2)
        self.assertEqual(expanded.shape[2:], (5, 5))
        plain = ops.conv2d_forward(x, expanded, None, ops.ConvParams(kernel=5, dilation=1))
        np.testing.assert_allclose(dilated, plain, atol=1e-6)

    def test_matches_naive_oracle(self):
        rng = np.random.default_rng(3)
        cases = [
            ops.ConvParams(kernel=3, stride=1, padding=1, dilation=1),
            ops.ConvParams(kernel=3, stride=2, padding=1, dilation=1),
            ops.ConvParams(kernel=3, stride=1, padding=3, dilation=3),
            ops.ConvParams(kernel=(3, 1), stride=(1, 2), padding=(2, 0), dilation=2),
        ]
        for params in cases:
            x = rng.standard_normal((2, 3, 10, 9))
            w = rng.standard_normal((4, 3) + params.kernel)
            b = rng.standard_normal(4)
            np.testing.assert_allclose(
                ops.conv2d_forward(x, w, b, params), conv2d_naive(x, w, b, params), atol=1e-9,
            )

    @override_settings(SCISEG_CONV_BLOCK_ROWS=3)
    def test_blocked_path_matches_oracle(self):
        rng = np.random.default_rng(4)
        x = rng.standard_normal((1, 2, 11, 8))
        w = rng.standard_normal((2, 2, 3, 3))
        params = ops.ConvParams.same(3, dilation=2)
        np.testing.assert_allclose(ops.conv2d_forward(x, w, None, params), conv2d_naive(x, w, None, params), atol=1e-9)

    def test_threads_are_bitwise_reproducible(self):
        rng = np.random.default_rng(5)
        x = rng.standard_normal((4, 3, 16, 16)).astype(np.float32)
        w = rng.standard_normal((5, 3, 3, 3)).astype(np.float32)
        params = ops.ConvParams.same(3, dilation=2)
        with override_settings(SCISEG_NUM_THREADS=1):
            single = ops.conv2d_forward(x, w, None, params)
        with override_settings(SCISEG_NUM_THREADS=3):
            threaded = ops.conv2d_forward(x, w, None, params)
        np.testing.assert_array_equal(single, threaded)

    def test_channel_mismatch_names_dimensions(self):
        x = np.zeros((1, 3, 8, 8), dtype=np.float32)
        w = np.zeros((2, 4, 3, 3), dtype=np.float32)
        with self.assertRaisesRegex(ops.ShapeError, 'c_in=3.*c_in=4'):
            ops.conv2d_forward(x, w, None, ops.ConvParams(kernel=3))

    def test_output_too_small(self):
        with self.assertRaises(ops.ShapeError):
            ops.ConvParams(kernel=3, dilation=4).output_size(5, 5)

    def test_output_size_formula(self):
        params = ops.ConvParams(kernel=3, stride=2, padding=1, dilation=1)
        self.assertEqual(params.output_size(512, 512), (256, 256))
        self.assertEqual(ops.ConvParams.same(3, dilation=18).output_size(32, 32), (32, 32))

    def test_dilation_adds_no_parameters(self):
        plain = Conv2d(8, 8, kernel=3, dilation=1)
        dilated = Conv2d(8, 8, kernel=3, dilation=6)
        self.assertEqual(parameter_count(plain), parameter_count(dilated))


class ConvBackwardTests(SimpleTestCase):
    def setUp(self):
        rng = np.random.default_rng(10)
        self.x = rng.standard_normal((2, 3, 8, 8)).astype(np.float32)
        self.w = rng.standard_normal((4, 3, 3, 3)).astype(np.float32)
        self.params = ops.ConvParams.same(3, dilation=2)

    def test_zero_grad_out_gives_zero_gradients(self):
        grad_out = np.zeros((2, 4, 8, 8), dtype=np.float32)
        gx, gw, gb = ops.conv2d_backward(grad_out, self.x, self.w, self.params)
        self.assertFalse(gx.any() or gw.any() or gb.any())
        self.assertEqual(gx.shape, self.x.shape)
        self.assertEqual(gw.shape, self.w.shape)
        self.assertEqual(gb.shape, (4,))

    def test_linear_in_grad_out(self):
        grad_out = np.random.default_rng(11).standard_normal((2, 4, 8, 8)).astype(np.float32)
        single = ops.conv2d_backward(grad_out, self.x, self.w, self.params)
        double = ops.conv2d_backward(2 * grad_out, self.x, self.w, self.params)
        for a, b in zip(single, double):
            np.testing.assert_allclose(b, 2 * a, rtol=1e-6, atol=1e-6)

    def test_grad_out_shape_mismatch(self):
        with self.assertRaises(ops.ShapeError):
            ops.conv2d_backward(np.zeros((2, 4, 7, 8)), self.x, self.w, self.params)

    def test_finite_differences_dilated(self):
        layer = Conv2d(3, 4, kernel=3, dilation=2, rng=np.random.default_rng(12))
        report32 = grad_check(layer, self.x, tolerance=1e-3)
        self.assertTrue(report32.passed, report32.message)
        report64 = grad_check(layer, self.x, tolerance=1e-6, double=True)
        self.assertTrue(report64.passed, report64.message)

    def test_strided_backward_matches_finite_differences(self):
        layer = Conv2d(2, 3, kernel=3, stride=2, rng=np.random.default_rng(13))
        x = np.random.default_rng(14).standard_normal((2, 2, 9, 9))
        report = grad_check(layer, x, tolerance=1e-6, double=True)
        self.assertTrue(report.passed, report.message)


class BatchNormTests(SimpleTestCase):
    def test_constant_channels_give_shift(self):
        state = ops.BatchNormState.create(2)
        state.shift[...] = [0.5, -1.5]
        x = np.empty((3, 2, 4, 4), dtype=np.float32)
        x[:, 0] = 7.0
        x[:, 1] = -2.0
        out, _ = ops.batchnorm_forward(x, state, 'train')
        np.testing.assert_allclose(out[:, 0], 0.5, atol=1e-6)
        np.testing.assert_allclose(out[:, 1], -1.5, atol=1e-6)

    def test_standardized_input_passes_through(self):
        x = np.ones((2, 3, 4, 4), dtype=np.float32)
        x[:, :, :, ::2] = -1.0
        out, _ = ops.batchnorm_forward(x, ops.BatchNormState.create(3), 'train')
        np.testing.assert_allclose(out, x, atol=1e-5)

    def test_running_statistics_update_and_eval(self):
        state = ops.BatchNormState.create(1, momentum=0.5)
        x = np.full((2, 1, 2, 2), 4.0, dtype=np.float32)
        ops.batchnorm_forward(x, state, 'train')
        np.testing.assert_allclose(state.running_mean, [2.0])
        np.testing.assert_allclose(state.running_var, [0.5])
        out, _ = ops.batchnorm_forward(x, state, 'eval')
        np.testing.assert_allclose(out, (4.0 - 2.0) / np.sqrt(0.5 + 1e-5), rtol=1e-5)

    def test_running_variance_stays_non_negative(self):
        state = ops.BatchNormState.create(3)
        rng = np.random.default_rng(15)
        for _ in range(5):
            ops.batchnorm_forward(rng.standard_normal((2, 3, 4, 4)).astype(np.float32), state, 'train')
        self.assertTrue((state.running_var >= 0).all())

    def test_empty_batch_in_train_mode(self):
        with self.assertRaises(ops.ShapeError):
            ops.batchnorm_forward(np.zeros((0, 2, 4, 4), dtype=np.float32), ops.BatchNormState.create(2), 'train')

    def test_channel_mismatch(self):
        with self.assertRaises(ops.ShapeError):
            ops.batchnorm_forward(np.zeros((1, 3, 4, 4)), ops.BatchNormState.create(2), 'train')

    def test_finite_differences(self):
        layer = BatchNorm2d(3)
        layer.weight.value[...] = [1.5, 0.5, -1.0]
        layer.bias.value[...] = [0.1, 0.2, 0.3]
        x = np.random.default_rng(16).standard_normal((2, 3, 5, 5)).astype(np.float32)
        report = grad_check(layer, x, tolerance=1e-3)
        self.assertTrue(report.passed, report.message)
        layer.eval()
        report = grad_check(layer, x, tolerance=1e-6, double=True)
        self.assertTrue(report.passed, report.message)


class UpsampleTests(SimpleTestCase):
    def test_constant_stays_constant(self):
        x = np.full((1, 2, 3, 4), 2.5, dtype=np.float32)
        out = ops.upsample_bilinear_2x(x)
        self.assertEqual(out.shape, (1, 2, 6, 8))
        np.testing.assert_allclose(out, 2.5)

    def test_two_pixel_row(self):
        x = np.array([[[[0.0, 2.0]]]])
        expected_row = upsample_bilinear_2x_naive(x)[0, 0, 0]
        np.testing.assert_allclose(expected_row, [0.0, 0.5, 1.5, 2.0])
        out = ops.upsample_bilinear_2x(x)
        self.assertEqual(out.shape, (1, 1, 2, 4))
        np.testing.assert_allclose(out[0, 0, 0], expected_row)
        np.testing.assert_allclose(out[0, 0, 1], expected_row)

    def test_matches_interpolation_oracle(self):
        x = np.random.default_rng(20).standard_normal((2, 3, 5, 4))
        np.testing.assert_allclose(ops.upsample_bilinear_2x(x), upsample_bilinear_2x_naive(x), atol=1e-12)

    def test_adjoint_identity(self):
        rng = np.random.default_rng(21)
        for shape in [(1, 1, 1, 1), (2, 3, 4, 5), (1, 2, 7, 3)]:
            x = rng.standard_normal(shape).astype(np.float32)
            y = rng.standard_normal((shape[0], shape[1], 2 * shape[2], 2 * shape[3])).astype(np.float32)
            lhs = float(np.sum(ops.upsample_bilinear_2x(x).astype(np.float64) * y))
            rhs = float(np.sum(x.astype(np.float64) * ops.upsample_bilinear_2x_backward(y)))
            self.assertAlmostEqual(lhs, rhs, delta=1e-4)


class ElementwiseTests(SimpleTestCase):
    def test_relu(self):
        x = np.array([-1.0, 0.0, 2.0]).reshape(1, 3, 1, 1)
        np.testing.assert_array_equal(ops.relu(x).ravel(), [0.0, 0.0, 2.0])

    def test_global_avg_pool_of_constant(self):
        x = np.full((2, 3, 4, 4), 3.25)
        np.testing.assert_allclose(ops.global_avg_pool(x), 3.25)
        self.assertEqual(ops.global_avg_pool(x).shape, (2, 3, 1, 1))

    def test_concat_dense_pyramid_width(self):
        features = np.zeros((1, 888, 32, 32), dtype=np.float32)
        branches = np.zeros((1, 1024, 32, 32), dtype=np.float32)
        self.assertEqual(ops.concat_channels([features, branches]).shape, (1, 1912, 32, 32))

    def test_concat_spatial_mismatch(self):
        with self.assertRaises(ops.ShapeError):
            ops.concat_channels([np.zeros((1, 2, 8, 8)), np.zeros((1, 2, 8, 4))])

    def test_split_inverts_concat(self):
        a = np.random.default_rng(30).standard_normal((1, 2, 3, 3))
        b = np.random.default_rng(31).standard_normal((1, 5, 3, 3))
        first, second = ops.split_channels(ops.concat_channels([a, b]), [2, 5])
        np.testing.assert_array_equal(first, a)
        np.testing.assert_array_equal(second, b)

    def test_sigmoid_range(self):
        out = ops.sigmoid(np.array([-1000.0, 0.0, 1000.0]).reshape(1, 3, 1, 1))
        np.testing.assert_allclose(out.ravel(), [0.0, 0.5, 1.0])

    def test_ops_do_not_mutate_inputs(self):
        x = np.random.default_rng(32).standard_normal((1, 2, 4, 4)).astype(np.float32)
        before = x.copy()
        ops.relu(x)
        ops.upsample_bilinear_2x(x)
        ops.conv2d_forward(x, np.ones((1, 2, 3, 3), dtype=np.float32), None, ops.ConvParams.same(3))
        np.testing.assert_array_equal(x, before)


class GradCheckTests(SimpleTestCase):
    def test_identity_conv_has_no_error(self):
        layer = Conv2d(1, 1, kernel=1, bias=False)
        layer.weight.value[...] = 1.0
        x = np.random.default_rng(40).standard_normal((1, 1, 4, 4))
        report = grad_check(layer, x, tolerance=1e-3, double=True)
        self.assertTrue(report.passed)
        self.assertLess(report.max_rel_error, 1e-8)

    def test_every_layer_type_over_seeded_cases(self):
        factories = {
            'conv': lambda rng: Conv2d(3, 4, kernel=3, dilation=int(rng.integers(1, 4)), rng=rng),
            'conv_strided': lambda rng: Conv2d(3, 2, kernel=3, stride=2, rng=rng),
            'batchnorm': lambda rng: BatchNorm2d(3),
            'relu': lambda rng: ReLU(),
            'sigmoid': lambda rng: Sigmoid(),
            'upsample': lambda rng: Upsample2x(),
            'pool': lambda rng: GlobalAvgPool(),
            'pool_broadcast': lambda rng: PoolBroadcastProbe(),
            'concat': lambda rng: ConcatProbe(),
        }
        for name, factory in factories.items():
            for seed in range(20):
                rng = np.random.default_rng(seed)
                layer = factory(rng)
                x = _away_from_zero(rng.standard_normal((2, 3, 6, 6)))
                report = grad_check(layer, x, tolerance=1e-3, seed=seed)
                self.assertTrue(report.passed, f'{name} seed={seed}: {report.message}')
                report = grad_check(layer, x, tolerance=1e-6, double=True, seed=seed)
                self.assertTrue(report.passed, f'{name} seed={seed} float64: {report.message}')

    def test_composite_block(self):
        rng = np.random.default_rng(41)
        block = Sequential([Conv2d(2, 3, kernel=3, dilation=2, rng=rng), BatchNorm2d(3), ReLU(), Upsample2x()])
        x = rng.standard_normal((2, 2, 6, 6))
        report = grad_check(block, x, tolerance=1e-3, seed=3)
        self.assertTrue(report.passed, report.message)

    def test_sign_flip_is_detected(self):
        layer = FlippedConv(2, 2, kernel=3, rng=np.random.default_rng(42))
        x = np.random.default_rng(43).standard_normal((1, 2, 5, 5))
        report = grad_check(layer, x, tolerance=1e-3, check_params=False)
        self.assertFalse(report.passed)
        self.assertGreater(report.max_rel_error, 1.0)

    def test_non_finite_gradient_fails_with_location(self):
        x = _away_from_zero(np.random.default_rng(44).standard_normal((1, 1, 3, 3)))
        report = grad_check(NaNBackward(), x)
        self.assertFalse(report.passed)
        self.assertEqual(report.worst, ('input', (0, 0, 0, 0)))

    def test_sampled_entries(self):
        layer = Conv2d(3, 2, kernel=3, rng=np.random.default_rng(45))
        x = np.random.default_rng(46).standard_normal((2, 3, 16, 16))
        report = grad_check(layer, x, tolerance=1e-3, max_entries=50)
        self.assertTrue(report.passed, report.message)
        self.assertLessEqual(report.checked, 50 * 3)


class PrecisionTests(SimpleTestCase):
    def test_float64_mode_scoped(self):
        with float64_mode():
            inner = Conv2d(1, 1)
        outer = Conv2d(1, 1)
        self.assertEqual(inner.weight.value.dtype, np.float64)
        self.assertEqual(outer.weight.value.dtype, np.float32)

    def test_check_finite_reports_location(self):
        x = np.zeros((1, 1, 2, 2))
        x[0, 0, 1, 0] = np.inf
        with self.assertRaisesRegex(NonFiniteError, r'\(0, 0, 1, 0\)'):
            check_finite(x, 'x')

    @override_settings(SCISEG_CHECK_FINITE=True)
    def test_debug_flag_checks_layer_outputs(self):
        layer = Conv2d(1, 1, kernel=1)
        with self.assertRaises(NonFiniteError):
            layer.forward(np.full((1, 1, 2, 2), np.nan, dtype=np.float32))

    @override_settings(SCISEG_CHECK_FINITE=True)
    def test_debug_flag_checks_every_layer_kind(self):
        bad = np.ones((2, 1, 2, 2), dtype=np.float32)
        bad[0, 0, 1, 1] = np.nan
        batchnorm = BatchNorm2d(1)
        batchnorm.eval()
        for layer in (batchnorm, ReLU(), Sigmoid(), Upsample2x(), GlobalAvgPool(), Sequential([ReLU()])):
            with self.subTest(layer=type(layer).__name__), self.assertRaises(NonFiniteError):
                layer.forward(bad)
        ReLU().forward(np.ones((1, 1, 2, 2), dtype=np.float32))

    def test_as_tensor_rank(self):
        with self.assertRaises(ValueError):
            as_tensor(np.zeros((3, 3)))
        self.assertEqual(as_tensor(np.zeros((1, 1, 2, 2), dtype=np.uint8)).dtype, np.float32)
