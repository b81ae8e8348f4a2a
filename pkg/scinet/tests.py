# -*- coding: utf-8 -*-

import tempfile
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase

from receptive.calculus import analyze_chain
from receptive.report import model_chain
from tensors import ops
from tensors.layers import Conv2d, parameter_count, state_arrays

from .blocks import ASPP, DecoderBlock, DenseASPP
from .checkpoint import (
    CheckpointError,
    CheckpointIntegrityError,
    CheckpointMismatchError,
    load_checkpoint,
    read_checkpoint,
    save_checkpoint,
)
from .config import PRESETS, ModelConfig, ModelConfigError, preset
from .model import (
    aspp_forward,
    build_model,
    decoder_forward,
    dense_aspp_forward,
    describe,
    encoder_forward,
    measure_output_stride,
    predict,
)


def _image(size, n=1, seed=0):
    return np.random.default_rng(seed).standard_normal((n, 3, size, size)).astype(np.float32)


class ModelConfigTests(SimpleTestCase):
    def test_presets(self):
        self.assertEqual(preset('full').stage_widths[-1], 888)
        self.assertEqual(preset('baseline').pyramid, 'none')
        self.assertEqual(preset('baseline').output_stride, 32)
        self.assertEqual(preset('desk'), ModelConfig())
        self.assertEqual(set(PRESETS), {'tiny', 'desk', 'full', 'baseline'})
        self.assertEqual(preset('paper'), preset('full'))
        self.assertEqual(ModelConfig.from_dict({'preset': 'paper'}).digest(), preset('full').digest())

    def test_from_dict_overrides_preset(self):
        config = ModelConfig.from_dict({'preset': 'tiny', 'pyramid': 'aspp'})
        self.assertEqual(config.stage_widths, (4, 8, 8, 16, 16))
        self.assertEqual(config.pyramid, 'aspp')

    def test_from_dict_rejects_unknown_keys(self):
        with self.assertRaisesRegex(ModelConfigError, 'depth'):
            ModelConfig.from_dict({'depth': 3})

    def test_invalid_values(self):
        with self.assertRaises(ModelConfigError):
            preset('tiny', pyramid='psp')
        with self.assertRaises(ModelConfigError):
            preset('tiny', stage_widths=(4, 8, 8, 16))
        with self.assertRaises(ModelConfigError):
            preset('huge')

    def test_digest(self):
        self.assertEqual(preset('tiny').digest(), ModelConfig.from_dict(preset('tiny').to_dict()).digest())
        self.assertNotEqual(preset('tiny').digest(), preset('tiny', dense_rates=(1, 2, 4, 8)).digest())

    def test_dense_channel_arithmetic(self):
        config = preset('full')
        self.assertEqual(config.dense_branch_inputs(), [888, 1144, 1400, 1656])
        self.assertEqual(config.dense_concat_channels(), 1912)


class EncoderTests(SimpleTestCase):
    def test_full_dilated_stage5_at_512(self):
        model = build_model(preset('full'), seed=0)
        features = encoder_forward(model, _image(512))
        self.assertEqual([f.shape[2] for f in features], [256, 128, 64, 32, 32])
        self.assertEqual(features[4].shape, (1, 888, 32, 32))

    def test_full_strided_stage5_at_512(self):
        model = build_model(preset('full', stage5_mode='strided'), seed=0)
        self.assertEqual(encoder_forward(model, _image(512))[4].shape[2:], (16, 16))

    def test_tiny_ratios(self):
        features = encoder_forward(build_model(preset('tiny'), seed=0), _image(64))
        self.assertEqual([64 // f.shape[2] for f in features], [2, 4, 8, 16, 16])
        self.assertEqual([f.shape[1] for f in features], [4, 8, 8, 16, 16])

    def test_indivisible_input(self):
        model = build_model(preset('tiny'), seed=0)
        with self.assertRaisesRegex(ops.ShapeError, '32'):
            encoder_forward(model, _image(48))

    def test_analyzer_matches_measured_stride(self):
        configs = [preset(name) for name in PRESETS if name != 'full']
        configs += [preset('tiny', pyramid='aspp'), preset('tiny', stage5_mode='strided')]
        for config in configs:
            predicted = analyze_chain(config.encoder_specs())[-1].output_stride
            self.assertEqual(predicted, measure_output_stride(config))
            self.assertEqual(predicted, config.output_stride)

    def test_pyramid_chain_keeps_stride(self):
        config = preset('tiny')
        self.assertEqual(analyze_chain(model_chain(config))[-1].output_stride, 16)


class PyramidTests(SimpleTestCase):
    def test_full_dense_channels(self):
        model = build_model(preset('full'), seed=0)
        stage5 = np.random.default_rng(1).standard_normal((1, 888, 8, 8)).astype(np.float32)
        out = dense_aspp_forward(model, stage5)
        self.assertEqual(model.pyramid.branch_inputs, [888, 1144, 1400, 1656])
        self.assertEqual(model.pyramid.concat_channels, 1912)
        self.assertEqual(out.shape, (1, 256, 8, 8))

    def test_single_rate_dense(self):
        pyramid = DenseASPP(8, (3,), 4, 6, rng=np.random.default_rng(0))
        out = pyramid.forward(np.ones((1, 8, 8, 8), dtype=np.float32))
        self.assertEqual(pyramid.concat_channels, 12)
        self.assertEqual(out.shape, (1, 6, 8, 8))

    def test_parallel_aspp_shapes(self):
        model = build_model(preset('tiny', pyramid='aspp'), seed=0)
        out = aspp_forward(model, np.ones((2, 16, 4, 4), dtype=np.float32))
        self.assertEqual(model.pyramid.concat_channels, 5 * 4)
        self.assertEqual(out.shape, (2, 16, 4, 4))

    def test_wrong_pyramid_kind(self):
        with self.assertRaises(ModelConfigError):
            aspp_forward(build_model(preset('tiny'), seed=0), np.ones((1, 16, 4, 4), dtype=np.float32))

    def test_channel_mismatch(self):
        model = build_model(preset('tiny'), seed=0)
        with self.assertRaisesRegex(ops.ShapeError, '8'):
            dense_aspp_forward(model, np.ones((1, 8, 4, 4), dtype=np.float32))

    def test_parameter_count_independent_of_rates(self):
        a = DenseASPP(16, (3, 6, 12, 18), 4, 16, rng=np.random.default_rng(0))
        b = DenseASPP(16, (1, 2, 4, 8), 4, 16, rng=np.random.default_rng(0))
        self.assertEqual(parameter_count(a), parameter_count(b))
        reduce = sum((16 + 4 * i) * 4 + 2 * 4 for i in range(4))
        dilated = 4 * (4 * 4 * 9 + 2 * 4)
        project = 32 * 16 + 2 * 16
        self.assertEqual(parameter_count(a), reduce + dilated + project)

    def test_backward_shape(self):
        pyramid = DenseASPP(6, (1, 2), 3, 5, rng=np.random.default_rng(0))
        x = np.random.default_rng(1).standard_normal((2, 6, 5, 5)).astype(np.float32)
        out = pyramid.forward(x)
        self.assertEqual(pyramid.backward(np.ones_like(out)).shape, x.shape)


class DecoderTests(SimpleTestCase):
    def test_full_resolution_probability_map(self):
        model = build_model(preset('tiny'), seed=0)
        out = predict(model, _image(512))
        self.assertEqual(out.shape, (1, 1, 512, 512))
        self.assertTrue(((out >= 0) & (out <= 1)).all())
        self.assertTrue(model.training)

    def test_first_block_without_upsample_when_dilated(self):
        model = build_model(preset('tiny'), seed=0)
        predict(model, _image(64))
        self.assertFalse(model.decoder[0].upsampled_first)
        self.assertFalse(any(block.upsampled_first for block in model.decoder))

    def test_strided_first_block_upsamples(self):
        model = build_model(preset('baseline', **PRESETS['tiny']), seed=0)
        out = predict(model, _image(64))
        self.assertTrue(model.decoder[0].upsampled_first)
        self.assertEqual(out.shape, (1, 1, 64, 64))

    def test_decoder_forward_from_parts(self):
        model = build_model(preset('tiny'), seed=0).eval()
        features = encoder_forward(model, _image(64))
        out = decoder_forward(model, dense_aspp_forward(model, features[4]), features)
        np.testing.assert_array_equal(out, model.forward(_image(64)))

    def test_resolution_mismatch(self):
        block = DecoderBlock(4, 4, 4, rng=np.random.default_rng(0))
        with self.assertRaises(ops.ShapeError):
            block.forward(np.ones((1, 4, 3, 3), dtype=np.float32), np.ones((1, 4, 8, 8), dtype=np.float32))


class ModelTests(SimpleTestCase):
    def test_same_seed_same_bytes(self):
        a = state_arrays(build_model(preset('tiny'), seed=7))
        b = state_arrays(build_model(preset('tiny'), seed=7))
        self.assertEqual(list(a), list(b))
        for name in a:
            self.assertEqual(a[name].tobytes(), b[name].tobytes(), name)
        c = state_arrays(build_model(preset('tiny'), seed=8))
        self.assertNotEqual(a['encoder.0.0.0.weight'].tobytes(), c['encoder.0.0.0.weight'].tobytes())

    def test_parameter_count_is_function_of_config(self):
        self.assertEqual(parameter_count(build_model(preset('tiny'), 1)), parameter_count(build_model(preset('tiny'), 2)))
        summary = describe(build_model(preset('tiny'), 0))
        self.assertEqual(summary['parameters'], sum(summary['encoder']) + summary['pyramid_parameters']
                         + sum(summary['decoder']) + summary['head'])

    def test_every_parameter_receives_gradient(self):
        model = build_model(preset('tiny'), seed=0)
        out = model.forward(_image(64, n=2))
        model.zero_grad()
        grad = model.backward(np.random.default_rng(3).standard_normal(out.shape).astype(np.float32))
        self.assertEqual(grad.shape, (2, 3, 64, 64))
        dead = [name for name, param in model.named_parameters() if not np.any(param.grad)]
        self.assertEqual(dead, [])

    def test_horizontal_flip_equivariance_of_stride1_parts(self):
        rng = np.random.default_rng(0)
        pyramid = DenseASPP(6, (1, 2), 3, 5, rng=rng)
        block = DecoderBlock(5, 4, 4, rng=rng)
        for module in (pyramid, block):
            for layer in module.modules():
                if isinstance(layer, Conv2d):
                    w = layer.weight.value
                    layer.weight.value = ((w + w[..., ::-1]) / 2).astype(w.dtype)
            module.eval()
        x = rng.standard_normal((1, 6, 8, 8)).astype(np.float32)
        skip = rng.standard_normal((1, 4, 8, 8)).astype(np.float32)

        def run(a, b):
            return block.forward(pyramid.forward(a), b)

        plain = run(x, skip)
        flipped = run(np.ascontiguousarray(x[..., ::-1]), np.ascontiguousarray(skip[..., ::-1]))
        np.testing.assert_allclose(flipped[..., ::-1], plain, atol=1e-4)


class CheckpointTests(SimpleTestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.path = Path(self.tmp.name) / 'model.ckpt'

    def tearDown(self):
        self.tmp.cleanup()

    def test_round_trip_is_bitwise(self):
        model = build_model(preset('tiny'), seed=3)
        model.forward(_image(64, n=2))  # 更新 BN 统计量
        save_checkpoint(model, self.path, meta={'best_metric': 0.5, 'epoch': 3})
        loaded = load_checkpoint(self.path, preset('tiny'))
        image = _image(64, seed=9)
        self.assertEqual(predict(model, image).tobytes(), predict(loaded, image).tobytes())
        record = read_checkpoint(self.path)
        self.assertEqual(record.meta['epoch'], 3)
        self.assertFalse(record.meta['optimizer'])
        self.assertEqual(record.config, preset('tiny'))

    def test_load_without_config_uses_stored_one(self):
        save_checkpoint(build_model(preset('tiny', pyramid='aspp'), seed=0), self.path)
        self.assertEqual(load_checkpoint(self.path).config.pyramid, 'aspp')

    def test_optimizer_state(self):
        model = build_model(preset('tiny'), seed=0)
        state = {'m.head.0.bias': np.full(1, 0.25, dtype=np.float32), 'step': np.array([4], dtype=np.int64)}
        save_checkpoint(model, self.path, optimizer_state=state)
        record = read_checkpoint(self.path)
        self.assertTrue(record.meta['optimizer'])
        np.testing.assert_array_equal(record.optimizer_arrays['step'], [4])
        self.assertNotIn('optimizer.step', record.model_arrays)

    def test_altered_width_names_first_parameter(self):
        save_checkpoint(build_model(preset('tiny'), seed=0), self.path)
        with self.assertRaisesRegex(CheckpointMismatchError, r'encoder\.4\.0\.0\.weight'):
            load_checkpoint(self.path, preset('tiny', stage_widths=(4, 8, 8, 16, 32)))

    def test_same_shapes_different_config(self):
        save_checkpoint(build_model(preset('tiny'), seed=0), self.path)
        with self.assertRaisesRegex(CheckpointMismatchError, '摘要'):
            load_checkpoint(self.path, preset('tiny', dense_rates=(1, 2, 4, 8)))

    def test_truncated_file(self):
        save_checkpoint(build_model(preset('tiny'), seed=0), self.path)
        data = self.path.read_bytes()
        self.path.write_bytes(data[:len(data) // 2])
        with self.assertRaises(CheckpointIntegrityError):
            load_checkpoint(self.path)

    def test_corrupted_payload(self):
        save_checkpoint(build_model(preset('tiny'), seed=0), self.path)
        data = bytearray(self.path.read_bytes())
        data[-100] ^= 0xFF
        self.path.write_bytes(bytes(data))
        with self.assertRaises(CheckpointIntegrityError):
            read_checkpoint(self.path)

    def test_not_a_checkpoint(self):
        self.path.write_bytes(b'hello world' * 10)
        with self.assertRaises(CheckpointError):
            read_checkpoint(self.path)
        with self.assertRaises(CheckpointError):
            read_checkpoint(Path(self.tmp.name) / 'missing.ckpt')

    def test_save_leaves_no_temporary_files(self):
        save_checkpoint(build_model(preset('tiny'), seed=0), self.path)
        self.assertEqual([p.name for p in Path(self.tmp.name).iterdir()], ['model.ckpt'])
