# -*- coding: utf-8 -*-

import json
import math
import tempfile
import unittest
from pathlib import Path
from unittest import mock

import numpy as np
from django.conf import settings
from django.test import SimpleTestCase

from datasets.exceptions import DataError, EmptyManifestError, WindowError
from datasets.tiling import SampleTile
from scinet.checkpoint import load_checkpoint, read_checkpoint
from scinet.config import preset
from scinet.model import build_model
from tensors.gradcheck import numerical_gradient, relative_error
from tensors.layers import Parameter, state_arrays
from tensors.ops import ShapeError

from .augment import apply_transform, augment, choose_transform, sample_chips
from .config import TrainConfig, TrainConfigError
from .losses import bce_dice_loss
from .optim import Adam, clip_grad_norm
from .schedule import lr_schedule, poly_lr
from .trainer import NonFiniteLossError, fit, make_batch, micro_iou


def _tile(seed, size=64, gsd=2, n_buildings=2, tile_id=None):
    rng = np.random.default_rng(seed)
    mask = np.zeros((size, size), dtype=np.uint8)
    side = max(4, size // 4)
    for _ in range(n_buildings):
        top, left = rng.integers(0, size - side, 2)
        h, w = rng.integers(side // 2, side + 1, 2)
        mask[top:top + h, left:left + w] = 1
    image = rng.integers(30, 90, (size, size, 3)).astype(np.uint8)
    image[mask == 1] = (210, 190, 170)
    return SampleTile(image=image, mask=mask, gsd=gsd, tile_id=tile_id or f'tile{seed}')


def _quick_config(**overrides):
    values = dict(epochs=2, batch_size=2, chip=32, lr0=1e-3, steps_per_epoch=2, deterministic=True, seed=3)
    values.update(overrides)
    return TrainConfig(**values)


class TrainConfigTests(SimpleTestCase):
    def test_defaults(self):
        config = TrainConfig()
        self.assertEqual((config.epochs, config.batch_size, config.chip), (50, 12, 512))
        self.assertEqual((config.lr0, config.poly_power), (1e-4, 0.9))
        self.assertEqual((config.bce_weight, config.dice_weight, config.augment_p), (0.5, 0.5, 0.8))
        self.assertIsNone(config.clip_grad_norm)

    def test_invalid(self):
        for bad in ({'chip': 500}, {'augment_p': 1.5}, {'bce_weight': 0, 'dice_weight': 0}, {'epochs': 0}):
            with self.subTest(bad=bad), self.assertRaises(TrainConfigError):
                TrainConfig(**bad)

    def test_from_dict(self):
        self.assertEqual(TrainConfig.from_dict({'epochs': 3}).epochs, 3)
        with self.assertRaisesRegex(TrainConfigError, 'momentum'):
            TrainConfig.from_dict({'momentum': 0.9})


class ScheduleTests(SimpleTestCase):
    def test_endpoints(self):
        config = TrainConfig()
        self.assertEqual(poly_lr(0, config), 1e-4)
        self.assertEqual(poly_lr(config.epochs, config), 0.0)

    def test_midpoint(self):
        self.assertAlmostEqual(poly_lr(25, TrainConfig()), 5.359e-5, delta=1e-8)

    def test_non_increasing(self):
        schedule = lr_schedule(TrainConfig()) + [poly_lr(50, TrainConfig())]
        self.assertTrue(all(a >= b for a, b in zip(schedule, schedule[1:])))

    def test_out_of_range(self):
        with self.assertRaises(ValueError):
            poly_lr(51, TrainConfig())


class LossTests(SimpleTestCase):
    def test_bce_at_half(self):
        target = (np.random.default_rng(0).random((2, 1, 8, 8)) > 0.5).astype(np.float32)
        result = bce_dice_loss(np.full_like(target, 0.5), target)
        self.assertAlmostEqual(result.bce, math.log(2), delta=1e-6)

    def test_perfect_prediction(self):
        target = (np.random.default_rng(1).random((2, 1, 16, 16)) > 0.7).astype(np.float32)
        self.assertLessEqual(bce_dice_loss(target.copy(), target).loss, 1e-3)

    def test_gradient_matches_finite_differences(self):
        for seed in range(20):
            rng = np.random.default_rng(seed)
            pred = rng.uniform(0.05, 0.95, (1, 1, 8, 8))
            target = (rng.random((1, 1, 8, 8)) > 0.5).astype(np.float64)
            analytic = bce_dice_loss(pred, target).grad
            numeric = numerical_gradient(lambda p: bce_dice_loss(p, target).loss, pred.copy())
            error = relative_error(analytic, numeric, float(np.abs(numeric).max()))
            self.assertLess(float(error.max()), 1e-4, msg=f'seed={seed}')

    def test_flip_invariance(self):
        rng = np.random.default_rng(2)
        pred = rng.uniform(0.01, 0.99, (2, 1, 8, 8))
        target = (rng.random((2, 1, 8, 8)) > 0.5).astype(np.float64)
        flipped = bce_dice_loss(pred[..., ::-1], target[..., ::-1]).loss
        self.assertAlmostEqual(bce_dice_loss(pred, target).loss, flipped, places=10)

    def test_weights(self):
        rng = np.random.default_rng(3)
        pred = rng.uniform(0.1, 0.9, (1, 1, 4, 4))
        target = (rng.random((1, 1, 4, 4)) > 0.5).astype(np.float64)
        only_bce = bce_dice_loss(pred, target, 1.0, 0.0)
        only_dice = bce_dice_loss(pred, target, 0.0, 1.0)
        self.assertAlmostEqual(only_bce.loss, only_bce.bce)
        self.assertAlmostEqual(only_dice.loss, only_dice.dice)

    def test_shape_mismatch(self):
        with self.assertRaises(ShapeError):
            bce_dice_loss(np.zeros((1, 1, 4, 4)), np.zeros((1, 1, 4, 5)))


class AugmentTests(SimpleTestCase):
    def test_hflip_is_involution(self):
        sample = _tile(0, size=16)
        twice = apply_transform(apply_transform(sample, 'hflip'), 'hflip')
        np.testing.assert_array_equal(twice.image, sample.image)
        np.testing.assert_array_equal(twice.mask, sample.mask)

    def test_hflip_moves_image_and_mask_together(self):
        mask = np.zeros((4, 6), dtype=np.uint8)
        mask[1, 0] = 1
        image = np.zeros((4, 6, 3), dtype=np.uint8)
        image[1, 0] = 255
        flipped = apply_transform(SampleTile(image=image, mask=mask, gsd=2), 'hflip')
        self.assertEqual(flipped.mask[1, 5], 1)
        self.assertEqual(flipped.mask.sum(), 1)
        np.testing.assert_array_equal(flipped.image[1, 5], [255, 255, 255])

    def test_rot180(self):
        sample = _tile(1, size=8)
        rotated = apply_transform(sample, 'rot180')
        np.testing.assert_array_equal(rotated.mask, np.rot90(sample.mask, 2))

    def test_augmentation_rate(self):
        rng = np.random.default_rng(0)
        draws = [choose_transform(rng, 0.8) for _ in range(10000)]
        rate = sum(d is not None for d in draws) / len(draws)
        self.assertGreaterEqual(rate, 0.78)
        self.assertLessEqual(rate, 0.82)
        self.assertEqual({d for d in draws if d}, {'hflip', 'vflip', 'rot180'})

    def test_zero_probability_is_identity(self):
        sample = _tile(2, size=8)
        self.assertIs(augment(sample, np.random.default_rng(0), p=0.0), sample)


class ChipTests(SimpleTestCase):
    def test_identity_crop(self):
        sample = _tile(3, size=32)
        chip = sample_chips(sample, 32, np.random.default_rng(0))
        np.testing.assert_array_equal(chip.image, sample.image)
        np.testing.assert_array_equal(chip.mask, sample.mask)

    def test_too_small(self):
        with self.assertRaises(WindowError):
            sample_chips(_tile(4, size=32), 64, np.random.default_rng(0))

    def test_corner_uniform(self):
        size, chip = 64, 32
        rows, cols = np.meshgrid(np.arange(size), np.arange(size), indexing='ij')
        image = np.stack([rows, cols, np.zeros_like(rows)], axis=-1).astype(np.uint8)
        sample = SampleTile(image=image, mask=np.zeros((size, size), dtype=np.uint8), gsd=2)
        rng = np.random.default_rng(7)
        n_draws = 6600
        tops = np.zeros(size - chip + 1)
        lefts = np.zeros(size - chip + 1)
        for _ in range(n_draws):
            cropped = sample_chips(sample, chip, rng)
            tops[cropped.image[0, 0, 0]] += 1
            lefts[cropped.image[0, 0, 1]] += 1
        expected = n_draws / len(tops)
        for counts in (tops, lefts):
            chi_square = float(np.sum((counts - expected) ** 2 / expected))
            # 32 个自由度，p=0.0001 的临界值约 70
            self.assertLess(chi_square, 70.0)

    def test_crop_never_adds_building_pixels(self):
        sample = _tile(5, size=64, n_buildings=4)
        rng = np.random.default_rng(0)
        for _ in range(20):
            self.assertLessEqual(int(sample_chips(sample, 32, rng).mask.sum()), int(sample.mask.sum()))


class OptimTests(SimpleTestCase):
    def test_zero_gradient_step(self):
        param = Parameter(np.arange(6, dtype=np.float32).reshape(2, 3))
        before = param.value.copy()
        Adam([('w', param)]).step(1e-3)
        np.testing.assert_array_equal(param.value, before)

    def test_first_step_moves_by_lr(self):
        param = Parameter(np.zeros(3, dtype=np.float64))
        param.grad = np.array([2.0, -0.5, 0.0])
        Adam([('w', param)]).step(0.01)
        np.testing.assert_allclose(param.value, [-0.01, 0.01, 0.0], atol=1e-9)

    def test_state_round_trip(self):
        a = Parameter(np.ones(4))
        b = Parameter(np.ones(4))
        first = Adam([('w', a)])
        a.grad = np.full(4, 0.3)
        first.step(0.1)
        second = Adam([('w', b)])
        second.load_state_dict(first.state_dict())
        b.value = a.value.copy()
        a.grad = b.grad = np.full(4, -0.2)
        first.step(0.1)
        second.step(0.1)
        np.testing.assert_array_equal(a.value, b.value)
        self.assertEqual(second.step_count, 2)
        self.assertTrue(all((v >= 0).all() for v in second.v.values()))

    def test_clip_grad_norm(self):
        param = Parameter(np.zeros(2))
        param.grad = np.array([3.0, 4.0])
        self.assertAlmostEqual(clip_grad_norm([param], 1.0), 5.0)
        np.testing.assert_allclose(param.grad, [0.6, 0.8], rtol=1e-9)


class FitTests(SimpleTestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)
        self.out = Path(self.tmp.name)
        self.train = [_tile(i, size=64) for i in range(4)]
        self.val = [_tile(100 + i, size=64) for i in range(2)]

    def test_batch_is_seeded(self):
        config = _quick_config()
        order = np.arange(len(self.train))
        x1, y1 = make_batch(self.train, order, config, epoch=1, step=0)
        x2, y2 = make_batch(self.train, order, config, epoch=1, step=0)
        np.testing.assert_array_equal(x1, x2)
        np.testing.assert_array_equal(y1, y2)
        self.assertEqual(x1.shape, (2, 3, 32, 32))
        self.assertEqual(y1.shape, (2, 1, 32, 32))

    def test_fixed_seed_gives_identical_logs(self):
        logs = []
        checkpoints = []
        for run, prefetch in enumerate((True, False)):
            out = self.out / f'run{run}'
            with self.assertLogs('training.trainer', 'INFO'):
                fit(build_model(preset('tiny'), seed=1), self.train, self.val, _quick_config(prefetch=prefetch), out)
            logs.append((out / 'epochs.jsonl').read_bytes())
            checkpoints.append((out / 'best.ckpt').read_bytes())
        self.assertEqual(logs[0], logs[1])
        self.assertEqual(checkpoints[0], checkpoints[1])
        records = [json.loads(line) for line in logs[0].decode().splitlines()]
        self.assertEqual([r['epoch'] for r in records], [1, 2])
        self.assertNotIn('wall_time', records[0])
        self.assertEqual(records[0]['lr'], 1e-3)

    def test_best_checkpoint_keeps_peak_epoch(self):
        scores = [0.1, 0.3, 0.9, 0.5, 0.2]
        snapshots = []

        def scripted(model, epoch):
            snapshots.append({k: v.copy() for k, v in state_arrays(model).items()})
            return scores[epoch - 1]

        model = build_model(preset('tiny'), seed=2)
        result = fit(model, self.train, [], _quick_config(epochs=5, steps_per_epoch=1), self.out, validate=scripted)
        self.assertEqual(result.best_epoch, 3)
        self.assertEqual(result.best_score, 0.9)
        self.assertEqual([r['best'] for r in result.history], [True, True, True, False, False])
        self.assertEqual(read_checkpoint(result.checkpoint_path).meta['epoch'], 3)
        restored = state_arrays(load_checkpoint(result.checkpoint_path))
        for name, value in snapshots[2].items():
            np.testing.assert_array_equal(restored[name], value, err_msg=name)
        self.assertFalse(np.array_equal(snapshots[2]['head.0.weight'], snapshots[4]['head.0.weight']))

    def test_non_finite_loss_dumps_and_aborts(self):
        model = build_model(preset('tiny'), seed=0)

        def broken(x):
            return np.full((x.shape[0], 1) + x.shape[2:], np.nan, dtype=np.float32)

        with mock.patch.object(model, 'forward', side_effect=broken), \
                self.assertLogs('training.trainer', 'ERROR'), \
                self.assertRaises(NonFiniteLossError) as ctx:
            fit(model, self.train, self.val, _quick_config(), self.out)
        dump = ctx.exception.dump_path
        self.assertEqual(dump.name, 'nonfinite_step1.npz')
        with np.load(dump) as arrays:
            self.assertEqual(set(arrays.files), {'inputs', 'targets', 'predictions'})
        info = json.loads(dump.with_suffix('.json').read_text(encoding='utf-8'))
        self.assertEqual((info['step'], info['epoch'], info['lr']), (1, 1, 1e-3))

    def test_rejects_empty_and_overlapping_sets(self):
        model = build_model(preset('tiny'), seed=0)
        with self.assertRaises(EmptyManifestError):
            fit(model, [], self.val, _quick_config(), self.out)
        with self.assertRaises(DataError):
            fit(model, self.train, self.train[:1], _quick_config(), self.out)


@unittest.skipUnless(getattr(settings, 'SCISEG_SLOW_TESTS', False), '设置 SCISEG_SLOW_TESTS=1 运行')
class OverfitTests(SimpleTestCase):
    def test_tiny_model_memorizes_eight_tiles(self):
        tiles = [_tile(i, size=256, gsd=8, n_buildings=3) for i in range(8)]
        config = TrainConfig(epochs=30, steps_per_epoch=10, batch_size=4, chip=256, lr0=5e-3,
                             augment_p=0.0, deterministic=True, seed=0)
        model = build_model(preset('tiny'), seed=0)
        with tempfile.TemporaryDirectory() as tmp:
            result = fit(model, tiles, [], config, tmp, validate=lambda m, epoch: micro_iou(m, tiles))
        self.assertLessEqual(result.steps, 300)
        self.assertLessEqual(result.history[config.epochs // 4]['train_loss'], 0.5 * result.history[0]['train_loss'])
        self.assertGreaterEqual(micro_iou(model, tiles), 0.95)
