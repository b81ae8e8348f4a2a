# -*- coding: utf-8 -*-

import json
import tempfile
import unittest
from io import StringIO
from pathlib import Path
from unittest import mock

import numpy as np
from django.conf import settings
from django.core.management import call_command
from django.core.management.base import CommandError
from django.test import SimpleTestCase

from datasets.config import GSD_CHOICES, DataConfig
from datasets.exceptions import DataError, MissingFileError
from datasets.manifest import Manifest, ManifestRecord, manifest_digest, read_manifest, write_manifest
from datasets.storage import read_png, save_tile, write_png
from datasets.synthesis import synthesize
from datasets.tiling import SampleTile
from metrics.tables import EvaluationReport
from scinet.checkpoint import CheckpointMismatchError
from scinet.config import preset
from scinet.model import build_model
from training.config import TrainConfig
from training.trainer import NonFiniteLossError, fit, micro_iou

from .commands import EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC, exit_code_for
from .experiments import STUDY_GSD, ScaleStudy, gallery_strip, run_scale_study
from .management.commands.infer import pad_to_multiple
from .runconfig import ConfigError, apply_overrides, build_run_config, load_run_config

SMALL_DATA = {'scenes': 2, 'tile_px': 256, 'gsds': [8, 10, 20], 'folds': 2}
QUICK_TRAIN = {'epochs': 1, 'steps_per_epoch': 1, 'batch_size': 2, 'chip': 32, 'lr0': 1e-3}


def _run(*args, **options):
    out = StringIO()
    call_command(*args, stdout=out, stderr=StringIO(), **options)
    return out.getvalue()


def _write_json(path, data):
    path = Path(path)
    path.write_text(json.dumps(data), encoding='utf-8')
    return str(path)


class RunConfigTests(SimpleTestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)
        self.dir = Path(self.tmp.name)

    def test_defaults(self):
        config = build_run_config({})
        self.assertEqual(config.model.pyramid, 'dense-aspp')
        self.assertEqual(config.train.epochs, 50)
        self.assertEqual(config.data.tile_px, 1024)
        self.assertEqual(config.metrics.eps, 1e-4)
        self.assertFalse(config.model_given)

    def test_precedence_flag_over_file_over_default(self):
        path = _write_json(self.dir / 'run.json', {'seed': 4, 'train': {'epochs': 7, 'batch_size': 3}})
        config = load_run_config(path, {'train.epochs': 2, 'train.chip': None})
        self.assertEqual(config.train.epochs, 2)
        self.assertEqual(config.train.batch_size, 3)
        self.assertEqual(config.train.chip, 512)
        self.assertEqual(config.seed, 4)

    def test_seed_propagates_to_training(self):
        self.assertEqual(build_run_config({'seed': 9}).train.seed, 9)
        self.assertEqual(build_run_config({'seed': 9, 'train': {'seed': 1}}).train.seed, 1)

    def test_seed_flag_beats_file_train_seed(self):
        path = _write_json(self.dir / 'run.json', {'seed': 1, 'train': {'seed': 1}})
        config = load_run_config(path, {'seed': 7})
        self.assertEqual((config.seed, config.train.seed), (7, 7))
        self.assertEqual(load_run_config(path, {'seed': None}).train.seed, 1)
        self.assertEqual(load_run_config(path, {'seed': 7, 'train.seed': 3}).train.seed, 3)

    def test_model_preset_with_overrides(self):
        config = build_run_config(apply_overrides({'model': {'preset': 'tiny'}}, {'model.pyramid': 'aspp'}))
        self.assertEqual(config.model.stage_widths, (4, 8, 8, 16, 16))
        self.assertEqual(config.model.pyramid, 'aspp')
        self.assertTrue(config.model_given)

    def test_errors_name_the_section(self):
        with self.assertRaisesRegex(ConfigError, 'optimizer'):
            build_run_config({'optimizer': {}})
        with self.assertRaisesRegex(ConfigError, r'\[train\]'):
            build_run_config({'train': {'chip': 100}})
        with self.assertRaisesRegex(ConfigError, r'\[data\]'):
            build_run_config({'data': {'gsds': [9]}})
        with self.assertRaisesRegex(ConfigError, r'\[model\]'):
            build_run_config({'model': {'pyramid': 'psp'}})

    def test_bad_file(self):
        bad = self.dir / 'bad.json'
        bad.write_text('{"seed": ', encoding='utf-8')
        with self.assertRaises(ConfigError):
            load_run_config(bad)
        with self.assertRaises(ConfigError):
            load_run_config(self.dir / 'missing.json')

    def test_digest_is_stable(self):
        self.assertEqual(build_run_config({'seed': 1}).digest(), build_run_config({'seed': 1}).digest())
        self.assertNotEqual(build_run_config({'seed': 1}).digest(), build_run_config({'seed': 2}).digest())


class ExitCodeTests(SimpleTestCase):
    def test_mapping(self):
        self.assertEqual(exit_code_for(ConfigError('x')), EXIT_CONFIG)
        self.assertEqual(exit_code_for(MissingFileError('x')), EXIT_DATA)
        self.assertEqual(exit_code_for(CheckpointMismatchError('x')), EXIT_DATA)
        self.assertEqual(exit_code_for(NonFiniteLossError('x')), EXIT_NUMERIC)

    def test_usage_error(self):
        with self.assertRaises(CommandError) as ctx:
            _run('rf_report', '--bogus')
        self.assertEqual(ctx.exception.returncode, EXIT_CONFIG)

    def test_missing_manifest_is_config_error(self):
        with tempfile.TemporaryDirectory() as tmp, self.assertRaises(CommandError) as ctx:
            _run('train', out=tmp)
        self.assertEqual(ctx.exception.returncode, EXIT_CONFIG)

    def test_missing_checkpoint_is_data_error(self):
        with tempfile.TemporaryDirectory() as tmp, self.assertRaises(CommandError) as ctx:
            _run('infer', checkpoint=str(Path(tmp) / 'none.ckpt'), image=str(Path(tmp) / 'x.png'), out=tmp)
        self.assertEqual(ctx.exception.returncode, EXIT_DATA)


class RfReportCommandTests(SimpleTestCase):
    def test_full_preset(self):
        text = _run('rf_report', preset='full')
        self.assertIn('max RF 79, combinations 16', text)
        self.assertIn('aspp rates (8, 12, 18): kernels 17 25 37, max RF 37', text)
        self.assertIn('output stride 16', text)
        self.assertIn('cross-check: analyzer stride 16 == measured stride 16 OK', text)

    def test_paper_alias_matches_full(self):
        self.assertEqual(_run('rf_report', preset='paper', no_measure=True),
                         _run('rf_report', preset='full', no_measure=True))

    def test_baseline_stride(self):
        text = _run('rf_report', preset='baseline', no_measure=True)
        self.assertIn('output stride 32', text)
        self.assertIn('cross-check: not measured', text)

    def test_json_output(self):
        with tempfile.TemporaryDirectory() as tmp:
            _run('rf_report', preset='tiny', json=True, out=tmp)
            report = json.loads((Path(tmp) / 'rf_report.json').read_text(encoding='utf-8'))
        self.assertEqual(report['dense']['max_rf'], 79)
        self.assertTrue(report['stride_check'])


class PipelineCommandTests(SimpleTestCase):
    """synth -> train -> eval -> infer，在一个小数据集上走通"""

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.tmp = tempfile.TemporaryDirectory()
        cls.root = Path(cls.tmp.name)
        cls.config = _write_json(cls.root / 'run.json', {
            'seed': 5,
            'model': {'preset': 'tiny'},
            'train': QUICK_TRAIN,
            'data': SMALL_DATA,
        })
        cls.data_dir = cls.root / 'data'
        cls.synth_output = _run('synth', config=cls.config, out=str(cls.data_dir))
        cls.manifest = cls.data_dir / 'manifest.jsonl'
        cls.train_dir = cls.root / 'train'
        _run('train', config=cls.config, manifest=str(cls.manifest), out=str(cls.train_dir), deterministic=True)
        cls.checkpoint = cls.train_dir / 'best.ckpt'

    @classmethod
    def tearDownClass(cls):
        cls.tmp.cleanup()
        super().tearDownClass()

    def test_synth_manifest(self):
        manifest = read_manifest(self.manifest)
        self.assertEqual(manifest.gsd_counts(), {8: 8, 10: 8, 20: 2})
        self.assertEqual(manifest.folds, 2)
        self.assertIn('6 个基础栅格', self.synth_output)
        self.assertTrue((self.data_dir / 'resolution_histogram.csv').is_file())

    def test_synth_refuses_non_empty_dir_and_is_idempotent(self):
        with self.assertRaises(CommandError) as ctx:
            _run('synth', config=self.config, out=str(self.data_dir))
        self.assertEqual(ctx.exception.returncode, EXIT_CONFIG)
        other = self.root / 'data_again'
        _run('synth', config=self.config, out=str(other))
        self.assertEqual(manifest_digest(other / 'manifest.jsonl'), manifest_digest(self.manifest))
        _run('synth', config=self.config, out=str(other), force=True)
        self.assertEqual(manifest_digest(other / 'manifest.jsonl'), manifest_digest(self.manifest))

    def test_train_outputs(self):
        self.assertTrue(self.checkpoint.is_file())
        records = (self.train_dir / 'epochs.jsonl').read_text(encoding='utf-8').splitlines()
        self.assertEqual(len(records), 1)
        self.assertEqual(set(json.loads(records[0])), {'epoch', 'lr', 'train_loss', 'val_micro_iou', 'best'})
        saved = json.loads((self.train_dir / 'run_config.json').read_text(encoding='utf-8'))
        self.assertEqual(saved['train']['seed'], 5)

    def test_train_is_reproducible(self):
        again = self.root / 'train_again'
        _run('train', config=self.config, manifest=str(self.manifest), out=str(again), deterministic=True)
        self.assertEqual((again / 'epochs.jsonl').read_bytes(), (self.train_dir / 'epochs.jsonl').read_bytes())
        self.assertEqual((again / 'best.ckpt').read_bytes(), self.checkpoint.read_bytes())

    def test_seed_flag_reaches_training(self):
        config = _write_json(self.root / 'seeded.json', {
            'seed': 5,
            'model': {'preset': 'tiny'},
            'train': dict(QUICK_TRAIN, seed=5),
            'data': SMALL_DATA,
        })
        out = self.root / 'train_seed11'
        _run('train', config=config, manifest=str(self.manifest), out=str(out), seed=11, deterministic=True)
        saved = json.loads((out / 'run_config.json').read_text(encoding='utf-8'))
        self.assertEqual((saved['seed'], saved['train']['seed']), (11, 11))

    def test_non_finite_loss_exit_code(self):
        error = NonFiniteLossError('第 1 步损失为 nan')
        with mock.patch('pipeline.management.commands.train.fit', side_effect=error), \
                self.assertRaises(CommandError) as ctx:
            _run('train', config=self.config, manifest=str(self.manifest), out=str(self.root / 'nan'))
        self.assertEqual(ctx.exception.returncode, EXIT_NUMERIC)

    def test_eval_headline_table(self):
        out = self.root / 'eval'
        ckpt_before = self.checkpoint.read_bytes()
        manifest_before = manifest_digest(self.manifest)
        text = _run('eval', config=self.config, manifest=str(self.manifest), checkpoint=[str(self.checkpoint)],
                    out=str(out), folds='all', gallery=1)
        self.assertEqual(text.splitlines()[0].split(), ['Model', 'micro-IoU', 'micro-F1', 'macro-IoU', 'macro-F1'])
        scores = json.loads((out / 'scores.json').read_text(encoding='utf-8'))
        self.assertEqual(set(scores[0]['overall']), {'micro_iou', 'micro_f1', 'macro_iou', 'macro_f1'})
        self.assertEqual(set(scores[0]['per_resolution']), {'8', '10', '20'})
        self.assertEqual(len(list((out / 'gallery' / 'best').glob('*.png'))), 3)
        self.assertEqual(self.checkpoint.read_bytes(), ckpt_before)
        self.assertEqual(manifest_digest(self.manifest), manifest_before)

    def test_eval_config_mismatch(self):
        config = _write_json(self.root / 'desk.json', {'model': {'preset': 'desk'}, 'data': SMALL_DATA})
        with self.assertRaises(CommandError) as ctx:
            _run('eval', config=config, manifest=str(self.manifest), checkpoint=[str(self.checkpoint)],
                 out=str(self.root / 'eval_mismatch'))
        self.assertEqual(ctx.exception.returncode, EXIT_DATA)

    def test_infer_writes_full_size_mask(self):
        out = self.root / 'infer'
        image = np.random.default_rng(0).integers(0, 256, (50, 70, 3)).astype(np.uint8)
        write_png(image, out / 'scene.png')
        _run('infer', checkpoint=str(self.checkpoint), image=str(out / 'scene.png'), out=str(out),
             probabilities=True)
        mask = read_png(out / 'scene_mask.png', 'L')
        self.assertEqual(mask.shape, (50, 70))
        self.assertLessEqual(int(mask.max()), 1)
        self.assertEqual(read_png(out / 'scene_prob.png', 'L').shape, (50, 70))

    def test_scale_study_writes_tables(self):
        out = self.root / 'study'
        text = _run('scale_study', config=self.config, manifest=str(self.manifest), out=str(out), seeds=1)
        self.assertIn('seed', text)
        study = json.loads((out / 'scale_study.json').read_text(encoding='utf-8'))
        self.assertEqual(study['seeds'], [5])
        self.assertTrue((out / 'seed5' / 'per_resolution_micro_iou.csv').is_file())
        self.assertTrue((out / 'seed5' / 'baseline' / 'best.ckpt').is_file())


class HelperTests(SimpleTestCase):
    def test_pad_to_multiple(self):
        padded = pad_to_multiple(np.zeros((50, 64, 3), dtype=np.uint8))
        self.assertEqual(padded.shape, (64, 64, 3))

    def test_gallery_strip(self):
        sample = SampleTile(image=np.zeros((4, 5, 3), dtype=np.uint8), mask=np.eye(4, 5, dtype=np.uint8), gsd=2)
        strip = gallery_strip(sample, np.ones((4, 5)), gap=2)
        self.assertEqual(strip.shape, (4, 19, 3))
        self.assertEqual(int(strip[0, 7, 0]), 255)
        self.assertEqual(int(strip[0, 8, 0]), 0)
        self.assertTrue((strip[:, 14:] == 255).all())

    def test_scale_study_margins(self):
        def report(name, score):
            return EvaluationReport(name, {}, {2: {'micro_iou': score}, 8: {'micro_iou': 0.5}})

        study = ScaleStudy(seeds=[0, 1, 2], reports={
            0: [report('scinet', 0.70), report('baseline', 0.60)],
            1: [report('scinet', 0.61), report('baseline', 0.60)],
            2: [report('scinet', 0.80), report('baseline', 0.75)],
        })
        self.assertAlmostEqual(study.margins()[0], 0.10)
        self.assertEqual(study.wins(), 2)

    def test_data_error_is_runtime_error(self):
        self.assertTrue(issubclass(DataError, RuntimeError))


def _building_tile(seed, size=256, gsd=8, n_buildings=3):
    """噪声背景上的矩形建筑；n_buildings=0 时为纯背景"""
    rng = np.random.default_rng(seed)
    mask = np.zeros((size, size), dtype=np.uint8)
    side = size // 4
    for _ in range(n_buildings):
        top, left = rng.integers(0, size - side, 2)
        h, w = rng.integers(side // 2, side + 1, 2)
        mask[top:top + h, left:left + w] = 1
    image = rng.integers(30, 90, (size, size, 3)).astype(np.uint8)
    image[mask == 1] = (210, 190, 170)
    return SampleTile(image=image, mask=mask, gsd=gsd, tile_id=f'overfit{seed:02d}_{gsd}cm_0_0',
                      scene=f'overfit{seed:02d}', fold=0)


@unittest.skipUnless(getattr(settings, 'SCISEG_SLOW_TESTS', False), '设置 SCISEG_SLOW_TESTS=1 运行')
class OverfitCommandTests(SimpleTestCase):
    """8 个 tile 过拟合后，用 eval / infer 命令检查 checkpoint"""

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.tmp = tempfile.TemporaryDirectory()
        cls.root = Path(cls.tmp.name)
        tiles = [_building_tile(i) for i in range(8)]
        records = []
        for sample in tiles:
            image_path, mask_path = save_tile(sample, cls.root / 'data')
            records.append(ManifestRecord(tile_id=sample.tile_id, image=image_path, mask=mask_path,
                                          gsd=sample.gsd, scene=sample.scene, fold=0))
        cls.manifest = write_manifest(Manifest(records, folds=2), cls.root / 'data' / 'manifest.jsonl')
        config = TrainConfig(epochs=30, steps_per_epoch=10, batch_size=4, chip=256, lr0=5e-3,
                             augment_p=0.0, deterministic=True, seed=0)
        model = build_model(preset('tiny'), seed=0)
        cls.result = fit(model, tiles, [], config, cls.root / 'train',
                         validate=lambda m, epoch: micro_iou(m, tiles))

    @classmethod
    def tearDownClass(cls):
        cls.tmp.cleanup()
        super().tearDownClass()

    def test_eval_on_train_fold(self):
        out = self.root / 'eval'
        _run('eval', manifest=str(self.manifest), checkpoint=[str(self.result.checkpoint_path)],
             out=str(out), folds='0')
        scores = json.loads((out / 'scores.json').read_text(encoding='utf-8'))
        self.assertGreaterEqual(scores[0]['overall']['micro_iou'], 0.95)

    def test_infer_on_background_tile(self):
        out = self.root / 'infer'
        background = _building_tile(100, n_buildings=0)
        write_png(background.image, out / 'empty.png')
        _run('infer', checkpoint=str(self.result.checkpoint_path), image=str(out / 'empty.png'), out=str(out))
        mask = read_png(out / 'empty_mask.png', 'L')
        self.assertEqual(mask.shape, (256, 256))
        self.assertLess(float(mask.mean()), 0.01)


@unittest.skipUnless(getattr(settings, 'SCISEG_SLOW_TESTS', False), '设置 SCISEG_SLOW_TESTS=1 运行')
class ScaleStudyTests(SimpleTestCase):
    """相同预算下 Sci-Net 在 2 cm/px 类上领先无金字塔基线"""

    def test_scinet_leads_on_finest_resolution(self):
        data = DataConfig(scenes=4, tile_px=256, folds=10)
        run_config = build_run_config({
            'seed': 0,
            'model': {'preset': 'tiny'},
            'train': {'epochs': 10, 'steps_per_epoch': 20, 'batch_size': 4, 'chip': 256, 'lr0': 5e-3},
            'data': data.to_dict(),
        })
        with tempfile.TemporaryDirectory() as tmp:
            manifest = synthesize(Path(tmp) / 'data', data, seed=0)
            self.assertGreaterEqual(len(manifest), 500)
            self.assertEqual(set(manifest.gsd_counts()), set(GSD_CHOICES))
            study = run_scale_study(run_config, manifest, Path(tmp) / 'study', seeds=[0, 1, 2])
            self.assertTrue((Path(tmp) / 'study' / 'seed0' / 'per_resolution_micro_iou.csv').is_file())
        self.assertEqual(len(study.margins(STUDY_GSD)), 3)
        self.assertGreaterEqual(study.wins(), 2)
