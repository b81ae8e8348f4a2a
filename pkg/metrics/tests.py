# -*- coding: utf-8 -*-

import csv
import json
import tempfile
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase

from .scoring import ConfusionCounts, MetricConfig, MetricError, aggregate, confusion, f1, headline_scores, iou
from .tables import build_report, render_score_table, resolution_comparison, write_per_resolution_csv, write_scores_json

EPS = 1e-4


def _pixel_counts(pred, gt, threshold=0.5):
    tp = fp = fn = 0
    for p, g in zip(pred.ravel().tolist(), gt.ravel().tolist()):
        positive = p >= threshold
        if positive and g:
            tp += 1
        elif positive:
            fp += 1
        elif g:
            fn += 1
    return tp, fp, fn


class ConfusionTests(SimpleTestCase):
    def test_all_ones(self):
        self.assertEqual(confusion(np.ones((4, 4)), np.ones((4, 4))), ConfusionCounts(16, 0, 0))

    def test_false_positives(self):
        self.assertEqual(confusion(np.ones((4, 4)), np.zeros((4, 4))), ConfusionCounts(0, 16, 0))

    def test_matches_pixel_loop(self):
        rng = np.random.default_rng(0)
        pred = rng.random((64, 64))
        gt = rng.integers(0, 2, (64, 64))
        c = confusion(pred, gt)
        self.assertEqual((c.tp, c.fp, c.fn), _pixel_counts(pred, gt))

    def test_threshold_is_inclusive(self):
        self.assertEqual(confusion(np.full((2, 2), 0.5), np.ones((2, 2))).tp, 4)

    def test_shape_mismatch(self):
        with self.assertRaises(MetricError):
            confusion(np.ones((4, 4)), np.ones((4, 5)))

    def test_merge_is_componentwise(self):
        a, b, c = ConfusionCounts(1, 2, 3), ConfusionCounts(4, 5, 6), ConfusionCounts(7, 8, 9)
        self.assertEqual(a + b, ConfusionCounts(5, 7, 9))
        self.assertEqual((a + b) + c, a + (b + c))
        self.assertEqual(a + b, b + a)
        self.assertEqual(ConfusionCounts().add(np.ones((2, 2)), np.zeros((2, 2))), ConfusionCounts(0, 4, 0))


class FormulaTests(SimpleTestCase):
    def test_iou(self):
        self.assertEqual(iou(ConfusionCounts(0, 0, 0)), 1.0)
        self.assertAlmostEqual(iou(ConfusionCounts(50, 25, 25)), 0.5, places=5)
        self.assertEqual(iou(ConfusionCounts(1, 0, 0)), 1.0)

    def test_f1(self):
        self.assertAlmostEqual(f1(ConfusionCounts(1, 1, 1)), (2 + EPS) / (3 + EPS), places=12)
        self.assertAlmostEqual(f1(ConfusionCounts(1, 1, 1)), 0.66668, places=5)
        self.assertEqual(f1(ConfusionCounts(0, 0, 0)), 1.0)
        self.assertEqual(f1(ConfusionCounts(7, 0, 0)), 1.0)

    def test_scores_bounded(self):
        rng = np.random.default_rng(1)
        for tp, fp, fn in rng.integers(0, 50, (100, 3)).tolist():
            c = ConfusionCounts(tp, fp, fn)
            self.assertTrue(0 <= iou(c) <= 1)
            self.assertTrue(0 <= f1(c) <= 1)

    def test_config_validation(self):
        with self.assertRaises(MetricError):
            MetricConfig(threshold=1.0)
        with self.assertRaises(MetricError):
            MetricConfig.from_dict({'gamma': 2})


class AggregateTests(SimpleTestCase):
    def test_blank_image_boosts_macro(self):
        per_image = [(ConfusionCounts(0, 0, 0), 2), (ConfusionCounts(50, 25, 25), 2)]
        micro, _ = aggregate(per_image, 'micro')
        macro, _ = aggregate(per_image, 'macro')
        self.assertAlmostEqual(macro.iou, 0.75, places=5)
        self.assertAlmostEqual(micro.iou, 0.5, places=5)

    def test_single_image_macro_equals_micro(self):
        per_image = [(ConfusionCounts(10, 3, 4), 5)]
        self.assertEqual(aggregate(per_image, 'micro')[0].iou, aggregate(per_image, 'macro')[0].iou)

    def test_duplicating_images_changes_nothing(self):
        rng = np.random.default_rng(2)
        per_image = [(ConfusionCounts(*rng.integers(0, 30, 3).tolist()), 3) for _ in range(10)]
        for mode in ('micro', 'macro'):
            once, _ = aggregate(per_image, mode)
            twice, _ = aggregate(per_image * 2, mode)
            self.assertAlmostEqual(once.iou, twice.iou, places=12)
            self.assertAlmostEqual(once.f1, twice.f1, places=12)

    def test_micro_is_partition_invariant(self):
        rng = np.random.default_rng(3)
        counts = [ConfusionCounts(*rng.integers(0, 30, 3).tolist()) for _ in range(12)]
        merged = [(counts[i] + counts[i + 1], 0) for i in range(0, 12, 2)]
        self.assertAlmostEqual(aggregate([(c, 0) for c in counts])[0].iou, aggregate(merged)[0].iou, places=12)

    def test_blank_images_raise_macro(self):
        base = [(ConfusionCounts(30, 10, 20), 0), (ConfusionCounts(5, 5, 5), 0)]
        before = aggregate(base, 'macro')[0].iou
        after = aggregate(base + [(ConfusionCounts(), 0)] * 3, 'macro')[0].iou
        self.assertGreaterEqual(after, before)
        self.assertGreaterEqual(after, aggregate(base, 'micro')[0].iou)

    def test_groups_by_resolution(self):
        per_image = [(ConfusionCounts(1, 0, 0), 20), (ConfusionCounts(0, 1, 0), 2), (ConfusionCounts(0, 0, 0), 2)]
        _, groups = aggregate(per_image, 'macro')
        self.assertEqual(list(groups), [2, 20])
        self.assertEqual(groups[2].n_images, 2)

    def test_empty_and_unknown_mode(self):
        with self.assertRaises(MetricError):
            aggregate([])
        with self.assertRaises(MetricError):
            aggregate([(ConfusionCounts(), 0)], 'weighted')

    def test_matches_dataset_pixel_oracle(self):
        rng = np.random.default_rng(4)
        pairs = []
        for _ in range(200):
            h, w = rng.integers(1, 9, 2)
            pred = rng.random((h, w))
            gt = (rng.random((h, w)) < rng.random()).astype(np.uint8)
            pairs.append((pred, gt, int(rng.choice([2, 5, 20]))))
        per_image = [(confusion(p, g), tag) for p, g, tag in pairs]
        overall, _ = headline_scores(per_image)

        totals = [0, 0, 0]
        ious, f1s = [], []
        for pred, gt, _ in pairs:
            tp, fp, fn = _pixel_counts(pred, gt)
            totals = [totals[0] + tp, totals[1] + fp, totals[2] + fn]
            ious.append((tp + EPS) / (tp + fp + fn + EPS))
            f1s.append((2 * tp + EPS) / (2 * tp + fn + fp + EPS))
        tp, fp, fn = totals
        self.assertAlmostEqual(overall['micro_iou'], (tp + EPS) / (tp + fp + fn + EPS), delta=1e-9)
        self.assertAlmostEqual(overall['micro_f1'], (2 * tp + EPS) / (2 * tp + fn + fp + EPS), delta=1e-9)
        self.assertAlmostEqual(overall['macro_iou'], sum(ious) / len(ious), delta=1e-9)
        self.assertAlmostEqual(overall['macro_f1'], sum(f1s) / len(f1s), delta=1e-9)


class TableTests(SimpleTestCase):
    def setUp(self):
        per_image = [(ConfusionCounts(0, 0, 0), 2), (ConfusionCounts(50, 25, 25), 2), (ConfusionCounts(9, 1, 0), 20)]
        self.report = build_report('sci-net', per_image)

    def test_text_table_has_four_headline_columns(self):
        text = render_score_table([self.report, build_report('baseline', [(ConfusionCounts(1, 1, 1), 2)])])
        header, first, second = text.splitlines()
        self.assertEqual(header.split(), ['Model', 'micro-IoU', 'micro-F1', 'macro-IoU', 'macro-F1'])
        self.assertEqual(len(first.split()), 5)
        self.assertTrue(second.startswith('baseline'))

    def test_json_and_csv(self):
        with tempfile.TemporaryDirectory() as tmp:
            data = json.loads(write_scores_json([self.report], Path(tmp) / 'scores.json').read_text())
            self.assertEqual(set(data[0]['overall']), {'micro_iou', 'micro_f1', 'macro_iou', 'macro_f1'})
            path = write_per_resolution_csv(self.report, Path(tmp) / 'per_resolution.csv')
            with path.open() as fh:
                rows = list(csv.reader(fh))
        self.assertEqual(rows[0], ['resolution', 'n_tiles', 'micro_iou', 'micro_f1', 'macro_iou', 'macro_f1'])
        self.assertEqual([row[:2] for row in rows[1:]], [['2', '2'], ['20', '1']])
        self.assertAlmostEqual(float(rows[1][4]), 0.75, places=4)

    def test_resolution_comparison(self):
        other = build_report('baseline', [(ConfusionCounts(1, 1, 1), 2)])
        rows = resolution_comparison([self.report, other])
        self.assertEqual(rows[0], ['resolution', 'sci-net', 'baseline'])
        self.assertEqual(rows[2][0], 20)
        self.assertEqual(rows[2][2], '')
