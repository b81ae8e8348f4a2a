# -*- coding: utf-8 -*-

import itertools
import json

from django.test import SimpleTestCase

from scinet.config import preset

from .calculus import (
    LayerSpec,
    LayerSpecError,
    analyze_chain,
    effective_kernel,
    enumerate_pyramid_scales,
    fold_rf,
    stack_rf,
)
from .report import build_rf_report, model_chain, render_rf_report


class EffectiveKernelTests(SimpleTestCase):
    def test_known_values(self):
        self.assertEqual(effective_kernel(3, 1), 3)
        self.assertEqual(effective_kernel(3, 2), 5)
        self.assertEqual(effective_kernel(3, 3), 7)
        self.assertEqual(effective_kernel(3, 18), 37)

    def test_dense_rates(self):
        self.assertEqual([effective_kernel(3, r) for r in (3, 6, 12, 18)], [7, 13, 25, 37])

    def test_invalid(self):
        with self.assertRaises(ValueError):
            effective_kernel(0, 1)


class StackTests(SimpleTestCase):
    def test_pairs(self):
        self.assertEqual(stack_rf(3, 3), 5)
        self.assertEqual(stack_rf(7, 13), 19)

    def test_fold_dense_kernels(self):
        self.assertEqual(fold_rf((7, 13, 25, 37)), 79)
        self.assertEqual(fold_rf(()), 1)

    def test_fold_is_permutation_invariant(self):
        for order in itertools.permutations((7, 13, 25, 37)):
            self.assertEqual(fold_rf(order), 79)

    def test_associative(self):
        self.assertEqual(stack_rf(stack_rf(7, 13), 25), stack_rf(7, stack_rf(13, 25)))


class ChainTests(SimpleTestCase):
    def _stages(self, last_stride=2, last_dilation=1):
        specs = [LayerSpec('conv', kernel=3, stride=2, name=f'stage{i}') for i in range(1, 5)]
        specs.append(LayerSpec('conv', kernel=3, stride=last_stride, dilation=last_dilation, name='stage5'))
        return specs

    def test_five_strided_stages(self):
        self.assertEqual(analyze_chain(self._stages())[-1].output_stride, 32)

    def test_dilated_stage5(self):
        self.assertEqual(analyze_chain(self._stages(last_stride=1, last_dilation=2))[-1].output_stride, 16)

    def test_single_layer(self):
        state = analyze_chain([LayerSpec('conv', kernel=3)])[-1]
        self.assertEqual((state.receptive_field, state.jump, state.output_stride), (3, 1, 1))

    def test_identity_layers_change_nothing(self):
        plain = analyze_chain(self._stages())[-1]
        padded = self._stages()
        padded.insert(2, LayerSpec('identity'))
        padded.append(LayerSpec('identity'))
        last = analyze_chain(padded)[-1]
        self.assertEqual(
            (last.receptive_field, last.jump, last.output_stride),
            (plain.receptive_field, plain.jump, plain.output_stride),
        )

    def test_receptive_field_grows_with_jump(self):
        states = analyze_chain([LayerSpec('conv', kernel=3, stride=2), LayerSpec('conv', kernel=3)])
        self.assertEqual([s.receptive_field for s in states], [3, 7])

    def test_upsample_divides_jump(self):
        states = analyze_chain([LayerSpec('conv', kernel=3, stride=2), LayerSpec('upsample', stride=2)])
        self.assertEqual(states[-1].jump, 1)
        self.assertEqual(states[-1].receptive_field, 3)

    def test_invalid_layer_names_index(self):
        chain = [LayerSpec('conv', kernel=3), LayerSpec('conv', kernel=3), LayerSpec('conv', kernel=0)]
        with self.assertRaisesRegex(LayerSpecError, '第 2 层'):
            analyze_chain(chain)

    def test_unknown_kind(self):
        with self.assertRaisesRegex(LayerSpecError, '第 0 层'):
            analyze_chain([LayerSpec('deconv', kernel=3)])

    def test_empty_chain(self):
        with self.assertRaises(LayerSpecError):
            analyze_chain([])


class PyramidScaleTests(SimpleTestCase):
    def test_dense_cascade(self):
        scales = enumerate_pyramid_scales('dense', (3, 6, 12, 18), k=3)
        self.assertEqual(scales.count, 16)
        self.assertEqual(scales.maximum, 79)
        self.assertIn(1, scales.values)
        # {6, 12} 和 {18} 都给出 37
        self.assertEqual(scales.values[37], 2)
        self.assertEqual(scales.distinct, list(range(1, 80, 6)))

    def test_parallel(self):
        scales = enumerate_pyramid_scales('parallel', (8, 12, 18), k=3)
        self.assertEqual(scales.distinct, [17, 25, 37])
        self.assertEqual(scales.maximum, 37)

    def test_dense_single_rate(self):
        self.assertEqual(enumerate_pyramid_scales('dense', (3,)).distinct, [1, 7])

    def test_rejects_empty_rates(self):
        with self.assertRaises(ValueError):
            enumerate_pyramid_scales('dense', ())

    def test_rejects_unknown_topology(self):
        with self.assertRaises(ValueError):
            enumerate_pyramid_scales('ring', (3,))


class ReportTests(SimpleTestCase):
    def test_full_preset_golden_values(self):
        report = build_rf_report(preset('full'))
        self.assertEqual(report['dense']['kernels'], [7, 13, 25, 37])
        self.assertEqual(report['dense']['max_rf'], 79)
        self.assertEqual(report['dense']['combinations'], 16)
        self.assertEqual(report['parallel']['max_rf'], 37)
        self.assertEqual(report['output_stride'], 16)
        text = render_rf_report(report)
        self.assertIn('max RF 79, combinations 16', text)
        self.assertIn('max RF 37', text)
        self.assertIn('output stride 16', text)

    def test_baseline_stride(self):
        self.assertEqual(build_rf_report(preset('baseline'))['output_stride'], 32)

    def test_pyramid_keeps_stride(self):
        config = preset('full', pyramid='aspp')
        states = analyze_chain(model_chain(config))
        self.assertEqual(states[-1].output_stride, 16)
        self.assertEqual(states[-1].name, 'aspp.project')

    def test_cross_check_line(self):
        config = preset('tiny')
        ok = render_rf_report(build_rf_report(config, measured_stride=16))
        self.assertIn('== measured stride 16 OK', ok)
        with self.assertLogs('receptive.report', level='WARNING'):
            bad = build_rf_report(config, measured_stride=32)
        self.assertFalse(bad['stride_check'])
        self.assertIn('MISMATCH', render_rf_report(bad))
        self.assertIn('not measured', render_rf_report(build_rf_report(config)))

    def test_report_is_json_serializable(self):
        report = build_rf_report(preset('desk'), measured_stride=16)
        self.assertEqual(json.loads(json.dumps(report))['layers'][0]['name'], 'stage1.0')

    def test_one_line_per_layer(self):
        config = preset('tiny')
        text = render_rf_report(build_rf_report(config))
        self.assertEqual(sum(1 for line in text.splitlines() if line.startswith(('stage', 'dense'))),
                         len(model_chain(config)) + 1)
