# -*- coding: utf-8 -*-

import json

from receptive.report import build_rf_report, render_rf_report
from scinet.model import measure_output_stride
from pipeline.commands import SciSegCommand


class Command(SciSegCommand):
    help = '感受野报告：逐层 RF/步长、金字塔尺度枚举、分析步长与实测步长的交叉检查'

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument('--preset', help='模型预设 tiny/desk/full（别名 paper）/baseline')
        parser.add_argument('--pyramid', help='none/aspp/dense-aspp')
        parser.add_argument('--stage5-mode', help='strided/dilated-r2')
        parser.add_argument('--no-measure', action='store_true', help='跳过实际前向的步长测量')
        parser.add_argument('--json', action='store_true', help='同时把结构化报告写到输出目录')

    def overrides(self, options):
        return {
            'model.preset': options.get('preset'),
            'model.pyramid': options.get('pyramid'),
            'model.stage5_mode': options.get('stage5_mode'),
        }

    def run(self, run_config, **options):
        measured = None if options['no_measure'] else measure_output_stride(run_config.model)
        report = build_rf_report(run_config.model, measured_stride=measured)
        if options['json']:
            out_dir = self.output_dir(run_config, options)
            out_dir.mkdir(parents=True, exist_ok=True)
            (out_dir / 'rf_report.json').write_text(json.dumps(report, indent=2, sort_keys=True) + '\n',
                                                    encoding='utf-8')
        return render_rf_report(report)
