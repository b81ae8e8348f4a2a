# -*- coding: utf-8 -*-

from pipeline.commands import SciSegCommand
from pipeline.experiments import STUDY_GSD, STUDY_MARGIN, open_manifest, run_scale_study
from pipeline.runconfig import ConfigError


class Command(SciSegCommand):
    help = '尺度实验：相同预算下训练 Sci-Net 与无金字塔基线，对比各分辨率 micro-IoU'

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument('--manifest', help='数据清单 manifest.jsonl')
        parser.add_argument('--preset', help='Sci-Net 的模型预设')
        parser.add_argument('--seeds', type=int, default=3, help='种子个数（从 --seed 开始连续取）')
        parser.add_argument('--epochs', type=int)
        parser.add_argument('--steps-per-epoch', type=int)
        parser.add_argument('--chip', type=int)

    def overrides(self, options):
        return {
            'data.manifest': options.get('manifest'),
            'model.preset': options.get('preset'),
            'train.epochs': options.get('epochs'),
            'train.steps_per_epoch': options.get('steps_per_epoch'),
            'train.chip': options.get('chip'),
        }

    def run(self, run_config, **options):
        if options['seeds'] < 1:
            raise ConfigError(f'--seeds 必须 >= 1: {options["seeds"]}')
        if run_config.model.pyramid == 'none':
            raise ConfigError('Sci-Net 配置必须带金字塔模块，基线会自动派生')
        seeds = [run_config.seed + i for i in range(options['seeds'])]
        study = run_scale_study(run_config, open_manifest(run_config), self.output_dir(run_config, options), seeds)
        lines = [f'{STUDY_GSD} cm/px micro-IoU (Sci-Net - baseline):']
        for seed, delta in study.margins().items():
            lines.append(f'  seed {seed}: {100 * delta:+.2f}')
        lines.append(f'领先 >= {100 * STUDY_MARGIN:.0f} 个点的 seed: {study.wins()}/{len(seeds)}')
        return '\n'.join(lines) + '\n'
