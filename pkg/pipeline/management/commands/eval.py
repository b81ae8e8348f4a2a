# -*- coding: utf-8 -*-

from pathlib import Path

from scinet.checkpoint import load_checkpoint
from pipeline.commands import SciSegCommand
from pipeline.experiments import evaluate_model, open_manifest, select_tiles, write_gallery, write_reports
from pipeline.runconfig import ConfigError


def _model_names(paths):
    """默认用文件名；重名时带上所在目录"""
    stems = [Path(p).stem for p in paths]
    if len(set(stems)) == len(stems):
        return stems
    return [f'{Path(p).parent.name}-{Path(p).stem}' for p in paths]


class Command(SciSegCommand):
    help = '评估一个或多个 checkpoint：四个主要指标与按分辨率的明细'

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument('--checkpoint', action='append', required=True,
                            help='checkpoint 路径，可重复给出（每个一行）')
        parser.add_argument('--manifest', help='数据清单 manifest.jsonl')
        parser.add_argument('--folds', help="逗号分隔的 fold 编号，'all' 表示全部；默认为 val_fold")
        parser.add_argument('--gallery', type=int, default=0, help='每个分辨率写 N 张 图像|真值|预测 对比图')

    def overrides(self, options):
        return {'data.manifest': options.get('manifest')}

    def run(self, run_config, **options):
        out_dir = self.output_dir(run_config, options)
        folds = _parse_folds(options.get('folds'), run_config.data.val_fold)
        tiles = select_tiles(open_manifest(run_config), folds)
        if options['gallery'] < 0:
            raise ConfigError(f'--gallery 不能为负: {options["gallery"]}')

        reports = []
        for name, path in zip(_model_names(options['checkpoint']), options['checkpoint']):
            model = load_checkpoint(path, run_config.model if run_config.model_given else None)
            reports.append(evaluate_model(name, model, tiles, run_config.metrics, run_config.train.batch_size))
            if options['gallery']:
                write_gallery(model, tiles, out_dir / 'gallery' / name, options['gallery'],
                              run_config.metrics.threshold)
        return write_reports(reports, out_dir)


def _parse_folds(value, default):
    if value is None:
        return [default]
    if value == 'all':
        return []
    try:
        return [int(v) for v in value.split(',') if v.strip()]
    except ValueError as exc:
        raise ConfigError(f'--folds 格式错误: {value}') from exc
