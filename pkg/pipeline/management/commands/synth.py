# -*- coding: utf-8 -*-

import shutil
from dataclasses import replace
from pathlib import Path

from datasets.manifest import manifest_digest
from datasets.storage import HISTOGRAM_NAME, MANIFEST_NAME, get_manifest_path
from datasets.synthesis import expected_base_rasters, synthesize
from pipeline.commands import SciSegCommand
from pipeline.runconfig import ConfigError


class Command(SciSegCommand):
    help = '生成合成多分辨率数据集：场景 x 9 个 gsd 渲染、切分、分层 k 折，写出清单'

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument('--scenes', type=int, help='场景数')
        parser.add_argument('--tile', type=int, dest='tile_px', help='tile 边长（像素）')
        parser.add_argument('--window', type=int, help='切分窗口，默认等于 tile')
        parser.add_argument('--stride', type=int, help='切分步长，默认等于窗口')
        parser.add_argument('--folds', type=int, help='分层 k 折的 k')
        parser.add_argument('--gsd-weights', choices=['source', 'uniform'], help='各分辨率 tile 占比')
        parser.add_argument('--force', action='store_true', help='输出目录非空时覆盖')

    def overrides(self, options):
        weights = options.get('gsd_weights')
        return {
            'data.scenes': options.get('scenes'),
            'data.tile_px': options.get('tile_px'),
            'data.window': options.get('window'),
            'data.stride': options.get('stride'),
            'data.folds': options.get('folds'),
            'data.gsd_weights': 'source' if weights == 'source' else None,
        }

    def run(self, run_config, **options):
        out_dir = self.output_dir(run_config, options)
        config = run_config.data
        if options.get('gsd_weights') == 'uniform' and config.gsd_weights is not None:
            config = replace(config, gsd_weights=None)
        if out_dir.exists() and any(out_dir.iterdir()):
            if not options.get('force'):
                raise ConfigError(f'输出目录非空: {out_dir}（使用 --force 覆盖）')
            _clear_dataset(out_dir)

        manifest = synthesize(out_dir, config, seed=run_config.seed)
        digest = manifest_digest(get_manifest_path(out_dir))
        counts = ', '.join(f'{gsd}cm:{n}' for gsd, n in manifest.gsd_counts().items())
        return (f'{expected_base_rasters(config)} 个基础栅格, {len(manifest)} 个 tile ({counts})\n'
                f'清单 {get_manifest_path(out_dir)} sha256={digest}\n')


def _clear_dataset(out_dir: Path) -> None:
    """只删除 synth 自己生成的文件"""
    shutil.rmtree(out_dir / 'tiles', ignore_errors=True)
    for name in (MANIFEST_NAME, HISTOGRAM_NAME):
        (out_dir / name).unlink(missing_ok=True)
