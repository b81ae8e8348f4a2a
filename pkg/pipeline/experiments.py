# -*- coding: utf-8 -*-

"""
命令之间共用的流程：按 fold 切分清单、评估 checkpoint、对比图、尺度实验
"""
import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Sequence, Tuple

import numpy as np
from PIL import Image

from datasets.exceptions import EmptyManifestError
from datasets.manifest import Manifest, read_manifest
from datasets.tiling import SampleTile, stack_batch
from metrics.scoring import MetricConfig
from metrics.tables import (
    EvaluationReport,
    build_report,
    render_score_table,
    write_per_resolution_csv,
    write_resolution_comparison,
    write_scores_json,
)
from scinet.model import SciNet, build_model, predict
from training.trainer import evaluate_tiles, fit

from .runconfig import ConfigError, RunConfig

logger = logging.getLogger(__name__)

STUDY_GSD = 2
STUDY_MARGIN = 0.02


def open_manifest(run_config: RunConfig) -> Manifest:
    if not run_config.data.manifest:
        raise ConfigError('未指定数据清单（data.manifest 或 --manifest）')
    return read_manifest(run_config.data.manifest)


def split_tiles(manifest: Manifest, val_fold: int) -> Tuple[List[SampleTile], List[SampleTile]]:
    """val_fold 作验证集，其余 fold 作训练集"""
    if not 0 <= val_fold < max(manifest.folds, 1):
        raise ConfigError(f'val_fold={val_fold} 超出清单的 {manifest.folds} 折')
    train_records = [r for r in manifest.records if r.fold != val_fold]
    val_records = manifest.select([val_fold])
    if not train_records or not val_records:
        raise EmptyManifestError(f'按 val_fold={val_fold} 划分后训练集 {len(train_records)} 个, '
                                 f'验证集 {len(val_records)} 个')
    return manifest.load(train_records), manifest.load(val_records)


def select_tiles(manifest: Manifest, folds: Sequence[int]) -> List[SampleTile]:
    records = manifest.select(folds) if folds else manifest.records
    if not records:
        raise EmptyManifestError(f'fold {list(folds)} 中没有 tile')
    return manifest.load(records)


def evaluate_model(name: str, model: SciNet, tiles: Sequence[SampleTile],
                   metric_config: MetricConfig, batch_size: int = 4) -> EvaluationReport:
    per_image = evaluate_tiles(model, tiles, metric_config.threshold, batch_size)
    return build_report(name, per_image, metric_config)


def write_reports(reports: Sequence[EvaluationReport], out_dir) -> str:
    """写 scores.json、scores.txt、每个模型的分辨率明细，以及多模型对比表；返回文本表"""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    table = render_score_table(reports)
    write_scores_json(reports, out_dir / 'scores.json')
    (out_dir / 'scores.txt').write_text(table, encoding='utf-8')
    for report in reports:
        write_per_resolution_csv(report, out_dir / f'per_resolution_{report.model}.csv')
    write_resolution_comparison(reports, out_dir / 'per_resolution_micro_iou.csv')
    return table


# ---------- 对比图 ----------

def gallery_strip(sample: SampleTile, prob: np.ndarray, threshold: float = 0.5, gap: int = 4) -> np.ndarray:
    """图像 | 真值 | 预测 三联图，(h, 3w + 2gap, 3) uint8"""
    h, w = sample.mask.shape
    truth = np.repeat((sample.mask * 255).astype(np.uint8)[..., None], 3, axis=2)
    pred = np.repeat(((prob >= threshold) * 255).astype(np.uint8)[..., None], 3, axis=2)
    spacer = np.full((h, gap, 3), 128, dtype=np.uint8)
    return np.concatenate([sample.image, spacer, truth, spacer, pred], axis=1)


def write_gallery(model: SciNet, tiles: Sequence[SampleTile], out_dir, per_resolution: int,
                  threshold: float = 0.5) -> List[Path]:
    """每个分辨率取前 per_resolution 个 tile 写三联图"""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    taken: Dict[int, int] = {}
    written = []
    for sample in tiles:
        if taken.get(sample.gsd, 0) >= per_resolution:
            continue
        taken[sample.gsd] = taken.get(sample.gsd, 0) + 1
        x, _ = stack_batch([sample])
        prob = predict(model, x)[0, 0]
        path = out_dir / f'{sample.gsd}cm_{sample.tile_id or taken[sample.gsd]}.png'
        Image.fromarray(gallery_strip(sample, prob, threshold)).save(path, format='PNG')
        written.append(path)
    logger.info('对比图 %d 张写入 %s', len(written), out_dir)
    return written


# ---------- 尺度实验 ----------

@dataclass
class ScaleStudy:
    seeds: List[int]
    reports: Dict[int, List[EvaluationReport]] = field(default_factory=dict)

    def margins(self, gsd: int = STUDY_GSD, score: str = 'micro_iou') -> Dict[int, float]:
        """每个 seed 上 Sci-Net 相对 baseline 在 gsd 类的分数差"""
        result = {}
        for seed, (scinet, baseline) in self.reports.items():
            if gsd in scinet.per_resolution and gsd in baseline.per_resolution:
                result[seed] = scinet.per_resolution[gsd][score] - baseline.per_resolution[gsd][score]
        return result

    def wins(self, gsd: int = STUDY_GSD, margin: float = STUDY_MARGIN) -> int:
        return sum(1 for delta in self.margins(gsd).values() if delta >= margin)

    def to_dict(self) -> Dict[str, object]:
        return {
            'seeds': self.seeds,
            'gsd': STUDY_GSD,
            'margin': STUDY_MARGIN,
            'margins': {str(k): v for k, v in self.margins().items()},
            'wins': self.wins(),
            'reports': {str(seed): [r.to_dict() for r in pair] for seed, pair in self.reports.items()},
        }


def baseline_of(run_config: RunConfig):
    """同宽度的消融基线：无金字塔，stage 5 用步长 2"""
    return replace(run_config.model, pyramid='none', stage5_mode='strided')


def run_scale_study(run_config: RunConfig, manifest: Manifest, out_dir, seeds: Sequence[int]) -> ScaleStudy:
    """
    相同训练预算下分别训练 Sci-Net 与基线，比较各分辨率的 micro-IoU

    Args:
        run_config: model 小节为 Sci-Net 配置；基线由 baseline_of 派生
        manifest: 已划分 fold 的清单
        out_dir: 每个 seed 一个子目录
        seeds: 种子列表

    Returns:
        ScaleStudy
    """
    out_dir = Path(out_dir)
    train_tiles, val_tiles = split_tiles(manifest, run_config.data.val_fold)
    study = ScaleStudy(seeds=list(seeds))
    variants = (('scinet', run_config.model), ('baseline', baseline_of(run_config)))
    for seed in seeds:
        train_config = replace(run_config.train, seed=seed)
        pair = []
        for name, model_config in variants:
            run_dir = out_dir / f'seed{seed}' / name
            model = build_model(model_config, seed=seed)
            fit(model, train_tiles, val_tiles, train_config, run_dir, metric_config=run_config.metrics)
            pair.append(evaluate_model(name, model, val_tiles, run_config.metrics, train_config.batch_size))
        study.reports[seed] = pair
        write_reports(pair, out_dir / f'seed{seed}')
        logger.info('seed %d: %d cm/px micro-IoU 差值 %+.4f', seed, STUDY_GSD, study.margins().get(seed, float('nan')))
    (out_dir / 'scale_study.json').write_text(json.dumps(study.to_dict(), indent=2, sort_keys=True) + '\n',
                                             encoding='utf-8')
    return study
