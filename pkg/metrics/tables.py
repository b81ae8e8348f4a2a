# -*- coding: utf-8 -*-

"""
分数表输出

- 文本表：每个模型一行，列为 micro-IoU、micro-F1、macro-IoU、macro-F1（百分数，两位小数）
- JSON：整体与按分辨率的全部分数
- CSV：按分辨率的明细 (resolution, n_tiles, 四个分数)，以及多模型按分辨率的对比
"""
import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Sequence, Tuple

from .scoring import SCORE_NAMES, ConfusionCounts, MetricConfig, headline_scores

HEADERS = ('Model', 'micro-IoU', 'micro-F1', 'macro-IoU', 'macro-F1')


@dataclass
class EvaluationReport:
    model: str
    overall: Dict[str, float]
    per_resolution: Dict[int, Dict[str, float]] = field(default_factory=dict)
    n_tiles: int = 0

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data['per_resolution'] = {str(k): v for k, v in self.per_resolution.items()}
        return data


def build_report(model: str, per_image: Sequence[Tuple[ConfusionCounts, int]],
                 config: MetricConfig = MetricConfig()) -> EvaluationReport:
    overall, groups = headline_scores(per_image, config)
    return EvaluationReport(model=model, overall=overall, per_resolution=groups, n_tiles=len(per_image))


def render_score_table(reports: Sequence[EvaluationReport]) -> str:
    width = max([len(HEADERS[0])] + [len(r.model) for r in reports])
    lines = [f'{HEADERS[0]:<{width}}' + ''.join(f'{h:>12}' for h in HEADERS[1:])]
    for report in reports:
        cells = ''.join(f'{100 * report.overall[name]:>12.2f}' for name in SCORE_NAMES)
        lines.append(f'{report.model:<{width}}{cells}')
    return '\n'.join(lines) + '\n'


def write_scores_json(reports: Sequence[EvaluationReport], path) -> Path:
    path = Path(path)
    path.write_text(json.dumps([r.to_dict() for r in reports], indent=2, sort_keys=True) + '\n', encoding='utf-8')
    return path


def write_per_resolution_csv(report: EvaluationReport, path) -> Path:
    path = Path(path)
    with path.open('w', newline='', encoding='utf-8') as fh:
        writer = csv.writer(fh)
        writer.writerow(('resolution', 'n_tiles') + SCORE_NAMES)
        for gsd, row in sorted(report.per_resolution.items()):
            writer.writerow([gsd, row['n_tiles']] + [f'{row[name]:.6f}' for name in SCORE_NAMES])
    return path


def resolution_comparison(reports: Sequence[EvaluationReport], score: str = 'micro_iou') -> List[List[Any]]:
    """按分辨率对比多个模型的同一个分数；缺失的组合为空"""
    gsds = sorted({gsd for r in reports for gsd in r.per_resolution})
    rows = [['resolution'] + [r.model for r in reports]]
    for gsd in gsds:
        rows.append([gsd] + [
            f"{r.per_resolution[gsd][score]:.6f}" if gsd in r.per_resolution else '' for r in reports
        ])
    return rows


def write_resolution_comparison(reports: Sequence[EvaluationReport], path, score: str = 'micro_iou') -> Path:
    path = Path(path)
    with path.open('w', newline='', encoding='utf-8') as fh:
        csv.writer(fh).writerows(resolution_comparison(reports, score))
    return path
