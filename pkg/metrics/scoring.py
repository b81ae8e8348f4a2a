# -*- coding: utf-8 -*-

"""
IoU / F1（带 epsilon 平滑），micro 与 macro 平均

    IoU = (TP + eps) / (TP + FP + FN + eps)
    F1  = ((1 + b^2) TP + eps) / ((1 + b^2) TP + b^2 FN + FP + eps)

micro：先合并所有图像的计数再算分数；macro：每张图像的分数取平均。
全空图像（无预测、无真值）的分数为 1。
"""
from dataclasses import asdict, dataclass, fields, replace
from typing import Any, Dict, Iterable, List, Sequence, Tuple

import numpy as np


class MetricError(ValueError):
    pass


@dataclass(frozen=True)
class MetricConfig:
    beta: float = 1.0
    eps: float = 1e-4
    threshold: float = 0.5

    def __post_init__(self):
        if not 0 < self.threshold < 1:
            raise MetricError(f'threshold 必须在 (0, 1) 内: {self.threshold}')
        if self.eps <= 0 or self.beta <= 0:
            raise MetricError(f'eps 与 beta 必须为正: eps={self.eps}, beta={self.beta}')

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'MetricConfig':
        data = dict(data or {})
        unknown = sorted(set(data) - {f.name for f in fields(cls)})
        if unknown:
            raise MetricError(f'未知的评估配置项: {unknown}')
        return replace(cls(), **data)


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0

    def __post_init__(self):
        if min(self.tp, self.fp, self.fn) < 0:
            raise MetricError(f'计数不能为负: {self}')

    def merge(self, other: 'ConfusionCounts') -> 'ConfusionCounts':
        return ConfusionCounts(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn)

    __add__ = merge

    def add(self, pred_prob: np.ndarray, gt_mask: np.ndarray, threshold: float = 0.5) -> 'ConfusionCounts':
        return self.merge(confusion(pred_prob, gt_mask, threshold))

    @classmethod
    def total(cls, counts: Iterable['ConfusionCounts']) -> 'ConfusionCounts':
        result = cls()
        for item in counts:
            result = result.merge(item)
        return result


def confusion(pred_prob: np.ndarray, gt_mask: np.ndarray, threshold: float = 0.5) -> ConfusionCounts:
    """pred >= threshold 视为建筑"""
    pred_prob = np.asarray(pred_prob)
    gt_mask = np.asarray(gt_mask)
    if pred_prob.shape != gt_mask.shape:
        raise MetricError(f'预测 {pred_prob.shape} 与真值 {gt_mask.shape} 形状不一致')
    pred = pred_prob >= threshold
    gt = gt_mask.astype(bool)
    tp = int(np.count_nonzero(pred & gt))
    return ConfusionCounts(tp=tp, fp=int(np.count_nonzero(pred)) - tp, fn=int(np.count_nonzero(gt)) - tp)


def iou(c: ConfusionCounts, eps: float = 1e-4) -> float:
    return (c.tp + eps) / (c.tp + c.fp + c.fn + eps)


def f1(c: ConfusionCounts, beta: float = 1.0, eps: float = 1e-4) -> float:
    b2 = beta * beta
    return ((1 + b2) * c.tp + eps) / ((1 + b2) * c.tp + b2 * c.fn + c.fp + eps)


SCORE_NAMES = ('micro_iou', 'micro_f1', 'macro_iou', 'macro_f1')


@dataclass(frozen=True)
class Scores:
    iou: float
    f1: float
    n_images: int


def _score(counts: Sequence[ConfusionCounts], mode: str, config: MetricConfig) -> Scores:
    if mode == 'micro':
        merged = ConfusionCounts.total(counts)
        return Scores(iou(merged, config.eps), f1(merged, config.beta, config.eps), len(counts))
    if mode == 'macro':
        return Scores(
            float(np.mean([iou(c, config.eps) for c in counts])),
            float(np.mean([f1(c, config.beta, config.eps) for c in counts])),
            len(counts),
        )
    raise MetricError(f'未知的平均方式: {mode}')


def aggregate(per_image: Sequence[Tuple[ConfusionCounts, Any]], mode: str = 'micro',
              config: MetricConfig = MetricConfig()) -> Tuple[Scores, Dict[Any, Scores]]:
    """
    汇总整体与按分辨率分组的分数

    Args:
        per_image: [(ConfusionCounts, 分辨率标签), ...]
        mode: 'micro' 或 'macro'
        config: MetricConfig

    Returns:
        (整体分数, {分辨率: 分数})，分组按标签排序
    """
    if not per_image:
        raise MetricError('没有可汇总的图像')
    overall = _score([c for c, _ in per_image], mode, config)
    groups: Dict[Any, List[ConfusionCounts]] = {}
    for counts, tag in per_image:
        groups.setdefault(tag, []).append(counts)
    return overall, {tag: _score(groups[tag], mode, config) for tag in sorted(groups)}


def headline_scores(per_image: Sequence[Tuple[ConfusionCounts, Any]],
                    config: MetricConfig = MetricConfig()) -> Tuple[Dict[str, float], Dict[Any, Dict[str, float]]]:
    """四个主要指标：整体一组，每个分辨率一组（另含 n_tiles）"""
    micro, micro_groups = aggregate(per_image, 'micro', config)
    macro, macro_groups = aggregate(per_image, 'macro', config)
    overall = {'micro_iou': micro.iou, 'micro_f1': micro.f1, 'macro_iou': macro.iou, 'macro_f1': macro.f1}
    groups = {
        tag: {
            'n_tiles': micro_groups[tag].n_images,
            'micro_iou': micro_groups[tag].iou,
            'micro_f1': micro_groups[tag].f1,
            'macro_iou': macro_groups[tag].iou,
            'macro_f1': macro_groups[tag].f1,
        }
        for tag in micro_groups
    }
    return overall, groups
