# -*- coding: utf-8 -*-

from dataclasses import asdict, dataclass, fields, replace
from typing import Any, Dict, Optional


class TrainConfigError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    batch_size: int = 12
    chip: int = 512
    lr0: float = 1e-4
    poly_power: float = 0.9
    bce_weight: float = 0.5
    dice_weight: float = 0.5
    dice_smooth: float = 1.0
    augment_p: float = 0.8
    seed: int = 0
    steps_per_epoch: Optional[int] = None
    clip_grad_norm: Optional[float] = None
    prefetch: bool = True
    deterministic: bool = False

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise TrainConfigError(f'epochs 与 batch_size 必须 >= 1: {self.epochs}, {self.batch_size}')
        if self.chip < 32 or self.chip % 32:
            raise TrainConfigError(f'chip 必须是 32 的倍数: {self.chip}')
        if self.bce_weight < 0 or self.dice_weight < 0 or self.bce_weight + self.dice_weight <= 0:
            raise TrainConfigError(f'损失权重必须非负且和为正: {self.bce_weight}, {self.dice_weight}')
        if not 0 <= self.augment_p <= 1:
            raise TrainConfigError(f'augment_p 必须在 [0, 1] 内: {self.augment_p}')
        if self.lr0 < 0:
            raise TrainConfigError(f'lr0 不能为负: {self.lr0}')
        if self.steps_per_epoch is not None and self.steps_per_epoch < 1:
            raise TrainConfigError(f'steps_per_epoch 必须 >= 1: {self.steps_per_epoch}')
        if self.clip_grad_norm is not None and self.clip_grad_norm <= 0:
            raise TrainConfigError(f'clip_grad_norm 必须为正: {self.clip_grad_norm}')

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'TrainConfig':
        data = dict(data or {})
        unknown = sorted(set(data) - {f.name for f in fields(cls)})
        if unknown:
            raise TrainConfigError(f'未知的训练配置项: {unknown}')
        return replace(cls(), **data)
