# -*- coding: utf-8 -*-

from dataclasses import asdict, dataclass, fields, replace
from typing import Any, Dict, Optional, Tuple

from .exceptions import DataError

GSD_CHOICES = (2, 3, 4, 5, 6, 7, 8, 10, 20)

# 真实航拍数据集中各分辨率的 tile 数，gsd_weights='source' 时使用
SOURCE_GSD_TILES = {2: 5632, 3: 1419, 4: 3259, 5: 8028, 6: 8059, 7: 9670, 8: 5703, 10: 100, 20: 68}


@dataclass(frozen=True)
class DataConfig:
    scenes: int = 4
    tile_px: int = 1024
    window: Optional[int] = None
    stride: Optional[int] = None
    gsds: Tuple[int, ...] = GSD_CHOICES
    gsd_weights: Any = None
    folds: int = 10
    val_fold: int = 0
    manifest: str = ''

    def __post_init__(self):
        object.__setattr__(self, 'gsds', tuple(int(g) for g in self.gsds))
        if self.scenes < 1:
            raise DataError(f'scenes 必须 >= 1: {self.scenes}')
        if self.tile_px < 32 or self.tile_px % 32:
            raise DataError(f'tile_px 必须是 32 的倍数: {self.tile_px}')
        unsupported = [g for g in self.gsds if g not in GSD_CHOICES]
        if not self.gsds or unsupported:
            raise DataError(f'不支持的 gsd: {unsupported or "空"}，可选 {GSD_CHOICES}')
        if self.folds < 2:
            raise DataError(f'folds 必须 >= 2: {self.folds}')
        if not 0 <= self.val_fold < self.folds:
            raise DataError(f'val_fold 必须在 [0, {self.folds}) 内: {self.val_fold}')
        if self.window is not None and self.window % 32:
            raise DataError(f'window 必须是 32 的倍数: {self.window}')

    @property
    def tile_window(self) -> int:
        return self.window or self.tile_px

    @property
    def tile_stride(self) -> int:
        return self.stride or self.tile_window

    def weights(self) -> Optional[Dict[int, float]]:
        """None 表示各分辨率保留全部 tile"""
        if self.gsd_weights is None:
            return None
        if self.gsd_weights == 'source':
            return {g: float(SOURCE_GSD_TILES[g]) for g in self.gsds}
        if not isinstance(self.gsd_weights, dict):
            raise DataError(f"gsd_weights 必须是 'source' 或 {{gsd: 权重}}: {self.gsd_weights!r}")
        weights = {int(k): float(v) for k, v in self.gsd_weights.items()}
        missing = [g for g in self.gsds if weights.get(g, 0) <= 0]
        if missing:
            raise DataError(f'gsd_weights 缺少正权重: {missing}')
        return {g: weights[g] for g in self.gsds}

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data['gsds'] = list(self.gsds)
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'DataConfig':
        data = dict(data or {})
        unknown = sorted(set(data) - {f.name for f in fields(cls)})
        if unknown:
            raise DataError(f'未知的数据配置项: {unknown}')
        return replace(cls(), **data)
