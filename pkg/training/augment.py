# -*- coding: utf-8 -*-

"""
位置增强与随机裁剪；图像与掩码同步变换
"""
from dataclasses import replace
from typing import Optional

import numpy as np

from datasets.exceptions import WindowError
from datasets.tiling import SampleTile

TRANSFORMS = ('hflip', 'vflip', 'rot180')


def apply_transform(sample: SampleTile, name: str) -> SampleTile:
    if name == 'hflip':
        index = (slice(None), slice(None, None, -1))
    elif name == 'vflip':
        index = (slice(None, None, -1), slice(None))
    elif name == 'rot180':
        index = (slice(None, None, -1), slice(None, None, -1))
    else:
        raise ValueError(f'未知的变换: {name}')
    return replace(sample, image=np.ascontiguousarray(sample.image[index]),
                   mask=np.ascontiguousarray(sample.mask[index]))


def choose_transform(rng: np.random.Generator, p: float) -> Optional[str]:
    """以概率 p 均匀选一种变换，否则返回 None；每次固定消耗两个随机数"""
    u = rng.random()
    k = int(rng.integers(len(TRANSFORMS)))
    return TRANSFORMS[k] if u < p else None


def augment(sample: SampleTile, rng: np.random.Generator, p: float = 0.8) -> SampleTile:
    name = choose_transform(rng, p)
    return sample if name is None else apply_transform(sample, name)


def sample_chips(sample: SampleTile, chip: int, rng: np.random.Generator) -> SampleTile:
    """左上角在 {0..h-chip} x {0..w-chip} 上均匀分布"""
    if chip > sample.height or chip > sample.width:
        raise WindowError(f'{sample.tile_id or "tile"} 尺寸 {sample.height}x{sample.width} 小于 chip {chip}')
    top = int(rng.integers(0, sample.height - chip + 1))
    left = int(rng.integers(0, sample.width - chip + 1))
    return replace(
        sample,
        image=np.ascontiguousarray(sample.image[top:top + chip, left:left + chip]),
        mask=np.ascontiguousarray(sample.mask[top:top + chip, left:left + chip]),
    )
