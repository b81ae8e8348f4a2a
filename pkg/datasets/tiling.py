# -*- coding: utf-8 -*-

"""
SampleTile 与滑动窗口切分

图像以 (h, w, 3) uint8 存储，掩码为 (h, w) 的 {0, 1} uint8；
送入网络时转换为 NCHW float32，数值为 image / 255 - 0.5。
"""
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .exceptions import DataError, WindowError


@dataclass(frozen=True, eq=False)
class SampleTile:
    image: np.ndarray
    mask: np.ndarray
    gsd: int
    tile_id: str = ''
    scene: str = ''
    row: int = 0
    col: int = 0
    fold: Optional[int] = None

    def __post_init__(self):
        if self.image.ndim != 3 or self.mask.ndim != 2 or self.image.shape[:2] != self.mask.shape:
            raise DataError(f'{self.tile_id or "tile"}: 图像 {self.image.shape} 与掩码 {self.mask.shape} 尺寸不一致')

    @property
    def height(self) -> int:
        return self.mask.shape[0]

    @property
    def width(self) -> int:
        return self.mask.shape[1]


def tile_name(scene: str, gsd: int, row: int, col: int) -> str:
    return f'{scene}_{gsd}cm_{row}_{col}'


def tile(image: np.ndarray, mask: np.ndarray, window: int, stride: Optional[int] = None,
         gsd: int = 0, scene: str = '') -> List[SampleTile]:
    """
    行优先滑动窗口切分，不完整的边缘窗口丢弃

    Args:
        image: (h, w, 3)
        mask: (h, w)
        window: 窗口边长
        stride: 步长，默认等于 window（不重叠）

    Returns:
        List[SampleTile]: row/col 为窗口下标
    """
    stride = stride or window
    if window < 1 or stride < 1:
        raise WindowError(f'window 和 stride 必须为正: window={window}, stride={stride}')
    h, w = mask.shape
    if image.shape[:2] != (h, w):
        raise DataError(f'图像 {image.shape} 与掩码 {mask.shape} 尺寸不一致')
    if window > h or window > w:
        raise WindowError(f'窗口 {window} 大于图像 {h}x{w}')
    tiles = []
    for row, top in enumerate(range(0, h - window + 1, stride)):
        for col, left in enumerate(range(0, w - window + 1, stride)):
            tiles.append(SampleTile(
                image=np.ascontiguousarray(image[top:top + window, left:left + window]),
                mask=np.ascontiguousarray(mask[top:top + window, left:left + window]),
                gsd=gsd,
                tile_id=tile_name(scene, gsd, row, col),
                scene=scene,
                row=row,
                col=col,
            ))
    return tiles


def tile_sample(sample: SampleTile, window: int, stride: Optional[int] = None) -> List[SampleTile]:
    return tile(sample.image, sample.mask, window, stride, gsd=sample.gsd, scene=sample.scene)


def to_network_input(images: Sequence[np.ndarray]) -> np.ndarray:
    batch = np.stack([np.asarray(image) for image in images]).astype(np.float32)
    return np.ascontiguousarray(batch.transpose(0, 3, 1, 2) / 255.0 - 0.5, dtype=np.float32)


def stack_batch(tiles: Sequence[SampleTile]) -> Tuple[np.ndarray, np.ndarray]:
    """(x, y)：x 为 (n, 3, h, w) 网络输入，y 为 (n, 1, h, w) 的 0/1 目标"""
    if not tiles:
        raise DataError('空 batch')
    x = to_network_input([t.image for t in tiles])
    y = np.stack([t.mask for t in tiles])[:, None].astype(np.float32)
    return x, y
