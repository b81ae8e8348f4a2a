# -*- coding: utf-8 -*-


"""
数据集文件存储工具
提供 tile 路径生成、PNG 读写等功能

目录结构设计（一个数据集目录）:
dataset/
├── manifest.jsonl              # 清单（第一行为 header）
├── resolution_histogram.csv    # 每个分辨率的 tile 数
└── tiles/
    └── {gsd}cm/
        ├── {scene}_{gsd}cm_{row}_{col}.png        # 三通道图像
        └── {scene}_{gsd}cm_{row}_{col}_mask.png   # 单通道掩码 (0/1)
"""
from pathlib import Path
from typing import Tuple

import numpy as np
from PIL import Image

from .exceptions import DataError, MissingFileError
from .tiling import SampleTile, tile_name

MANIFEST_NAME = 'manifest.jsonl'
HISTOGRAM_NAME = 'resolution_histogram.csv'


# ==================== 路径生成辅助函数 ====================

def get_tile_dir(gsd: int) -> str:
    """
    生成某个分辨率的 tile 目录（相对数据集根目录）

    Args:
        gsd: 分辨率，cm/像素

    Returns:
        str: 目录路径，如 "tiles/5cm"
    """
    return f"tiles/{gsd}cm"


def get_image_path(scene: str, gsd: int, row: int, col: int) -> str:
    """
    生成 tile 图像路径

    Returns:
        str: 文件路径，如 "tiles/5cm/scene0_5cm_1_2.png"
    """
    return f"{get_tile_dir(gsd)}/{tile_name(scene, gsd, row, col)}.png"


def get_mask_path(scene: str, gsd: int, row: int, col: int) -> str:
    """
    生成 tile 掩码路径（与图像同名，加 _mask 后缀）

    Returns:
        str: 文件路径，如 "tiles/5cm/scene0_5cm_1_2_mask.png"
    """
    return f"{get_tile_dir(gsd)}/{tile_name(scene, gsd, row, col)}_mask.png"


def get_manifest_path(root) -> Path:
    return Path(root) / MANIFEST_NAME


# ==================== 读写 ====================

def write_png(array: np.ndarray, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.ascontiguousarray(array, dtype=np.uint8)).save(path, format='PNG')


def read_png(path, mode: str = 'RGB') -> np.ndarray:
    path = Path(path)
    if not path.is_file():
        raise MissingFileError(f'文件不存在: {path}')
    try:
        with Image.open(path) as img:
            return np.asarray(img.convert(mode), dtype=np.uint8).copy()
    except OSError as exc:
        raise DataError(f'无法读取图像 {path}: {exc}') from exc


def save_tile(sample: SampleTile, root) -> Tuple[str, str]:
    """
    把 tile 写成图像 + 掩码两个 PNG

    Args:
        sample: SampleTile
        root: 数据集根目录

    Returns:
        Tuple[str, str]: (图像相对路径, 掩码相对路径)
    """
    image_path = get_image_path(sample.scene, sample.gsd, sample.row, sample.col)
    mask_path = get_mask_path(sample.scene, sample.gsd, sample.row, sample.col)
    write_png(sample.image, Path(root) / image_path)
    write_png(sample.mask, Path(root) / mask_path)
    return image_path, mask_path


def load_tile(root, image_path: str, mask_path: str, **fields) -> SampleTile:
    image = read_png(Path(root) / image_path, 'RGB')
    mask = read_png(Path(root) / mask_path, 'L')
    if mask.max(initial=0) > 1:
        raise DataError(f'掩码必须只含 0/1: {mask_path}')
    return SampleTile(image=image, mask=mask, **fields)
