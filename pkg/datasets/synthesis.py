# -*- coding: utf-8 -*-

"""
合成数据集：N 个场景 x 每个 gsd 渲染 -> 切分 -> 写 PNG -> 分层划分 -> 清单
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Dict, List, Tuple

import numpy as np
from django.conf import settings

from .config import DataConfig
from .exceptions import DataError
from .folds import stratified_kfold
from .manifest import Manifest, ManifestRecord, write_histogram, write_manifest
from .scenes import GENERATOR_VERSION, SCENE_EXTENT_M, generate_scene, raster_size, render
from .storage import HISTOGRAM_NAME, get_manifest_path, save_tile
from .tiling import SampleTile, tile_sample

logger = logging.getLogger(__name__)


def scene_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])


def _render_job(args: Tuple[int, int, DataConfig, int]) -> List[SampleTile]:
    seed, index, config, gsd = args
    scene = generate_scene(scene_seed(seed, index), name=f'scene{index:03d}')
    return tile_sample(render(scene, gsd, config.tile_px), config.tile_window, config.tile_stride)


def subsample_by_weight(tiles: List[SampleTile], weights: Dict[int, float], seed: int) -> List[SampleTile]:
    """
    按目标比例保留各分辨率的 tile

    在每类都够用的前提下取最大的总数 T，第 g 类保留 round(T * w_g / sum(w)) 个。
    """
    by_gsd: Dict[int, List[int]] = {}
    for index, sample in enumerate(tiles):
        by_gsd.setdefault(sample.gsd, []).append(index)
    total_weight = sum(weights.values())
    shares = {g: w / total_weight for g, w in weights.items()}
    budget = min(len(by_gsd.get(g, [])) / share for g, share in shares.items())
    rng = np.random.default_rng(seed)
    keep: List[int] = []
    for gsd in sorted(by_gsd):
        members = by_gsd[gsd]
        wanted = min(len(members), max(1, int(round(budget * shares[gsd]))))
        chosen = rng.choice(len(members), size=wanted, replace=False)
        keep.extend(members[i] for i in sorted(chosen))
    return [tiles[i] for i in sorted(keep)]


def synthesize(out_dir, config: DataConfig, seed: int = 0) -> Manifest:
    """
    生成完整的数据集目录

    相同 seed 与 config 生成的清单逐字节相同。

    Args:
        out_dir: 输出目录
        config: DataConfig
        seed: 数据集种子

    Returns:
        Manifest: 已写入 out_dir/manifest.jsonl
    """
    out_dir = Path(out_dir)
    jobs = [(seed, index, config, gsd) for index in range(config.scenes) for gsd in config.gsds]
    workers = max(1, int(getattr(settings, 'SCISEG_NUM_THREADS', 1)))
    if workers == 1:
        results = [_render_job(job) for job in jobs]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_render_job, jobs))
    tiles = [sample for batch in results for sample in batch]
    logger.info('渲染完成: %d 个场景 x %d 个分辨率, %d 个 tile', config.scenes, len(config.gsds), len(tiles))

    weights = config.weights()
    if weights is not None:
        tiles = subsample_by_weight(tiles, weights, seed)
        logger.info('按分辨率权重保留 %d 个 tile', len(tiles))
    if not tiles:
        raise DataError('没有生成任何 tile')

    records = []
    for sample in tiles:
        image_path, mask_path = save_tile(sample, out_dir)
        records.append(ManifestRecord(
            tile_id=sample.tile_id, image=image_path, mask=mask_path, gsd=sample.gsd,
            scene=sample.scene, row=sample.row, col=sample.col,
        ))
    manifest = Manifest(records, seed=seed, generator_version=GENERATOR_VERSION, root=out_dir)
    manifest = stratified_kfold(manifest, k=config.folds, seed=seed)
    write_manifest(manifest, get_manifest_path(out_dir))
    write_histogram(manifest, out_dir / HISTOGRAM_NAME)
    logger.info('清单已写入 %s，各分辨率 tile 数 %s', get_manifest_path(out_dir), manifest.gsd_counts())
    return manifest


def expected_base_rasters(config: DataConfig) -> int:
    return config.scenes * len(config.gsds)


def tiles_per_scene(config: DataConfig) -> Dict[int, int]:
    """不做加权抽样时每个场景在各分辨率下的 tile 数"""
    counts = {}
    for gsd in config.gsds:
        size = raster_size(SCENE_EXTENT_M, gsd, config.tile_px)
        per_side = (size - config.tile_window) // config.tile_stride + 1 if size >= config.tile_window else 0
        counts[gsd] = per_side * per_side
    return counts
