# -*- coding: utf-8 -*-

"""
矢量建筑场景的生成与多分辨率渲染

世界坐标以米为单位，原点在左上角，y 轴向下。同一个场景可以在任意 gsd（cm/像素）下渲染，
背景纹理是世界坐标上的正弦叠加，所以不同分辨率之间的图像也是一致的。
"""
import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
from PIL import Image, ImageDraw

from .config import GSD_CHOICES
from .exceptions import DataError, UnsupportedGSDError
from .tiling import SampleTile

logger = logging.getLogger(__name__)

GENERATOR_VERSION = 'vector-scenes/1'
SCENE_EXTENT_M = 40.96
MIN_SIDE_M = 1.0
SUPERSAMPLE = 4
BUILDING_KINDS = ('rect', 'rotated', 'L')

Point = Tuple[float, float]


@dataclass(frozen=True)
class Building:
    kind: str
    polygon: Tuple[Point, ...]
    color: Tuple[int, int, int]

    @property
    def area(self) -> float:
        xs = np.array([p[0] for p in self.polygon])
        ys = np.array([p[1] for p in self.polygon])
        return float(abs(np.dot(xs, np.roll(ys, -1)) - np.dot(ys, np.roll(xs, -1))) / 2)

    @property
    def centroid(self) -> Point:
        xs = np.array([p[0] for p in self.polygon])
        ys = np.array([p[1] for p in self.polygon])
        cross = xs * np.roll(ys, -1) - np.roll(xs, -1) * ys
        signed = cross.sum() / 2
        cx = ((xs + np.roll(xs, -1)) * cross).sum() / (6 * signed)
        cy = ((ys + np.roll(ys, -1)) * cross).sum() / (6 * signed)
        return float(cx), float(cy)

    @property
    def bounds(self) -> Tuple[float, float, float, float]:
        xs = [p[0] for p in self.polygon]
        ys = [p[1] for p in self.polygon]
        return min(xs), min(ys), max(xs), max(ys)


@dataclass(frozen=True)
class TextureWave:
    amplitude: float
    fx: float  # 周期/米
    fy: float
    phase: float


@dataclass(frozen=True)
class VectorScene:
    seed: int
    name: str
    extent: float = SCENE_EXTENT_M
    buildings: Tuple[Building, ...] = ()
    base_color: Tuple[float, float, float] = (90.0, 105.0, 80.0)
    channel_gain: Tuple[float, float, float] = (1.0, 1.0, 1.0)
    waves: Tuple[TextureWave, ...] = field(default_factory=tuple)

    def __post_init__(self):
        for index, building in enumerate(self.buildings):
            x0, y0, x1, y1 = building.bounds
            if x0 < 0 or y0 < 0 or x1 > self.extent or y1 > self.extent:
                raise DataError(f'{self.name}: 第 {index} 个建筑超出场景范围 {self.extent} m')


def _rotate(points: List[Point], angle: float, center: Point) -> Tuple[Point, ...]:
    c, s = math.cos(angle), math.sin(angle)
    cx, cy = center
    return tuple((cx + x * c - y * s, cy + x * s + y * c) for x, y in points)


def _footprint(kind: str, rng: np.random.Generator) -> Tuple[List[Point], float]:
    """以原点为中心的轮廓和旋转角"""
    w, h = rng.uniform(3.0, 12.0, size=2)
    if kind == 'L':
        a = rng.uniform(MIN_SIDE_M, w - MIN_SIDE_M)
        b = rng.uniform(MIN_SIDE_M, h - MIN_SIDE_M)
        points = [(0, 0), (w, 0), (w, b), (a, b), (a, h), (0, h)]
        angle = rng.choice([0.0, math.pi / 2]) if rng.random() < 0.5 else rng.uniform(0, math.pi / 2)
    else:
        points = [(0, 0), (w, 0), (w, h), (0, h)]
        angle = rng.uniform(0, math.pi / 2) if kind == 'rotated' else 0.0
    return [(x - w / 2, y - h / 2) for x, y in points], float(angle)


def generate_scene(seed: int, name: Optional[str] = None, extent: float = SCENE_EXTENT_M,
                   n_buildings: Optional[int] = None) -> VectorScene:
    """
    生成一个随机场景：轴对齐矩形、旋转矩形、L 形建筑，互不重叠，最短边不小于 1 m
    """
    rng = np.random.default_rng(seed)
    target = int(n_buildings if n_buildings is not None else rng.integers(10, 22))
    buildings: List[Building] = []
    circles: List[Tuple[float, float, float]] = []
    attempts = 0
    while len(buildings) < target and attempts < target * 50:
        attempts += 1
        kind = BUILDING_KINDS[int(rng.integers(len(BUILDING_KINDS)))]
        outline, angle = _footprint(kind, rng)
        radius = max(math.hypot(x, y) for x, y in outline)
        margin = radius + 0.5
        if 2 * margin >= extent:
            continue
        center = (float(rng.uniform(margin, extent - margin)), float(rng.uniform(margin, extent - margin)))
        if any(math.hypot(center[0] - cx, center[1] - cy) < radius + r + 1.0 for cx, cy, r in circles):
            continue
        color = tuple(int(v) for v in rng.integers(150, 240, size=3))
        buildings.append(Building(kind=kind, polygon=_rotate(outline, angle, center), color=color))
        circles.append((center[0], center[1], radius))

    waves = tuple(
        TextureWave(
            amplitude=float(rng.uniform(4.0, 16.0)),
            fx=float(rng.uniform(-0.5, 0.5)),
            fy=float(rng.uniform(-0.5, 0.5)),
            phase=float(rng.uniform(0, 2 * math.pi)),
        )
        for _ in range(4)
    )
    return VectorScene(
        seed=seed,
        name=name or f'scene{seed}',
        extent=extent,
        buildings=tuple(buildings),
        base_color=tuple(float(v) for v in rng.uniform(60, 120, size=3)),
        channel_gain=tuple(float(v) for v in rng.uniform(0.6, 1.2, size=3)),
        waves=waves,
    )


def raster_size(extent: float, gsd: int, tile_px: int) -> int:
    """场景覆盖的像素数向上取整到 tile_px 的倍数"""
    pixels = round(extent * 100.0 / gsd, 6)
    return max(1, math.ceil(pixels / tile_px - 1e-9)) * tile_px


def _background(scene: VectorScene, size: int, scale: float) -> np.ndarray:
    coords = (np.arange(size, dtype=np.float64) + 0.5) / scale
    texture = np.zeros((size, size), dtype=np.float64)
    for wave in scene.waves:
        ax = 2 * math.pi * wave.fx * coords + wave.phase
        ay = 2 * math.pi * wave.fy * coords
        # sin(ax + ay) 拆成外积
        texture += wave.amplitude * (np.outer(np.cos(ay), np.sin(ax)) + np.outer(np.sin(ay), np.cos(ax)))
    gain = np.asarray(scene.channel_gain)
    return np.asarray(scene.base_color)[None, None, :] + texture[:, :, None] * gain[None, None, :]


def _coverage(polygon_px: List[Point], x0: int, y0: int, width: int, height: int) -> np.ndarray:
    """包围盒内每个像素被多边形覆盖的比例（超采样）"""
    canvas = Image.new('L', (width * SUPERSAMPLE, height * SUPERSAMPLE), 0)
    points = [((x - x0) * SUPERSAMPLE - 0.5, (y - y0) * SUPERSAMPLE - 0.5) for x, y in polygon_px]
    ImageDraw.Draw(canvas).polygon(points, fill=255)
    fine = np.asarray(canvas, dtype=np.float32) / 255.0
    return fine.reshape(height, SUPERSAMPLE, width, SUPERSAMPLE).mean(axis=(1, 3))


def render(scene: VectorScene, gsd: int, tile_px: int) -> SampleTile:
    """
    在给定 gsd 下渲染整幅场景

    图像为抗锯齿结果，掩码为覆盖率 >= 0.5 的像素。覆盖不到任何像素的建筑被丢弃并记录日志。

    Returns:
        SampleTile: tile_id 为 "{scene}_{gsd}cm"
    """
    if gsd not in GSD_CHOICES:
        raise UnsupportedGSDError(f'不支持的 gsd: {gsd}，可选 {GSD_CHOICES}')
    if tile_px < 32 or tile_px % 32:
        raise DataError(f'tile_px 必须是 32 的倍数: {tile_px}')
    size = raster_size(scene.extent, gsd, tile_px)
    scale = 100.0 / gsd
    image = _background(scene, size, scale)
    mask = np.zeros((size, size), dtype=np.uint8)
    dropped = 0
    for index, building in enumerate(scene.buildings):
        polygon = [(x * scale, y * scale) for x, y in building.polygon]
        bx0, by0, bx1, by1 = (v * scale for v in building.bounds)
        x0, y0 = max(int(math.floor(bx0)), 0), max(int(math.floor(by0)), 0)
        x1, y1 = min(int(math.ceil(bx1)), size), min(int(math.ceil(by1)), size)
        if x1 <= x0 or y1 <= y0:
            cover = np.zeros((0, 0), dtype=np.float32)
        else:
            cover = _coverage(polygon, x0, y0, x1 - x0, y1 - y0)
        inside = cover >= 0.5
        if not inside.any():
            dropped += 1
            logger.info('%s @ %dcm: 第 %d 个建筑 (%.2f m²) 小于 1 像素，已丢弃', scene.name, gsd, index, building.area)
            continue
        region = image[y0:y1, x0:x1]
        alpha = cover[:, :, None]
        image[y0:y1, x0:x1] = region * (1 - alpha) + np.asarray(building.color)[None, None, :] * alpha
        mask[y0:y1, x0:x1] |= inside.astype(np.uint8)
    if dropped:
        logger.info('%s @ %dcm: 共丢弃 %d 个建筑', scene.name, gsd, dropped)
    return SampleTile(
        image=np.clip(np.rint(image), 0, 255).astype(np.uint8),
        mask=mask,
        gsd=gsd,
        tile_id=f'{scene.name}_{gsd}cm',
        scene=scene.name,
    )
