# -*- coding: utf-8 -*-

"""
数据集清单（JSON lines）

第一行是 header：{"kind": "header", "generator_version", "seed", "folds", "tiles"}；
之后每行一个 tile：{"kind": "tile", "tile_id", "scene", "gsd", "row", "col", "fold", "image", "mask"}。
路径相对清单所在目录。
"""
import csv
import hashlib
import json
from collections import Counter
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Dict, Iterable, List, Optional

from .exceptions import EmptyManifestError, ManifestFormatError, MissingFileError
from .storage import load_tile
from .tiling import SampleTile


@dataclass(frozen=True)
class ManifestRecord:
    tile_id: str
    image: str
    mask: str
    gsd: int
    scene: str = ''
    row: int = 0
    col: int = 0
    fold: Optional[int] = None


@dataclass
class Manifest:
    records: List[ManifestRecord]
    seed: int = 0
    generator_version: str = ''
    folds: int = 0
    root: Optional[Path] = field(default=None, compare=False)

    def __len__(self) -> int:
        return len(self.records)

    def with_folds(self, assignment: List[int], folds: int) -> 'Manifest':
        records = [replace(record, fold=int(f)) for record, f in zip(self.records, assignment)]
        return Manifest(records, self.seed, self.generator_version, folds, self.root)

    def select(self, folds: Iterable[int]) -> List[ManifestRecord]:
        wanted = set(folds)
        return [record for record in self.records if record.fold in wanted]

    def gsd_counts(self) -> Dict[int, int]:
        return dict(sorted(Counter(record.gsd for record in self.records).items()))

    def load(self, records: Optional[List[ManifestRecord]] = None) -> List[SampleTile]:
        root = self.root or Path('.')
        return [
            load_tile(root, r.image, r.mask, gsd=r.gsd, tile_id=r.tile_id, scene=r.scene,
                      row=r.row, col=r.col, fold=r.fold)
            for r in (self.records if records is None else records)
        ]


def manifest_lines(manifest: Manifest) -> List[str]:
    header = {
        'kind': 'header',
        'generator_version': manifest.generator_version,
        'seed': manifest.seed,
        'folds': manifest.folds,
        'tiles': len(manifest.records),
    }
    lines = [json.dumps(header, sort_keys=True)]
    for record in manifest.records:
        lines.append(json.dumps(dict(kind='tile', **asdict(record)), sort_keys=True))
    return lines


def write_manifest(manifest: Manifest, path) -> Path:
    """单写者；写完返回路径"""
    if not manifest.records:
        raise EmptyManifestError('清单为空')
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text('\n'.join(manifest_lines(manifest)) + '\n', encoding='utf-8')
    return path


def manifest_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def read_manifest(path, check_paths: bool = True) -> Manifest:
    """
    读取清单并校验

    Args:
        path: manifest.jsonl
        check_paths: 是否检查图像和掩码文件存在

    Returns:
        Manifest: root 为清单所在目录
    """
    path = Path(path)
    if not path.is_file():
        raise MissingFileError(f'清单不存在: {path}')
    lines = [line for line in path.read_text(encoding='utf-8').splitlines() if line.strip()]
    if not lines:
        raise EmptyManifestError(f'清单为空: {path}')
    try:
        header = json.loads(lines[0])
        rows = [json.loads(line) for line in lines[1:]]
    except json.JSONDecodeError as exc:
        raise ManifestFormatError(f'{path}: 第 {exc.lineno} 行不是合法 JSON') from exc
    if header.get('kind') != 'header':
        raise ManifestFormatError(f'{path}: 第一行必须是 header')
    folds = int(header.get('folds', 0))
    records = []
    for number, row in enumerate(rows, start=2):
        if row.pop('kind', None) != 'tile':
            raise ManifestFormatError(f'{path}: 第 {number} 行不是 tile 记录')
        try:
            record = ManifestRecord(**row)
        except TypeError as exc:
            raise ManifestFormatError(f'{path}: 第 {number} 行字段无效: {exc}') from exc
        if record.fold is not None and not 0 <= record.fold < max(folds, 1):
            raise ManifestFormatError(f'{path}: {record.tile_id} 的 fold={record.fold} 超出 [0, {folds})')
        if check_paths:
            for rel in (record.image, record.mask):
                if not (path.parent / rel).is_file():
                    raise MissingFileError(f'{record.tile_id}: 文件不存在 {rel}')
        records.append(record)
    if not records:
        raise EmptyManifestError(f'清单没有 tile: {path}')
    return Manifest(
        records=records,
        seed=int(header.get('seed', 0)),
        generator_version=header.get('generator_version', ''),
        folds=folds,
        root=path.parent,
    )


def write_histogram(manifest: Manifest, path) -> Path:
    """分辨率直方图：gsd_cm, tiles"""
    path = Path(path)
    with path.open('w', newline='', encoding='utf-8') as fh:
        writer = csv.writer(fh)
        writer.writerow(['gsd_cm', 'tiles'])
        for gsd, count in manifest.gsd_counts().items():
            writer.writerow([gsd, count])
    return path
