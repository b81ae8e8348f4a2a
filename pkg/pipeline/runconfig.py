# -*- coding: utf-8 -*-

"""
运行配置：一个 JSON 文件，四个小节加两个顶层字段

    {
      "seed": 0,
      "output_dir": "runs/desk",
      "model":   {"preset": "desk", ...},     -> scinet.config.ModelConfig
      "train":   {"epochs": 50, ...},         -> training.config.TrainConfig
      "data":    {"manifest": "...", ...},    -> datasets.config.DataConfig
      "metrics": {"threshold": 0.5, ...}      -> metrics.scoring.MetricConfig
    }

优先级：命令行参数 > 配置文件 > 默认值。未知的键一律报错。
顶层 seed 会传给 train.seed（除非 train 小节显式给出）。
"""
import copy
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Mapping, Optional

from django.conf import settings

from datasets.config import DataConfig
from datasets.exceptions import DataError
from metrics.scoring import MetricConfig
from scinet.config import ModelConfig
from training.config import TrainConfig

SECTIONS = ('model', 'train', 'data', 'metrics')
TOP_LEVEL = ('seed', 'output_dir')


class ConfigError(ValueError):
    """配置文件或参数错误（CLI 退出码 1）"""


@dataclass(frozen=True)
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)
    metrics: MetricConfig = field(default_factory=MetricConfig)
    seed: int = 0
    output_dir: str = ''
    model_given: bool = field(default=False, compare=False)

    @property
    def output_path(self) -> Path:
        return Path(self.output_dir) if self.output_dir else Path(settings.SCISEG_OUTPUT_DIR)

    def to_dict(self) -> Dict[str, Any]:
        return {
            'seed': self.seed,
            'output_dir': self.output_dir,
            'model': self.model.to_dict(),
            'train': self.train.to_dict(),
            'data': self.data.to_dict(),
            'metrics': self.metrics.to_dict(),
        }

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode('utf-8')).hexdigest()


def read_config_file(path) -> Dict[str, Any]:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f'配置文件不存在: {path}')
    try:
        data = json.loads(path.read_text(encoding='utf-8'))
    except json.JSONDecodeError as exc:
        raise ConfigError(f'{path}: 第 {exc.lineno} 行不是合法 JSON: {exc.msg}') from exc
    if not isinstance(data, dict):
        raise ConfigError(f'{path}: 顶层必须是 JSON 对象')
    return data


def apply_overrides(data: Mapping[str, Any], overrides: Optional[Mapping[str, Any]]) -> Dict[str, Any]:
    """
    把 "section.key" 形式的覆盖项合并进配置字典；值为 None 的项忽略

    Args:
        data: 配置文件内容
        overrides: {'seed': 3, 'train.epochs': 2, ...}

    Returns:
        Dict: 新字典，data 不变
    """
    merged = copy.deepcopy(dict(data))
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        section, _, name = key.partition('.')
        if not name:
            merged[section] = value
            continue
        if section not in SECTIONS:
            raise ConfigError(f'未知的配置小节: {section}')
        target = merged.setdefault(section, {})
        if not isinstance(target, dict):
            raise ConfigError(f'配置小节 {section} 必须是 JSON 对象')
        target[name] = value
    return merged


def build_run_config(data: Mapping[str, Any]) -> RunConfig:
    unknown = sorted(set(data) - set(SECTIONS) - set(TOP_LEVEL))
    if unknown:
        raise ConfigError(f'未知的配置项: {unknown}')
    for section in SECTIONS:
        if not isinstance(data.get(section, {}), dict):
            raise ConfigError(f'配置小节 {section} 必须是 JSON 对象')
    try:
        seed = int(data.get('seed', 0))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f'seed 必须是整数: {data.get("seed")!r}') from exc

    train = dict(data.get('train', {}))
    train.setdefault('seed', seed)
    parsers = {
        'model': ModelConfig.from_dict,
        'train': TrainConfig.from_dict,
        'data': DataConfig.from_dict,
        'metrics': MetricConfig.from_dict,
    }
    sections = {}
    for section, parse in parsers.items():
        values = train if section == 'train' else data.get(section, {})
        try:
            sections[section] = parse(values)
        except (ValueError, TypeError, DataError) as exc:
            raise ConfigError(f'[{section}] {exc}') from exc
    return RunConfig(
        seed=seed,
        output_dir=str(data.get('output_dir', '') or ''),
        model_given=bool(data.get('model')),
        **sections,
    )


def load_run_config(path=None, overrides: Optional[Mapping[str, Any]] = None) -> RunConfig:
    """读取配置文件（可选）并应用命令行覆盖项"""
    data = read_config_file(path) if path else {}
    overrides = dict(overrides or {})
    # 命令行给出的 seed 同时覆盖文件中的 train.seed
    if overrides.get('seed') is not None and overrides.get('train.seed') is None:
        overrides['train.seed'] = overrides['seed']
    return build_run_config(apply_overrides(data, overrides))


def write_run_config(config: RunConfig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(config.to_dict(), indent=2, sort_keys=True) + '\n', encoding='utf-8')
    return path
