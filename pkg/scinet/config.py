# -*- coding: utf-8 -*-

"""
模型结构配置

预设：
- tiny: 测试用的极小配置
- desk: 默认桌面规模，stage 宽度 (32, 64, 128, 256, 512)
- full: 完整规模的通道几何（stage 5 为 888 通道，Dense ASPP 4 x 256）
- baseline: 消融基线，无金字塔模块，stage 5 步长 2（输出步长 32）
"""
import hashlib
import json
from dataclasses import asdict, dataclass, fields, replace
from typing import Any, Dict, List, Tuple

from receptive.calculus import LayerSpec

STAGE5_MODES = ('strided', 'dilated-r2')
PYRAMIDS = ('none', 'aspp', 'dense-aspp')


class ModelConfigError(ValueError):
    """模型配置不一致"""


@dataclass(frozen=True)
class ModelConfig:
    stage_widths: Tuple[int, ...] = (32, 64, 128, 256, 512)
    stage_blocks: Tuple[int, ...] = (1, 1, 1, 2, 2)
    stage5_mode: str = 'dilated-r2'
    pyramid: str = 'dense-aspp'
    dense_rates: Tuple[int, ...] = (3, 6, 12, 18)
    aspp_rates: Tuple[int, ...] = (8, 12, 18)
    branch_channels: int = 64
    decoder_widths: Tuple[int, ...] = (128, 64, 32, 16)
    head_channels: int = 1
    in_channels: int = 3

    def __post_init__(self):
        for name in ('stage_widths', 'stage_blocks', 'dense_rates', 'aspp_rates', 'decoder_widths'):
            object.__setattr__(self, name, tuple(int(v) for v in getattr(self, name)))
        self.validate()

    def validate(self) -> None:
        if len(self.stage_widths) != 5 or len(self.stage_blocks) != 5:
            raise ModelConfigError(f'encoder 需要 5 个 stage: widths={self.stage_widths}, blocks={self.stage_blocks}')
        if len(self.decoder_widths) != 4:
            raise ModelConfigError(f'decoder 需要 4 个宽度: {self.decoder_widths}')
        if min(self.stage_widths + self.decoder_widths) < 1 or min(self.stage_blocks) < 1:
            raise ModelConfigError('宽度与 block 数必须为正整数')
        if self.stage5_mode not in STAGE5_MODES:
            raise ModelConfigError(f'stage5_mode 必须是 {STAGE5_MODES} 之一: {self.stage5_mode}')
        if self.pyramid not in PYRAMIDS:
            raise ModelConfigError(f'pyramid 必须是 {PYRAMIDS} 之一: {self.pyramid}')
        if not self.dense_rates or not self.aspp_rates or min(self.dense_rates + self.aspp_rates) < 1:
            raise ModelConfigError('空洞率必须是非空的正整数序列')
        if self.branch_channels < 1:
            raise ModelConfigError(f'branch_channels 必须为正: {self.branch_channels}')
        if self.head_channels != 1:
            raise ModelConfigError(f'只支持单通道输出: head_channels={self.head_channels}')
        if self.in_channels < 1:
            raise ModelConfigError(f'in_channels 必须为正: {self.in_channels}')

    # ---------- 派生量 ----------

    @property
    def output_stride(self) -> int:
        return 16 if self.stage5_mode == 'dilated-r2' else 32

    @property
    def stage_strides(self) -> Tuple[int, ...]:
        last = 16 if self.stage5_mode == 'dilated-r2' else 32
        return (2, 4, 8, 16, last)

    @property
    def pyramid_rates(self) -> Tuple[int, ...]:
        if self.pyramid == 'dense-aspp':
            return self.dense_rates
        if self.pyramid == 'aspp':
            return self.aspp_rates
        return ()

    @property
    def pyramid_out_channels(self) -> int:
        return self.stage_widths[4] if self.pyramid == 'none' else self.decoder_widths[0]

    def dense_branch_inputs(self) -> List[int]:
        """Dense ASPP 每个分支的输入通道数"""
        return [self.stage_widths[4] + i * self.branch_channels for i in range(len(self.dense_rates))]

    def dense_concat_channels(self) -> int:
        return self.stage_widths[4] + len(self.dense_rates) * self.branch_channels

    def aspp_concat_channels(self) -> int:
        return (len(self.aspp_rates) + 2) * self.branch_channels

    def encoder_specs(self) -> List[LayerSpec]:
        """encoder 的卷积链，用于感受野与输出步长分析"""
        specs = []
        for stage, blocks in enumerate(self.stage_blocks, start=1):
            for block in range(blocks):
                if block == 0 and stage == 5 and self.stage5_mode == 'dilated-r2':
                    specs.append(LayerSpec('conv', kernel=3, stride=1, dilation=2, name=f'stage{stage}.{block}'))
                elif block == 0:
                    specs.append(LayerSpec('conv', kernel=3, stride=2, dilation=1, name=f'stage{stage}.{block}'))
                else:
                    specs.append(LayerSpec('conv', kernel=3, stride=1, dilation=1, name=f'stage{stage}.{block}'))
        return specs

    # ---------- 序列化 ----------

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        for key, value in data.items():
            if isinstance(value, tuple):
                data[key] = list(value)
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'ModelConfig':
        """支持 preset 键；显式给出的键覆盖预设"""
        data = dict(data or {})
        preset_name = data.pop('preset', None)
        base = preset(preset_name) if preset_name else cls()
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ModelConfigError(f'未知的模型配置项: {unknown}')
        try:
            return replace(base, **data)
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ModelConfigError):
                raise
            raise ModelConfigError(f'模型配置无效: {exc}') from exc

    def digest(self) -> str:
        payload = json.dumps(self.to_dict(), sort_keys=True, separators=(',', ':')).encode('utf-8')
        return hashlib.sha256(payload).hexdigest()


PRESETS: Dict[str, Dict[str, Any]] = {
    'tiny': {
        'stage_widths': (4, 8, 8, 16, 16),
        'stage_blocks': (1, 1, 1, 1, 1),
        'branch_channels': 4,
        'decoder_widths': (16, 8, 8, 4),
    },
    'desk': {},
    'full': {
        'stage_widths': (32, 48, 120, 336, 888),
        'stage_blocks': (1, 1, 1, 1, 1),
        'branch_channels': 256,
        'decoder_widths': (256, 128, 64, 32),
    },
    'baseline': {
        'pyramid': 'none',
        'stage5_mode': 'strided',
    },
}


# 别名与目标预设生成完全相同的配置
PRESET_ALIASES = {'paper': 'full'}


def preset(name: str, **overrides) -> ModelConfig:
    name = PRESET_ALIASES.get(name, name)
    if name not in PRESETS:
        raise ModelConfigError(f'未知预设: {name}，可选 {sorted(PRESETS)}')
    values = dict(PRESETS[name])
    values.update(overrides)
    return ModelConfig(**values)
