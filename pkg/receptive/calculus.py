# -*- coding: utf-8 -*-

"""
感受野静态计算

标准递推（从输入向输出）：
    k_eff = k + (k - 1)(r - 1)
    R     = R + (k_eff - 1) * j
    j     = j * s
串联两层时 R_new = R_1 + R_2 - 1（步长为 1 的特例）。
"""
import itertools
from collections import Counter
from dataclasses import dataclass, field
from functools import reduce
from typing import Iterable, List, Sequence, Tuple

LAYER_KINDS = ('conv', 'pool', 'upsample', 'identity')
TOPOLOGIES = ('parallel', 'dense')


class LayerSpecError(ValueError):
    """层描述无效"""


@dataclass(frozen=True)
class LayerSpec:
    """一层的静态描述；upsample 的 stride 表示放大倍数"""

    kind: str = 'conv'
    kernel: int = 1
    stride: int = 1
    dilation: int = 1
    name: str = ''

    @property
    def effective_kernel(self) -> int:
        if self.kind in ('conv', 'pool'):
            return effective_kernel(self.kernel, self.dilation)
        return 1


@dataclass(frozen=True)
class RFState:
    """累计感受野 R、跳步 j（相邻输出在输入上的像素距离）与输出步长"""

    receptive_field: int = 1
    jump: int = 1
    output_stride: int = 1
    name: str = 'input'
    kernel_effective: int = 1


def effective_kernel(k: int, r: int) -> int:
    """空洞卷积的等效核尺寸 k + (k - 1)(r - 1)"""
    if k < 1 or r < 1:
        raise ValueError(f'k 和 r 必须 >= 1: k={k}, r={r}')
    return k + (k - 1) * (r - 1)


def stack_rf(r1: int, r2: int) -> int:
    """串联两层（步长 1）后的感受野"""
    if r1 < 1 or r2 < 1:
        raise ValueError(f'感受野必须 >= 1: {r1}, {r2}')
    return r1 + r2 - 1


def fold_rf(values: Iterable[int]) -> int:
    """依次串联，空序列为 1（直通）"""
    return reduce(stack_rf, values, 1)


def _validate(spec: LayerSpec, index: int) -> None:
    if spec.kind not in LAYER_KINDS:
        raise LayerSpecError(f'第 {index} 层 ({spec.name or spec.kind}) 类型未知: {spec.kind}')
    if spec.kernel < 1 or spec.stride < 1 or spec.dilation < 1:
        raise LayerSpecError(
            f'第 {index} 层 ({spec.name or spec.kind}) 参数必须 >= 1: '
            f'k={spec.kernel}, s={spec.stride}, r={spec.dilation}'
        )


def analyze_chain(layers: Sequence[LayerSpec]) -> List[RFState]:
    """
    逐层计算累计感受野

    Args:
        layers: 从输入开始的层序列

    Returns:
        List[RFState]: 每层之后的状态
    """
    if not layers:
        raise LayerSpecError('层序列为空')
    rf, jump = 1, 1
    states = []
    for index, spec in enumerate(layers):
        _validate(spec, index)
        k_eff = spec.effective_kernel
        if spec.kind in ('conv', 'pool'):
            rf = rf + (k_eff - 1) * jump
            jump = jump * spec.stride
        elif spec.kind == 'upsample':
            if jump % spec.stride:
                raise LayerSpecError(
                    f'第 {index} 层 ({spec.name or spec.kind}) 上采样 {spec.stride}x 后步长 {jump}/{spec.stride} 不是整数'
                )
            jump = jump // spec.stride
        states.append(RFState(
            receptive_field=rf,
            jump=jump,
            output_stride=jump,
            name=spec.name or f'{spec.kind}{index}',
            kernel_effective=k_eff,
        ))
    return states


@dataclass
class PyramidScales:
    """金字塔模块的感受野尺度：组合列表及按数值的重数"""

    topology: str
    rates: Tuple[int, ...]
    kernel: int
    combinations: List[Tuple[Tuple[int, ...], int]] = field(default_factory=list)

    @property
    def values(self) -> Counter:
        return Counter(rf for _, rf in self.combinations)

    @property
    def distinct(self) -> List[int]:
        return sorted(self.values)

    @property
    def maximum(self) -> int:
        return max(rf for _, rf in self.combinations)

    @property
    def count(self) -> int:
        return len(self.combinations)

    @property
    def branch_kernels(self) -> List[int]:
        return [effective_kernel(self.kernel, r) for r in self.rates]


def enumerate_pyramid_scales(topology: str, rates: Sequence[int], k: int = 3) -> PyramidScales:
    """
    枚举金字塔模块的感受野

    parallel：每个分支一个尺度；
    dense：级联中每个分支子集（含空集，即直通）一个尺度，共 2^len(rates) 个
    """
    if topology not in TOPOLOGIES:
        raise ValueError(f'未知拓扑: {topology}')
    if not rates:
        raise ValueError('rates 不能为空')
    rates = tuple(int(r) for r in rates)
    scales = PyramidScales(topology=topology, rates=rates, kernel=k)
    kernels = [effective_kernel(k, r) for r in rates]
    if topology == 'parallel':
        scales.combinations = [((r,), kern) for r, kern in zip(rates, kernels)]
        return scales
    for mask in itertools.product((False, True), repeat=len(rates)):
        chosen = tuple(r for r, keep in zip(rates, mask) if keep)
        rf = fold_rf(kern for kern, keep in zip(kernels, mask) if keep)
        scales.combinations.append((chosen, rf))
    return scales
