# -*- coding: utf-8 -*-

"""
感受野报告：逐层表格 + 金字塔尺度枚举 + 输出步长交叉校验

文本格式每层一行：name  k_eff  R  jump  stride；同时生成可序列化的 dict。
"""
import logging
from typing import Any, Dict, List, Optional

from .calculus import LayerSpec, analyze_chain, enumerate_pyramid_scales

logger = logging.getLogger(__name__)

RECURRENCE_NOTE = 'R += (k_eff - 1) * j; j *= s; upsample: j /= factor'


def model_chain(config) -> List[LayerSpec]:
    """
    encoder 卷积链加上金字塔模块最长路径

    Dense ASPP 取穿过所有分支的级联路径（每个分支 1x1 降维 + 3x3 空洞）；
    并行 ASPP 取空洞率最大的分支。config 为 scinet.config.ModelConfig。
    """
    chain = list(config.encoder_specs())
    if config.pyramid == 'dense-aspp':
        for i, rate in enumerate(config.dense_rates):
            chain.append(LayerSpec('conv', kernel=1, name=f'dense.{i}.reduce'))
            chain.append(LayerSpec('conv', kernel=3, dilation=rate, name=f'dense.{i}.r{rate}'))
        chain.append(LayerSpec('conv', kernel=1, name='dense.project'))
    elif config.pyramid == 'aspp':
        rate = max(config.aspp_rates)
        chain.append(LayerSpec('conv', kernel=3, dilation=rate, name=f'aspp.r{rate}'))
        chain.append(LayerSpec('conv', kernel=1, name='aspp.project'))
    return chain


def _pyramid_section(topology: str, rates) -> Dict[str, Any]:
    scales = enumerate_pyramid_scales(topology, rates, k=3)
    return {
        'topology': topology,
        'rates': list(scales.rates),
        'kernels': scales.branch_kernels,
        'max_rf': scales.maximum,
        'combinations': scales.count,
        'distinct': scales.distinct,
        'multiplicity': {str(k): v for k, v in sorted(scales.values.items())},
    }


def build_rf_report(config, measured_stride: Optional[int] = None) -> Dict[str, Any]:
    states = analyze_chain(model_chain(config))
    encoder_len = len(config.encoder_specs())
    layers = [
        {
            'name': state.name,
            'k_eff': state.kernel_effective,
            'receptive_field': state.receptive_field,
            'jump': state.jump,
            'output_stride': state.output_stride,
        }
        for state in states
    ]
    analyzer_stride = states[encoder_len - 1].output_stride
    report = {
        'config_digest': config.digest(),
        'pyramid': config.pyramid,
        'stage5_mode': config.stage5_mode,
        'recurrence': RECURRENCE_NOTE,
        'layers': layers,
        'output_stride': analyzer_stride,
        'final_receptive_field': states[-1].receptive_field,
        'dense': _pyramid_section('dense', config.dense_rates),
        'parallel': _pyramid_section('parallel', config.aspp_rates),
        'measured_stride': measured_stride,
        'stride_check': None if measured_stride is None else measured_stride == analyzer_stride,
    }
    if report['stride_check'] is False:
        logger.warning('输出步长不一致: analyzer=%s, measured=%s', analyzer_stride, measured_stride)
    return report


def render_rf_report(report: Dict[str, Any]) -> str:
    lines = [f"{'layer':<20}{'k_eff':>7}{'R':>7}{'jump':>7}{'stride':>8}"]
    for layer in report['layers']:
        lines.append(
            f"{layer['name']:<20}{layer['k_eff']:>7}{layer['receptive_field']:>7}"
            f"{layer['jump']:>7}{layer['output_stride']:>8}"
        )
    lines.append(f"recurrence: {report['recurrence']}")
    lines.append(f"output stride {report['output_stride']}")
    dense = report['dense']
    lines.append(
        f"dense-aspp rates {tuple(dense['rates'])}: kernels {' '.join(map(str, dense['kernels']))}, "
        f"max RF {dense['max_rf']}, combinations {dense['combinations']}, "
        f"distinct {len(dense['distinct'])} {dense['distinct']}"
    )
    parallel = report['parallel']
    lines.append(
        f"aspp rates {tuple(parallel['rates'])}: kernels {' '.join(map(str, parallel['kernels']))}, "
        f"max RF {parallel['max_rf']}"
    )
    if report['measured_stride'] is None:
        lines.append('cross-check: not measured')
    else:
        verdict = 'OK' if report['stride_check'] else 'MISMATCH'
        lines.append(
            f"cross-check: analyzer stride {report['output_stride']} == "
            f"measured stride {report['measured_stride']} {verdict}"
        )
    return '\n'.join(lines) + '\n'
