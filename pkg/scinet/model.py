# -*- coding: utf-8 -*-

"""
Sci-Net 模型组装

encoder (5 stage) -> 金字塔模块 (dense-aspp / aspp / none) -> 4 个 decoder block -> 1x1 conv + sigmoid
"""
import logging
from typing import Dict, List, Optional

import numpy as np

from tensors import ops
from tensors.layers import Module, Sequential, parameter_count
from tensors.precision import as_tensor

from .blocks import ASPP, DecoderBlock, DenseASPP, encoder_stage, segmentation_head
from .config import ModelConfig, ModelConfigError

logger = logging.getLogger(__name__)

INPUT_MULTIPLE = 32


class SciNet(Module):
    def __init__(self, config: ModelConfig, rng: np.random.Generator):
        super().__init__()
        self.config = config
        widths = config.stage_widths
        self.encoder = Sequential()
        in_channels = config.in_channels
        for stage, (width, blocks) in enumerate(zip(widths, config.stage_blocks), start=1):
            if stage == 5 and config.stage5_mode == 'dilated-r2':
                self.encoder.append(encoder_stage(in_channels, width, blocks, stride=1, dilation=2, rng=rng))
            else:
                self.encoder.append(encoder_stage(in_channels, width, blocks, stride=2, rng=rng))
            in_channels = width

        if config.pyramid == 'dense-aspp':
            self.pyramid = DenseASPP(widths[4], config.dense_rates, config.branch_channels,
                                     config.decoder_widths[0], rng=rng)
        elif config.pyramid == 'aspp':
            self.pyramid = ASPP(widths[4], config.aspp_rates, config.branch_channels,
                                config.decoder_widths[0], rng=rng)
        else:
            self.pyramid = None

        self.decoder = Sequential()
        running = config.pyramid_out_channels
        for i, out in enumerate(config.decoder_widths):
            self.decoder.append(DecoderBlock(running, widths[3 - i], out, rng=rng))
            running = out
        self.head = segmentation_head(running, rng=rng)
        self._features: List[np.ndarray] = []

    # ---------- 前向 ----------

    def check_input(self, x: np.ndarray) -> np.ndarray:
        x = as_tensor(x, 'image')
        n, c, h, w = x.shape
        if c != self.config.in_channels:
            raise ops.ShapeError(f'输入通道数 {c} 与配置 in_channels={self.config.in_channels} 不一致')
        if h % INPUT_MULTIPLE or w % INPUT_MULTIPLE:
            raise ops.ShapeError(f'输入尺寸 {h}x{w} 必须能被 {INPUT_MULTIPLE} 整除')
        return x

    def encode(self, x: np.ndarray) -> List[np.ndarray]:
        x = self.check_input(x)
        features = []
        for stage in self.encoder:
            x = stage.forward(x)
            features.append(x)
        self._features = features
        return features

    def pyramid_forward(self, stage5: np.ndarray) -> np.ndarray:
        return stage5 if self.pyramid is None else self.pyramid.forward(stage5)

    def decode(self, pyramid_out: np.ndarray, skips: List[np.ndarray]) -> np.ndarray:
        if len(skips) < 4:
            raise ops.ShapeError(f'decoder 需要 stage 1-4 的特征, 实际 {len(skips)} 个')
        x = pyramid_out
        for i, block in enumerate(self.decoder):
            x = block.forward(x, skips[3 - i])
        return self.head.forward(x)

    def forward(self, x: np.ndarray) -> np.ndarray:
        features = self.encode(x)
        return self.decode(self.pyramid_forward(features[4]), features)

    # ---------- 反向 ----------

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        grad = self.head.backward(grad_out)
        skip_grads: Dict[int, np.ndarray] = {}
        for i in reversed(range(len(self.decoder))):
            grad, skip_grads[3 - i] = self.decoder[i].backward(grad)
        if self.pyramid is not None:
            grad = self.pyramid.backward(grad)
        for index in reversed(range(len(self.encoder))):
            if index in skip_grads:
                grad = grad + skip_grads[index]
            grad = self.encoder[index].backward(grad)
        return grad


def build_model(config: ModelConfig, seed: int = 0) -> SciNet:
    """按构造顺序从同一个随机流初始化参数；相同 config 与 seed 得到相同的参数"""
    config.validate()
    model = SciNet(config, np.random.default_rng(seed))
    logger.debug('模型已构建: digest=%s, 参数量=%d', config.digest()[:12], parameter_count(model))
    return model


def encoder_forward(model: SciNet, image: np.ndarray) -> List[np.ndarray]:
    return model.encode(image)


def dense_aspp_forward(model: SciNet, stage5: np.ndarray) -> np.ndarray:
    if not isinstance(model.pyramid, DenseASPP):
        raise ModelConfigError(f'模型的金字塔模块不是 dense-aspp: {model.config.pyramid}')
    return model.pyramid.forward(stage5)


def aspp_forward(model: SciNet, stage5: np.ndarray) -> np.ndarray:
    if not isinstance(model.pyramid, ASPP):
        raise ModelConfigError(f'模型的金字塔模块不是 aspp: {model.config.pyramid}')
    return model.pyramid.forward(stage5)


def decoder_forward(model: SciNet, pyramid_out: np.ndarray, skips: List[np.ndarray]) -> np.ndarray:
    return model.decode(pyramid_out, skips)


def predict(model: SciNet, image: np.ndarray) -> np.ndarray:
    """eval 模式下的完整尺度推理，返回 (n, 1, h, w) 概率图；不改变模型原来的模式"""
    was_training = model.training
    model.eval()
    try:
        return model.forward(image)
    finally:
        model.train(was_training)


def measure_output_stride(config: ModelConfig, size: int = 64) -> int:
    """实际前向一次，返回输入边长与 stage 5 特征边长之比"""
    model = build_model(config, seed=0).eval()
    stage5 = model.encode(np.zeros((1, config.in_channels, size, size), dtype=np.float32))[4]
    return size // stage5.shape[2]


def describe(model: SciNet) -> Dict[str, object]:
    """模型摘要：各部分参数量与输出步长"""
    config = model.config
    summary = {
        'digest': config.digest(),
        'pyramid': config.pyramid,
        'stage5_mode': config.stage5_mode,
        'output_stride': config.output_stride,
        'parameters': parameter_count(model),
        'encoder': [parameter_count(stage) for stage in model.encoder],
        'pyramid_parameters': parameter_count(model.pyramid) if model.pyramid is not None else 0,
        'decoder': [parameter_count(block) for block in model.decoder],
        'head': parameter_count(model.head),
    }
    if config.pyramid == 'dense-aspp':
        summary['pyramid_concat_channels'] = config.dense_concat_channels()
        summary['branch_inputs'] = config.dense_branch_inputs()
    elif config.pyramid == 'aspp':
        summary['pyramid_concat_channels'] = config.aspp_concat_channels()
    return summary
