# -*- coding: utf-8 -*-

"""
Sci-Net 的组成模块：encoder stage、Dense ASPP、并行 ASPP、decoder block

多输入/多输出的模块（decoder block）的 forward/backward 不走 Module 的单张量约定，
由 model.SciNet 显式串起来。
"""
from typing import List, Optional, Sequence, Tuple

import numpy as np

from tensors import ops
from tensors.layers import Conv2d, GlobalAvgPool, Module, ReLU, Sequential, Sigmoid, Upsample2x, conv_bn_relu


def encoder_stage(in_channels: int, out_channels: int, blocks: int, stride: int = 2, dilation: int = 1,
                  rng: Optional[np.random.Generator] = None) -> Sequential:
    """入口卷积负责下采样（或空洞），其余 block 步长 1、空洞率 1"""
    layers = [conv_bn_relu(in_channels, out_channels, 3, stride=stride, dilation=dilation, rng=rng)]
    for _ in range(blocks - 1):
        layers.append(conv_bn_relu(out_channels, out_channels, 3, rng=rng))
    return Sequential(layers)


class DenseASPP(Module):
    """
    级联空洞金字塔

    第 i 个分支的输入是原特征与前 i 个分支输出的拼接；
    所有分支输出与原特征拼接后经 1x1 卷积投影。
    """

    def __init__(self, in_channels: int, rates: Sequence[int], branch_channels: int, out_channels: int,
                 rng: Optional[np.random.Generator] = None):
        super().__init__()
        self.in_channels = in_channels
        self.rates = tuple(rates)
        self.branch_channels = branch_channels
        self.branches = Sequential()
        for i, rate in enumerate(self.rates):
            width = in_channels + i * branch_channels
            self.branches.append(Sequential([
                conv_bn_relu(width, branch_channels, 1, rng=rng),
                conv_bn_relu(branch_channels, branch_channels, 3, dilation=rate, rng=rng),
            ]))
        self.project = conv_bn_relu(in_channels + len(self.rates) * branch_channels, out_channels, 1, rng=rng)
        self.branch_inputs: List[int] = []
        self.concat_channels = 0

    def forward(self, x: np.ndarray) -> np.ndarray:
        if x.shape[1] != self.in_channels:
            raise ops.ShapeError(f'Dense ASPP 输入通道数 {x.shape[1]} 与配置 {self.in_channels} 不一致')
        features = [x]
        self.branch_inputs = []
        for branch in self.branches:
            joined = ops.concat_channels(features)
            self.branch_inputs.append(joined.shape[1])
            features.append(branch.forward(joined))
        joined = ops.concat_channels(features)
        self.concat_channels = joined.shape[1]
        return self.project.forward(joined)

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        sizes = [self.in_channels] + [self.branch_channels] * len(self.rates)
        grads = ops.split_channels(self.project.backward(grad_out), sizes)
        for i in reversed(range(len(self.rates))):
            grad_in = self.branches[i].backward(grads[i + 1])
            for j, part in enumerate(ops.split_channels(grad_in, sizes[:i + 1])):
                grads[j] = grads[j] + part
        return grads[0]


class PooledBranch(Module):
    """全局平均池化 -> 1x1 卷积(带 bias) -> ReLU -> 常值广播；1x1 特征上不做 BN"""

    def __init__(self, in_channels: int, out_channels: int, rng: Optional[np.random.Generator] = None):
        super().__init__()
        self.pool = GlobalAvgPool()
        self.conv = Conv2d(in_channels, out_channels, kernel=1, bias=True, rng=rng)
        self.relu = ReLU()

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._spatial = x.shape[2:]
        pooled = self.relu.forward(self.conv.forward(self.pool.forward(x)))
        return ops.broadcast_spatial(pooled, *self._spatial)

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        grad = ops.broadcast_spatial_backward(grad_out)
        return self.pool.backward(self.conv.backward(self.relu.backward(grad)))


class ASPP(Module):
    """并行空洞金字塔：1x1、若干 3x3 空洞、池化分支，拼接后 1x1 投影"""

    def __init__(self, in_channels: int, rates: Sequence[int], branch_channels: int, out_channels: int,
                 rng: Optional[np.random.Generator] = None):
        super().__init__()
        self.in_channels = in_channels
        self.rates = tuple(rates)
        self.branch_channels = branch_channels
        self.branches = Sequential([conv_bn_relu(in_channels, branch_channels, 1, rng=rng)])
        for rate in self.rates:
            self.branches.append(conv_bn_relu(in_channels, branch_channels, 3, dilation=rate, rng=rng))
        self.branches.append(PooledBranch(in_channels, branch_channels, rng=rng))
        self.project = conv_bn_relu(len(self.branches) * branch_channels, out_channels, 1, rng=rng)
        self.concat_channels = 0

    def forward(self, x: np.ndarray) -> np.ndarray:
        if x.shape[1] != self.in_channels:
            raise ops.ShapeError(f'ASPP 输入通道数 {x.shape[1]} 与配置 {self.in_channels} 不一致')
        joined = ops.concat_channels([branch.forward(x) for branch in self.branches])
        self.concat_channels = joined.shape[1]
        return self.project.forward(joined)

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        parts = ops.split_channels(self.project.backward(grad_out), [self.branch_channels] * len(self.branches))
        grad = None
        for branch, part in zip(self.branches, parts):
            g = branch.backward(part)
            grad = g if grad is None else grad + g
        return grad


class DecoderBlock(Module):
    """
    (可选上采样) -> 与 skip 拼接 -> 两个 3x3 conv_bn_relu -> 2 倍上采样

    运行特征分辨率为 skip 的一半时先上采样（strided 模式的第一个 block），
    分辨率相等时直接拼接，其它情况报错。
    """

    def __init__(self, in_channels: int, skip_channels: int, out_channels: int,
                 rng: Optional[np.random.Generator] = None):
        super().__init__()
        self.in_channels = in_channels
        self.skip_channels = skip_channels
        self.pre_upsample = Upsample2x()
        self.convs = Sequential([
            conv_bn_relu(in_channels + skip_channels, out_channels, 3, rng=rng),
            conv_bn_relu(out_channels, out_channels, 3, rng=rng),
        ])
        self.upsample = Upsample2x()
        self.upsampled_first = False

    def forward(self, x: np.ndarray, skip: np.ndarray) -> np.ndarray:
        if x.shape[2:] == skip.shape[2:]:
            self.upsampled_first = False
        elif (2 * x.shape[2], 2 * x.shape[3]) == skip.shape[2:]:
            self.upsampled_first = True
            x = self.pre_upsample.forward(x)
        else:
            raise ops.ShapeError(f'decoder 特征分辨率 {x.shape[2:]} 与 skip 分辨率 {skip.shape[2:]} 不匹配')
        if x.shape[1] != self.in_channels or skip.shape[1] != self.skip_channels:
            raise ops.ShapeError(
                f'decoder 通道数不匹配: input={x.shape[1]}/{self.in_channels}, '
                f'skip={skip.shape[1]}/{self.skip_channels}'
            )
        return self.upsample.forward(self.convs.forward(ops.concat_channels([x, skip])))

    def backward(self, grad_out: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        grad = self.convs.backward(self.upsample.backward(grad_out))
        grad_x, grad_skip = ops.split_channels(grad, [self.in_channels, self.skip_channels])
        if self.upsampled_first:
            grad_x = self.pre_upsample.backward(grad_x)
        return grad_x, grad_skip


def segmentation_head(in_channels: int, rng: Optional[np.random.Generator] = None) -> Sequential:
    return Sequential([Conv2d(in_channels, 1, kernel=1, bias=True, rng=rng), Sigmoid()])
