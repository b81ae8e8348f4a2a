# -*- coding: utf-8 -*-

"""
poly 学习率：lr = lr0 * (1 - epoch / epochs) ^ power

按 epoch 计算的闭式形式，不是逐 epoch 连乘的递推形式；端点恰好为 lr0 和 0。
"""
from typing import List

from .config import TrainConfig


def poly_lr(epoch: int, config: TrainConfig) -> float:
    if not 0 <= epoch <= config.epochs:
        raise ValueError(f'epoch 必须在 [0, {config.epochs}] 内: {epoch}')
    if epoch == config.epochs:
        return 0.0
    return config.lr0 * (1.0 - epoch / config.epochs) ** config.poly_power


def lr_schedule(config: TrainConfig) -> List[float]:
    """训练用到的每个 epoch 的学习率（0 .. epochs-1）"""
    return [poly_lr(epoch, config) for epoch in range(config.epochs)]
