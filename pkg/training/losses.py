# -*- coding: utf-8 -*-

"""
BCE + Dice 组合损失

    loss = w_bce * BCE + w_dice * (1 - (2 sum(p g) + s) / (sum(p) + sum(g) + s))

p 先截断到 [1e-7, 1 - 1e-7]；截断处梯度为 0。Dice 在整个 batch 上展平计算。
"""
from dataclasses import dataclass

import numpy as np

from tensors.ops import ShapeError

CLAMP = 1e-7


@dataclass
class LossResult:
    loss: float
    bce: float
    dice: float
    grad: np.ndarray


def bce_dice_loss(pred: np.ndarray, target: np.ndarray, bce_weight: float = 0.5, dice_weight: float = 0.5,
                  smooth: float = 1.0) -> LossResult:
    if pred.shape != target.shape:
        raise ShapeError(f'预测 {pred.shape} 与目标 {target.shape} 形状不一致')
    p = np.asarray(pred, dtype=np.float64)
    g = np.asarray(target, dtype=np.float64)
    clipped = np.clip(p, CLAMP, 1.0 - CLAMP)
    active = (p >= CLAMP) & (p <= 1.0 - CLAMP)
    n = p.size

    bce = float(-np.mean(g * np.log(clipped) + (1 - g) * np.log(1 - clipped)))
    grad_bce = -(g / clipped - (1 - g) / (1 - clipped)) / n

    intersection = float(np.sum(clipped * g))
    denom = float(np.sum(clipped) + np.sum(g)) + smooth
    numer = 2 * intersection + smooth
    dice = 1.0 - numer / denom
    grad_dice = -(2 * g * denom - numer) / (denom * denom)

    grad = (bce_weight * grad_bce + dice_weight * grad_dice) * active
    return LossResult(
        loss=bce_weight * bce + dice_weight * dice,
        bce=bce,
        dice=dice,
        grad=grad.astype(pred.dtype, copy=False),
    )
