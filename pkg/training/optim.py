# -*- coding: utf-8 -*-

"""
Adam 优化器（beta1=0.9, beta2=0.999, eps=1e-8）与梯度范数裁剪
"""
import math
from typing import Dict, List, Sequence, Tuple

import numpy as np

from tensors.layers import Parameter


class Adam:
    def __init__(self, named_parameters: Sequence[Tuple[str, Parameter]], beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params: List[Tuple[str, Parameter]] = list(named_parameters)
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m: Dict[str, np.ndarray] = {name: np.zeros_like(p.value) for name, p in self.params}
        self.v: Dict[str, np.ndarray] = {name: np.zeros_like(p.value) for name, p in self.params}

    def step(self, lr: float) -> None:
        self.step_count += 1
        t = self.step_count
        correction1 = 1 - self.beta1 ** t
        correction2 = 1 - self.beta2 ** t
        for name, param in self.params:
            grad = param.grad
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1 - self.beta1) * grad
            v *= self.beta2
            v += (1 - self.beta2) * grad * grad
            update = lr * (m / correction1) / (np.sqrt(v / correction2) + self.eps)
            param.value -= update.astype(param.value.dtype, copy=False)

    def state_dict(self) -> Dict[str, np.ndarray]:
        state = {'step': np.array([self.step_count], dtype=np.int64)}
        for name, _ in self.params:
            state[f'm.{name}'] = self.m[name]
            state[f'v.{name}'] = self.v[name]
        return state

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        self.step_count = int(state['step'][0])
        for name, param in self.params:
            self.m[name] = state[f'm.{name}'].astype(param.value.dtype).copy()
            self.v[name] = state[f'v.{name}'].astype(param.value.dtype).copy()


def clip_grad_norm(parameters: Sequence[Parameter], max_norm: float) -> float:
    """全局 L2 范数超过 max_norm 时按比例缩小梯度；返回裁剪前的范数"""
    total = math.sqrt(sum(float(np.sum(np.square(p.grad, dtype=np.float64))) for p in parameters))
    if total > max_norm:
        scale = max_norm / (total + 1e-12)
        for p in parameters:
            p.grad *= scale
    return total
