# -*- coding: utf-8 -*-

"""
有限差分梯度检查

32 位模式：解析梯度在 float32 下计算，中心差分在同一层的 float64 拷贝上计算；
64 位模式：两者都在 float64 下计算。
相对误差 = |a - n| / max(|a|, |n|, 1e-2 * 最大梯度幅值)。
"""
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

from .layers import Module


@dataclass
class GradCheckReport:
    passed: bool
    max_rel_error: float
    tolerance: float
    worst: Optional[Tuple[str, Tuple[int, ...]]] = None
    checked: int = 0
    errors: Dict[str, float] = field(default_factory=dict)
    message: str = ''

    def __bool__(self) -> bool:
        return self.passed


def numerical_gradient(fn: Callable[[np.ndarray], float], x: np.ndarray, eps: float = 1e-6,
                       indices: Optional[List[Tuple[int, ...]]] = None) -> np.ndarray:
    """对 fn 的每个（或指定的）输入元素做中心差分；x 会被临时修改后恢复"""
    grad = np.zeros_like(x, dtype=np.float64)
    if indices is None:
        indices = [tuple(idx) for idx in np.ndindex(x.shape)]
    for idx in indices:
        original = x[idx]
        x[idx] = original + eps
        plus = fn(x)
        x[idx] = original - eps
        minus = fn(x)
        x[idx] = original
        grad[idx] = (plus - minus) / (2 * eps)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray, scale: float) -> np.ndarray:
    floor = max(1e-2 * scale, 1e-12)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / denom


def _sample_indices(shape, limit: Optional[int], rng: np.random.Generator) -> Optional[List[Tuple[int, ...]]]:
    total = int(np.prod(shape))
    if limit is None or total <= limit:
        return None
    flat = rng.choice(total, size=limit, replace=False)
    return [tuple(int(i) for i in np.unravel_index(f, shape)) for f in sorted(flat)]


def grad_check(
    layer: Module,
    x: np.ndarray,
    tolerance: float = 1e-3,
    double: bool = False,
    seed: int = 0,
    eps: float = 1e-6,
    check_params: bool = True,
    max_entries: Optional[int] = None,
) -> GradCheckReport:
    """
    比较层的解析梯度与中心差分梯度

    Args:
        layer: 任意实现 forward/backward 的层
        x: 输入张量
        tolerance: 最大相对误差
        double: True 时解析梯度也用 float64
        seed: 投影向量与采样的随机种子
        eps: 差分步长（始终在 float64 下进行）
        check_params: 是否同时检查参数梯度
        max_entries: 每个张量最多检查的元素个数，None 表示全部

    Returns:
        GradCheckReport
    """
    rng = np.random.default_rng(seed)
    work_dtype = np.float64 if double else np.float32
    analytic_layer = layer.to(work_dtype)
    reference = analytic_layer.to(np.float64)
    x_work = np.ascontiguousarray(x, dtype=work_dtype)
    x_ref = x_work.astype(np.float64)

    out = analytic_layer.forward(x_work)
    projection = rng.standard_normal(out.shape)
    analytic_layer.zero_grad()
    grad_x = analytic_layer.backward(projection.astype(work_dtype))

    def loss_of_input(value: np.ndarray) -> float:
        return float(np.sum(reference.forward(value) * projection))

    candidates = [('input', grad_x, x_ref, loss_of_input)]
    if check_params:
        ref_params = dict(reference.named_parameters())
        for name, param in analytic_layer.named_parameters():
            target = ref_params[name]

            def loss_of_param(value: np.ndarray, _target=target) -> float:
                _target.value = value
                return float(np.sum(reference.forward(x_ref) * projection))

            candidates.append((name, param.grad, target.value, loss_of_param))

    report = GradCheckReport(passed=True, max_rel_error=0.0, tolerance=tolerance)
    for name, analytic, point, fn in candidates:
        analytic = np.asarray(analytic, dtype=np.float64)
        bad = ~np.isfinite(analytic)
        if bad.any():
            loc = tuple(int(i) for i in np.argwhere(bad)[0])
            report.passed = False
            report.worst = (name, loc)
            report.message = f'{name} 的解析梯度在 {loc} 非有限'
            return report
        indices = _sample_indices(point.shape, max_entries, rng)
        numeric = numerical_gradient(fn, point, eps=eps, indices=indices)
        if not np.isfinite(numeric).all():
            loc = tuple(int(i) for i in np.argwhere(~np.isfinite(numeric))[0])
            report.passed = False
            report.worst = (name, loc)
            report.message = f'{name} 的数值梯度在 {loc} 非有限'
            return report
        if indices is not None:
            mask = np.zeros(point.shape, dtype=bool)
            for idx in indices:
                mask[idx] = True
            analytic = np.where(mask, analytic, 0.0)
        scale = float(max(np.abs(analytic).max(initial=0.0), np.abs(numeric).max(initial=0.0)))
        errors = relative_error(analytic, numeric, scale)
        worst_flat = int(np.argmax(errors)) if errors.size else 0
        worst_value = float(errors.flat[worst_flat]) if errors.size else 0.0
        report.errors[name] = worst_value
        report.checked += len(indices) if indices is not None else int(point.size)
        if worst_value >= report.max_rel_error:
            report.max_rel_error = worst_value
            report.worst = (name, tuple(int(i) for i in np.unravel_index(worst_flat, point.shape)))

    report.passed = report.max_rel_error <= tolerance
    if not report.passed:
        report.message = f'最大相对误差 {report.max_rel_error:.3e} 超过阈值 {tolerance:.1e}，位置 {report.worst}'
    return report
