# -*- coding: utf-8 -*-

"""
数值精度与调试检查

张量统一使用 numpy.ndarray，NCHW 布局。默认 float32，
float64 只在梯度检查时通过 float64_mode() 打开。
"""
import contextlib
from typing import Iterator, Optional

import numpy as np
from django.conf import settings

_DTYPE = np.float32


class NonFiniteError(FloatingPointError):
    """张量中出现 NaN/Inf"""


def default_dtype() -> np.dtype:
    """新建参数使用的数据类型"""
    return np.dtype(_DTYPE)


@contextlib.contextmanager
def float64_mode() -> Iterator[None]:
    """在 with 块内新建的参数使用 float64（仅用于梯度检查）"""
    global _DTYPE
    previous = _DTYPE
    _DTYPE = np.float64
    try:
        yield
    finally:
        _DTYPE = previous


def as_tensor(array, name: str = 'tensor', dtype: Optional[np.dtype] = None) -> np.ndarray:
    """
    校验并返回 rank-4 (n, c, h, w) 张量

    Args:
        array: 任意可转换为 ndarray 的对象
        name: 报错时使用的名字
        dtype: 目标类型，为 None 时保留浮点类型，整数转换为默认类型

    Returns:
        np.ndarray: C 连续的 4 维数组
    """
    arr = np.asarray(array)
    if arr.ndim != 4:
        raise ValueError(f'{name} 必须是 (n, c, h, w) 四维张量, 实际维度 {arr.shape}')
    if dtype is not None:
        arr = arr.astype(dtype, copy=False)
    elif not np.issubdtype(arr.dtype, np.floating):
        arr = arr.astype(default_dtype())
    return np.ascontiguousarray(arr)


def check_finite(array: np.ndarray, name: str) -> None:
    """发现 NaN/Inf 时抛出 NonFiniteError，并给出第一个位置"""
    finite = np.isfinite(array)
    if finite.all():
        return
    index = tuple(int(i) for i in np.argwhere(~finite)[0])
    raise NonFiniteError(f'{name} 在位置 {index} 出现非有限值 {array[index]!r}')


def debug_check(array: np.ndarray, name: str) -> None:
    """仅在 SCISEG_CHECK_FINITE 打开时检查"""
    if getattr(settings, 'SCISEG_CHECK_FINITE', False):
        check_finite(array, name)
