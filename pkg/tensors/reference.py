# -*- coding: utf-8 -*-

"""
朴素参考实现（oracle）

只用于测试和梯度检查，速度不重要，逐元素按定义计算。
"""
import math

import numpy as np

from .ops import ConvParams


def conv2d_naive(x: np.ndarray, weights: np.ndarray, bias, params: ConvParams) -> np.ndarray:
    """按定义逐输出元素计算的空洞卷积（互相关约定）"""
    n, c_in, h, w = x.shape
    c_out, _, kh, kw = weights.shape
    sh, sw = params.stride
    ph, pw = params.padding
    r = params.dilation
    out_h, out_w = params.output_size(h, w)
    dtype = np.result_type(x.dtype, weights.dtype, np.float64)
    out = np.zeros((n, c_out, out_h, out_w), dtype=dtype)
    for b in range(n):
        for o in range(c_out):
            for i in range(out_h):
                for j in range(out_w):
                    total = 0.0
                    for c in range(c_in):
                        for u in range(kh):
                            row = i * sh + u * r - ph
                            if row < 0 or row >= h:
                                continue
                            for v in range(kw):
                                col = j * sw + v * r - pw
                                if 0 <= col < w:
                                    total += float(x[b, c, row, col]) * float(weights[o, c, u, v])
                    out[b, o, i, j] = total
            if bias is not None:
                out[b, o] += float(bias[o])
    return out


def dilate_kernel(weights: np.ndarray, rate: int) -> np.ndarray:
    """在权重之间插入 rate-1 个零，得到 k + (k-1)(r-1) 的等效卷积核"""
    c_out, c_in, kh, kw = weights.shape
    eff_h = kh + (kh - 1) * (rate - 1)
    eff_w = kw + (kw - 1) * (rate - 1)
    out = np.zeros((c_out, c_in, eff_h, eff_w), dtype=weights.dtype)
    out[:, :, ::rate, ::rate] = weights
    return out


def upsample_bilinear_2x_naive(x: np.ndarray) -> np.ndarray:
    """直接插值：输出坐标 o -> 源坐标 (o + 0.5)/2 - 0.5，负值截断到 0，上界索引截断"""

    def taps(size: int):
        result = []
        for o in range(size * 2):
            src = max((o + 0.5) / 2.0 - 0.5, 0.0)
            i0 = min(int(math.floor(src)), size - 1)
            i1 = min(i0 + 1, size - 1)
            frac = src - i0
            result.append((i0, i1, frac))
        return result

    n, c, h, w = x.shape
    rows = taps(h)
    cols = taps(w)
    out = np.zeros((n, c, 2 * h, 2 * w), dtype=np.float64)
    for oi, (r0, r1, fr) in enumerate(rows):
        for oj, (c0, c1, fc) in enumerate(cols):
            top = (1 - fc) * x[:, :, r0, c0] + fc * x[:, :, r0, c1]
            bottom = (1 - fc) * x[:, :, r1, c0] + fc * x[:, :, r1, c1]
            out[:, :, oi, oj] = (1 - fr) * top + fr * bottom
    return out
