# -*- coding: utf-8 -*-

"""
前向/反向计算核

所有函数都是纯函数：输入不会被修改，状态（BatchNormState）显式传入。
卷积采用互相关约定（不翻转卷积核），即
    y[o, i, j] = sum_{c, u, v} x[c, i*s + u*r, j*s + v*r] * w[o, c, u, v]
r=1 时退化为普通卷积。

卷积使用 im2col（as_strided 取 patch）+ 分块矩阵乘；正确性以 reference.py
中的朴素循环实现为准。
"""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from django.conf import settings
from numpy.lib.stride_tricks import as_strided

Pair = Tuple[int, int]


class ShapeError(ValueError):
    """张量形状不匹配"""


def _pair(value) -> Pair:
    if isinstance(value, int):
        return (value, value)
    first, second = value
    return (int(first), int(second))


@dataclass(frozen=True)
class ConvParams:
    """卷积超参数；dilation 为各向同性的空洞率 r"""

    kernel: Pair = (3, 3)
    stride: Pair = (1, 1)
    padding: Pair = (0, 0)
    dilation: int = 1

    def __post_init__(self):
        object.__setattr__(self, 'kernel', _pair(self.kernel))
        object.__setattr__(self, 'stride', _pair(self.stride))
        object.__setattr__(self, 'padding', _pair(self.padding))
        if min(self.kernel) < 1 or min(self.stride) < 1:
            raise ValueError(f'kernel/stride 必须 >= 1: kernel={self.kernel}, stride={self.stride}')
        if self.dilation < 1:
            raise ValueError(f'dilation 必须 >= 1: {self.dilation}')
        if min(self.padding) < 0:
            raise ValueError(f'padding 不能为负: {self.padding}')

    @classmethod
    def same(cls, kernel: int, dilation: int = 1, stride: int = 1) -> 'ConvParams':
        """padding 与空洞率匹配，stride=1 时保持空间尺寸"""
        pad = dilation * (kernel - 1) // 2
        return cls(kernel=(kernel, kernel), stride=(stride, stride), padding=(pad, pad), dilation=dilation)

    @property
    def effective_kernel(self) -> Pair:
        r = self.dilation
        return (self.kernel[0] + (self.kernel[0] - 1) * (r - 1), self.kernel[1] + (self.kernel[1] - 1) * (r - 1))

    def output_size(self, height: int, width: int) -> Pair:
        """out = floor((in + 2p - r(k-1) - 1) / s) + 1"""
        sizes = []
        for axis, size in (('h', height), ('w', width)):
            idx = 0 if axis == 'h' else 1
            k, s, p = self.kernel[idx], self.stride[idx], self.padding[idx]
            out = (size + 2 * p - self.dilation * (k - 1) - 1) // s + 1
            if out < 1:
                raise ShapeError(
                    f'卷积输出尺寸无效: {axis}={size}, kernel={k}, stride={s}, padding={p}, '
                    f'dilation={self.dilation} -> {out}'
                )
            sizes.append(out)
        return sizes[0], sizes[1]


# ==================== 线程与分块 ====================

def _num_threads() -> int:
    return max(1, int(getattr(settings, 'SCISEG_NUM_THREADS', 1)))


def _block_rows() -> int:
    return max(1, int(getattr(settings, 'SCISEG_CONV_BLOCK_ROWS', 64)))


def _for_each_sample(fn: Callable[[int], object], n: int) -> list:
    """按 batch 下标执行 fn，结果按下标顺序返回（与线程数无关，逐位可复现）"""
    threads = min(_num_threads(), n)
    if threads <= 1:
        return [fn(i) for i in range(n)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, range(n)))


def _check_conv_shapes(x: np.ndarray, weights: np.ndarray, bias, params: ConvParams) -> None:
    if x.ndim != 4:
        raise ShapeError(f'input 必须是 (n, c, h, w), 实际 {x.shape}')
    if weights.ndim != 4:
        raise ShapeError(f'weights 必须是 (c_out, c_in, k_h, k_w), 实际 {weights.shape}')
    if x.shape[1] != weights.shape[1]:
        raise ShapeError(f'通道数不匹配: input c_in={x.shape[1]}, weights c_in={weights.shape[1]}')
    if tuple(weights.shape[2:]) != params.kernel:
        raise ShapeError(f'卷积核尺寸不匹配: weights k={tuple(weights.shape[2:])}, params kernel={params.kernel}')
    if bias is not None and np.shape(bias) != (weights.shape[0],):
        raise ShapeError(f'bias 形状 {np.shape(bias)} 与 c_out={weights.shape[0]} 不匹配')


def _pad(x: np.ndarray, params: ConvParams) -> np.ndarray:
    ph, pw = params.padding
    if ph == 0 and pw == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))


def _patch_view(sample: np.ndarray, params: ConvParams, out_h: int, out_w: int) -> np.ndarray:
    """(c, Hp, Wp) -> 只读视图 (c, k_h, k_w, out_h, out_w)"""
    c = sample.shape[0]
    kh, kw = params.kernel
    sh, sw = params.stride
    r = params.dilation
    s_c, s_h, s_w = sample.strides
    return as_strided(
        sample,
        shape=(c, kh, kw, out_h, out_w),
        strides=(s_c, s_h * r, s_w * r, s_h * sh, s_w * sw),
        writeable=False,
    )


def _row_blocks(out_h: int) -> List[Pair]:
    step = _block_rows()
    return [(start, min(out_h, start + step)) for start in range(0, out_h, step)]


# ==================== 卷积 ====================

def conv2d_forward(x: np.ndarray, weights: np.ndarray, bias: Optional[np.ndarray], params: ConvParams) -> np.ndarray:
    """
    空洞卷积前向

    Args:
        x: (n, c_in, h, w)
        weights: (c_out, c_in, k_h, k_w)
        bias: (c_out,) 或 None
        params: ConvParams

    Returns:
        np.ndarray: (n, c_out, out_h, out_w)
    """
    _check_conv_shapes(x, weights, bias, params)
    n = x.shape[0]
    c_out = weights.shape[0]
    out_h, out_w = params.output_size(x.shape[2], x.shape[3])
    dtype = np.result_type(x.dtype, weights.dtype)
    padded = _pad(x.astype(dtype, copy=False), params)
    w2d = weights.astype(dtype, copy=False).reshape(c_out, -1)
    out = np.empty((n, c_out, out_h, out_w), dtype=dtype)
    blocks = _row_blocks(out_h)

    def run(i: int) -> None:
        view = _patch_view(padded[i], params, out_h, out_w)
        for start, stop in blocks:
            cols = view[:, :, :, start:stop, :].reshape(w2d.shape[1], -1)
            out[i, :, start:stop, :] = (w2d @ cols).reshape(c_out, stop - start, out_w)

    _for_each_sample(run, n)
    if bias is not None:
        out += np.asarray(bias, dtype=dtype).reshape(1, c_out, 1, 1)
    return out


def conv2d_backward(
    grad_out: np.ndarray,
    saved_input: np.ndarray,
    weights: np.ndarray,
    params: ConvParams,
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    空洞卷积反向

    Returns:
        Tuple[grad_input, grad_weights, grad_bias]，形状与对应的前向量一致
    """
    _check_conv_shapes(saved_input, weights, None, params)
    n, c_in, h, w = saved_input.shape
    c_out = weights.shape[0]
    out_h, out_w = params.output_size(h, w)
    expected = (n, c_out, out_h, out_w)
    if grad_out.shape != expected:
        raise ShapeError(f'grad_out 形状 {grad_out.shape} 与前向输出 {expected} 不一致')

    dtype = np.result_type(grad_out.dtype, saved_input.dtype, weights.dtype)
    padded = _pad(saved_input.astype(dtype, copy=False), params)
    w2d = weights.astype(dtype, copy=False).reshape(c_out, -1)
    grad_out = grad_out.astype(dtype, copy=False)
    kh, kw = params.kernel
    sh, sw = params.stride
    r = params.dilation
    ph, pw = params.padding
    blocks = _row_blocks(out_h)

    def run(i: int) -> Tuple[np.ndarray, np.ndarray]:
        view = _patch_view(padded[i], params, out_h, out_w)
        grad_w = np.zeros_like(w2d)
        grad_padded = np.zeros(padded.shape[1:], dtype=dtype)
        for start, stop in blocks:
            rows = stop - start
            g_block = grad_out[i, :, start:stop, :].reshape(c_out, -1)
            cols = view[:, :, :, start:stop, :].reshape(w2d.shape[1], -1)
            grad_w += g_block @ cols.T
            dcols = (w2d.T @ g_block).reshape(c_in, kh, kw, rows, out_w)
            for u in range(kh):
                row0 = start * sh + u * r
                row_slice = slice(row0, row0 + sh * (rows - 1) + 1, sh)
                for v in range(kw):
                    col0 = v * r
                    col_slice = slice(col0, col0 + sw * (out_w - 1) + 1, sw)
                    grad_padded[:, row_slice, col_slice] += dcols[:, u, v]
        return grad_padded[:, ph:ph + h, pw:pw + w], grad_w

    results = _for_each_sample(run, n)
    grad_input = np.stack([item[0] for item in results]) if results else np.zeros_like(padded)
    grad_w2d = np.zeros_like(w2d)
    for _, partial in results:
        grad_w2d += partial
    grad_bias = grad_out.sum(axis=(0, 2, 3))
    return np.ascontiguousarray(grad_input), grad_w2d.reshape(weights.shape), grad_bias


# ==================== BatchNorm ====================

@dataclass
class BatchNormState:
    """逐通道的 scale/shift 与滑动统计量"""

    scale: np.ndarray
    shift: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.1
    eps: float = 1e-5

    @classmethod
    def create(cls, channels: int, dtype=np.float32, momentum: float = 0.1, eps: float = 1e-5) -> 'BatchNormState':
        return cls(
            scale=np.ones(channels, dtype=dtype),
            shift=np.zeros(channels, dtype=dtype),
            running_mean=np.zeros(channels, dtype=dtype),
            running_var=np.ones(channels, dtype=dtype),
            momentum=momentum,
            eps=eps,
        )

    @property
    def channels(self) -> int:
        return self.scale.shape[0]


@dataclass
class BatchNormCache:
    x_hat: np.ndarray
    inv_std: np.ndarray
    scale: np.ndarray
    mode: str = field(default='train')


def batchnorm_forward(x: np.ndarray, state: BatchNormState, mode: str = 'train') -> Tuple[np.ndarray, BatchNormCache]:
    """
    BatchNorm 前向；train 模式使用 batch 统计量并更新 state 中的滑动统计量，
    eval 模式使用滑动统计量
    """
    if x.ndim != 4 or x.shape[1] != state.channels:
        raise ShapeError(f'BatchNorm 通道数不匹配: input {x.shape}, state channels={state.channels}')
    if mode not in ('train', 'eval'):
        raise ValueError(f'未知模式: {mode}')
    dtype = x.dtype
    if mode == 'train':
        count = x.shape[0] * x.shape[2] * x.shape[3]
        if count == 0:
            raise ShapeError(f'train 模式下 batch 为空: {x.shape}')
        mean = x.mean(axis=(0, 2, 3))
        var = x.var(axis=(0, 2, 3))
        unbiased = var * count / max(count - 1, 1)
        m = state.momentum
        state.running_mean[...] = (1 - m) * state.running_mean + m * mean
        state.running_var[...] = (1 - m) * state.running_var + m * unbiased
    else:
        mean = state.running_mean
        var = state.running_var
    inv_std = (1.0 / np.sqrt(var + state.eps)).astype(dtype)
    x_hat = (x - mean.reshape(1, -1, 1, 1).astype(dtype)) * inv_std.reshape(1, -1, 1, 1)
    scale = state.scale.astype(dtype, copy=False)
    out = x_hat * scale.reshape(1, -1, 1, 1) + state.shift.astype(dtype, copy=False).reshape(1, -1, 1, 1)
    return out, BatchNormCache(x_hat=x_hat, inv_std=inv_std, scale=scale, mode=mode)


def batchnorm_backward(grad_out: np.ndarray, cache: BatchNormCache) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Returns (grad_input, grad_scale, grad_shift)"""
    if grad_out.shape != cache.x_hat.shape:
        raise ShapeError(f'grad_out 形状 {grad_out.shape} 与前向输出 {cache.x_hat.shape} 不一致')
    grad_shift = grad_out.sum(axis=(0, 2, 3))
    grad_scale = (grad_out * cache.x_hat).sum(axis=(0, 2, 3))
    g_hat = grad_out * cache.scale.reshape(1, -1, 1, 1)
    inv_std = cache.inv_std.reshape(1, -1, 1, 1)
    if cache.mode == 'eval':
        return g_hat * inv_std, grad_scale, grad_shift
    mean_g = g_hat.mean(axis=(0, 2, 3), keepdims=True)
    mean_gx = (g_hat * cache.x_hat).mean(axis=(0, 2, 3), keepdims=True)
    grad_input = (g_hat - mean_g - cache.x_hat * mean_gx) * inv_std
    return grad_input, grad_scale, grad_shift


# ==================== 双线性上采样（half-pixel，align_corners=False） ====================

def _upsample_axis(x: np.ndarray, axis: int) -> np.ndarray:
    moved = np.moveaxis(x, axis, -1)
    prev = np.concatenate([moved[..., :1], moved[..., :-1]], axis=-1)
    nxt = np.concatenate([moved[..., 1:], moved[..., -1:]], axis=-1)
    even = 0.75 * moved + 0.25 * prev
    odd = 0.75 * moved + 0.25 * nxt
    out = np.stack([even, odd], axis=-1).reshape(moved.shape[:-1] + (moved.shape[-1] * 2,))
    return np.moveaxis(out, -1, axis).astype(x.dtype, copy=False)


def _upsample_axis_backward(grad: np.ndarray, axis: int) -> np.ndarray:
    moved = np.moveaxis(grad, axis, -1)
    g_even = moved[..., 0::2]
    g_odd = moved[..., 1::2]
    out = 0.75 * (g_even + g_odd)
    out[..., :-1] += 0.25 * g_even[..., 1:]
    out[..., 0] += 0.25 * g_even[..., 0]
    out[..., 1:] += 0.25 * g_odd[..., :-1]
    out[..., -1] += 0.25 * g_odd[..., -1]
    return np.moveaxis(out, -1, axis).astype(grad.dtype, copy=False)


def upsample_bilinear_2x(x: np.ndarray) -> np.ndarray:
    """
    2 倍双线性上采样，half-pixel 约定：输出坐标 o 对应输入坐标 (o + 0.5) / 2 - 0.5，
    越界时取边界值。偶数位置 = 0.75*x[i] + 0.25*x[i-1]，奇数位置 = 0.75*x[i] + 0.25*x[i+1]
    """
    if x.ndim != 4 or x.shape[2] < 1 or x.shape[3] < 1:
        raise ShapeError(f'上采样输入必须是非空的 (n, c, h, w): {x.shape}')
    return np.ascontiguousarray(_upsample_axis(_upsample_axis(x, 2), 3))


def upsample_bilinear_2x_backward(grad_out: np.ndarray) -> np.ndarray:
    """前向线性映射的转置"""
    if grad_out.ndim != 4 or grad_out.shape[2] % 2 or grad_out.shape[3] % 2:
        raise ShapeError(f'上采样梯度的空间尺寸必须为偶数: {grad_out.shape}')
    return np.ascontiguousarray(_upsample_axis_backward(_upsample_axis_backward(grad_out, 3), 2))


# ==================== 逐元素与池化 ====================

def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0).astype(x.dtype, copy=False)


def relu_backward(grad_out: np.ndarray, x: np.ndarray) -> np.ndarray:
    return grad_out * (x > 0)


def sigmoid(x: np.ndarray) -> np.ndarray:
    # tanh 形式避免 exp 溢出
    return (0.5 * (1.0 + np.tanh(0.5 * x))).astype(x.dtype, copy=False)


def sigmoid_backward(grad_out: np.ndarray, y: np.ndarray) -> np.ndarray:
    return grad_out * y * (1 - y)


def concat_channels(tensors: Sequence[np.ndarray]) -> np.ndarray:
    """按通道拼接；n、h、w 必须一致"""
    if not tensors:
        raise ShapeError('concat_channels 需要至少一个张量')
    n, _, h, w = tensors[0].shape
    for index, item in enumerate(tensors[1:], start=1):
        if item.ndim != 4 or (item.shape[0], item.shape[2], item.shape[3]) != (n, h, w):
            raise ShapeError(
                f'concat 第 {index} 个张量 (n, h, w)={(item.shape[0], item.shape[2], item.shape[3])} '
                f'与第 0 个 {(n, h, w)} 不一致'
            )
    return np.concatenate(tensors, axis=1)


def split_channels(grad: np.ndarray, sizes: Sequence[int]) -> List[np.ndarray]:
    """concat_channels 的反向"""
    if sum(sizes) != grad.shape[1]:
        raise ShapeError(f'split 通道数之和 {sum(sizes)} 与梯度通道数 {grad.shape[1]} 不一致')
    bounds = np.cumsum(sizes)[:-1]
    return [np.ascontiguousarray(part) for part in np.split(grad, bounds, axis=1)]


def global_avg_pool(x: np.ndarray) -> np.ndarray:
    """每个通道的均值，保留维度 (n, c, 1, 1)"""
    return x.mean(axis=(2, 3), keepdims=True)


def global_avg_pool_backward(grad_out: np.ndarray, input_shape: Tuple[int, int, int, int]) -> np.ndarray:
    h, w = input_shape[2], input_shape[3]
    return np.broadcast_to(grad_out / (h * w), input_shape).astype(grad_out.dtype)


def broadcast_spatial(x: np.ndarray, height: int, width: int) -> np.ndarray:
    """(n, c, 1, 1) -> (n, c, h, w) 常值广播"""
    if x.shape[2:] != (1, 1):
        raise ShapeError(f'broadcast_spatial 需要 1x1 输入: {x.shape}')
    return np.ascontiguousarray(np.broadcast_to(x, (x.shape[0], x.shape[1], height, width)))


def broadcast_spatial_backward(grad_out: np.ndarray) -> np.ndarray:
    return grad_out.sum(axis=(2, 3), keepdims=True)
