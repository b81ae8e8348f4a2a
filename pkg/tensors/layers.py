# -*- coding: utf-8 -*-

"""
有状态的层对象：保存前向输入，反向时把参数梯度累加到 Parameter.grad

只覆盖 Sci-Net 需要的固定层集合，不是通用的自动微分图。
"""
import copy
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from . import ops
from .precision import debug_check, default_dtype


class Parameter:
    """可训练参数及其梯度"""

    __slots__ = ('value', 'grad')

    def __init__(self, value: np.ndarray):
        self.value = value
        self.grad = np.zeros_like(value)

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.value.shape

    def __repr__(self) -> str:
        return f'Parameter(shape={self.value.shape}, dtype={self.value.dtype})'


class Module:
    """层的基类；属性赋值时自动登记 Parameter 和子模块，保证命名顺序稳定"""

    def __init__(self):
        object.__setattr__(self, '_parameters', {})
        object.__setattr__(self, '_buffers', {})
        object.__setattr__(self, '_children', {})
        object.__setattr__(self, 'training', True)

    def __setattr__(self, name, value):
        if isinstance(value, Parameter):
            self._parameters[name] = value
        elif isinstance(value, Module):
            self._children[name] = value
        elif name in self._buffers:
            self._buffers[name] = value
        object.__setattr__(self, name, value)

    def register_buffer(self, name: str, value: np.ndarray) -> None:
        self._buffers[name] = value
        object.__setattr__(self, name, value)

    def forward(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.forward(x)

    # ---------- 遍历 ----------

    def children(self) -> Iterator['Module']:
        return iter(self._children.values())

    def modules(self) -> Iterator['Module']:
        yield self
        for child in self._children.values():
            yield from child.modules()

    def named_parameters(self, prefix: str = '') -> Iterator[Tuple[str, Parameter]]:
        for name, param in self._parameters.items():
            yield prefix + name, param
        for name, child in self._children.items():
            yield from child.named_parameters(f'{prefix}{name}.')

    def parameters(self) -> List[Parameter]:
        return [param for _, param in self.named_parameters()]

    def named_buffers(self, prefix: str = '') -> Iterator[Tuple[str, np.ndarray]]:
        for name, value in self._buffers.items():
            yield prefix + name, value
        for name, child in self._children.items():
            yield from child.named_buffers(f'{prefix}{name}.')

    def buffers(self) -> List[np.ndarray]:
        return [value for _, value in self.named_buffers()]

    # ---------- 状态 ----------

    def train(self, mode: bool = True) -> 'Module':
        for module in self.modules():
            object.__setattr__(module, 'training', mode)
        return self

    def eval(self) -> 'Module':
        return self.train(False)

    def zero_grad(self) -> None:
        for param in self.parameters():
            param.grad = np.zeros_like(param.value)

    def to(self, dtype) -> 'Module':
        """返回转换为 dtype 的深拷贝（原模块不变）"""
        clone = copy.deepcopy(self)
        for module in clone.modules():
            for param in module._parameters.values():
                param.value = param.value.astype(dtype)
                param.grad = np.zeros_like(param.value)
            for name, value in list(module._buffers.items()):
                setattr(module, name, value.astype(dtype))
        return clone


class Conv2d(Module):
    """二维（空洞）卷积；padding 默认与空洞率匹配保持尺寸"""

    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        kernel: int = 3,
        stride: int = 1,
        dilation: int = 1,
        padding: Optional[int] = None,
        bias: bool = True,
        rng: Optional[np.random.Generator] = None,
    ):
        super().__init__()
        if padding is None:
            padding = dilation * (kernel - 1) // 2
        self.params = ops.ConvParams(kernel=kernel, stride=stride, padding=padding, dilation=dilation)
        rng = rng if rng is not None else np.random.default_rng(0)
        fan_in = in_channels * kernel * kernel
        std = np.sqrt(2.0 / fan_in)
        dtype = default_dtype()
        self.weight = Parameter((rng.standard_normal((out_channels, in_channels, kernel, kernel)) * std).astype(dtype))
        self.bias = Parameter(np.zeros(out_channels, dtype=dtype)) if bias else None
        self._input = None

    @property
    def in_channels(self) -> int:
        return self.weight.shape[1]

    @property
    def out_channels(self) -> int:
        return self.weight.shape[0]

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._input = x
        bias = self.bias.value if self.bias is not None else None
        out = ops.conv2d_forward(x, self.weight.value, bias, self.params)
        debug_check(out, 'Conv2d 输出')
        return out

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        grad_input, grad_weight, grad_bias = ops.conv2d_backward(grad_out, self._input, self.weight.value, self.params)
        self.weight.grad += grad_weight.astype(self.weight.grad.dtype, copy=False)
        if self.bias is not None:
            self.bias.grad += grad_bias.astype(self.bias.grad.dtype, copy=False)
        return grad_input

    def __repr__(self) -> str:
        p = self.params
        return (f'Conv2d({self.in_channels}, {self.out_channels}, k={p.kernel[0]}, '
                f's={p.stride[0]}, r={p.dilation})')


class BatchNorm2d(Module):
    """scale/shift 为可训练参数，running_mean/running_var 为缓冲区"""

    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5):
        super().__init__()
        dtype = default_dtype()
        self.weight = Parameter(np.ones(channels, dtype=dtype))
        self.bias = Parameter(np.zeros(channels, dtype=dtype))
        self.register_buffer('running_mean', np.zeros(channels, dtype=dtype))
        self.register_buffer('running_var', np.ones(channels, dtype=dtype))
        self.momentum = momentum
        self.eps = eps
        self._cache = None

    def state(self) -> ops.BatchNormState:
        return ops.BatchNormState(
            scale=self.weight.value,
            shift=self.bias.value,
            running_mean=self.running_mean,
            running_var=self.running_var,
            momentum=self.momentum,
            eps=self.eps,
        )

    def forward(self, x: np.ndarray) -> np.ndarray:
        out, self._cache = ops.batchnorm_forward(x, self.state(), 'train' if self.training else 'eval')
        debug_check(out, 'BatchNorm2d 输出')
        return out

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        grad_input, grad_scale, grad_shift = ops.batchnorm_backward(grad_out, self._cache)
        self.weight.grad += grad_scale.astype(self.weight.grad.dtype, copy=False)
        self.bias.grad += grad_shift.astype(self.bias.grad.dtype, copy=False)
        return grad_input


class ReLU(Module):
    def forward(self, x: np.ndarray) -> np.ndarray:
        self._input = x
        out = ops.relu(x)
        debug_check(out, 'ReLU 输出')
        return out

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        return ops.relu_backward(grad_out, self._input)


class Sigmoid(Module):
    def forward(self, x: np.ndarray) -> np.ndarray:
        self._output = ops.sigmoid(x)
        debug_check(self._output, 'Sigmoid 输出')
        return self._output

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        return ops.sigmoid_backward(grad_out, self._output)


class Upsample2x(Module):
    """2 倍双线性上采样（half-pixel 约定）"""

    def forward(self, x: np.ndarray) -> np.ndarray:
        out = ops.upsample_bilinear_2x(x)
        debug_check(out, 'Upsample2x 输出')
        return out

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        return ops.upsample_bilinear_2x_backward(grad_out)


class GlobalAvgPool(Module):
    """全局平均池化，输出 (n, c, 1, 1)"""

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._shape = x.shape
        out = ops.global_avg_pool(x)
        debug_check(out, 'GlobalAvgPool 输出')
        return out

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        return ops.global_avg_pool_backward(grad_out, self._shape)


class Sequential(Module):
    """按顺序执行的子模块，子模块以下标命名"""

    def __init__(self, layers: Sequence[Module] = ()):
        super().__init__()
        self._layers: List[Module] = []
        for layer in layers:
            self.append(layer)

    def append(self, layer: Module) -> None:
        setattr(self, str(len(self._layers)), layer)
        self._layers.append(layer)

    def __len__(self) -> int:
        return len(self._layers)

    def __iter__(self) -> Iterator[Module]:
        return iter(self._layers)

    def __getitem__(self, index: int) -> Module:
        return self._layers[index]

    def forward(self, x: np.ndarray) -> np.ndarray:
        for layer in self._layers:
            x = layer.forward(x)
        return x

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        for layer in reversed(self._layers):
            grad_out = layer.backward(grad_out)
        return grad_out


def conv_bn_relu(
    in_channels: int,
    out_channels: int,
    kernel: int = 3,
    stride: int = 1,
    dilation: int = 1,
    rng: Optional[np.random.Generator] = None,
) -> Sequential:
    """卷积 + BatchNorm + ReLU；卷积后接 BN 所以不带 bias"""
    return Sequential([
        Conv2d(in_channels, out_channels, kernel=kernel, stride=stride, dilation=dilation, bias=False, rng=rng),
        BatchNorm2d(out_channels),
        ReLU(),
    ])


def parameter_count(module: Module) -> int:
    return int(sum(param.value.size for param in module.parameters()))


def state_arrays(module: Module) -> Dict[str, np.ndarray]:
    """参数与缓冲区按名字展开，用于保存和比较"""
    arrays = {name: param.value for name, param in module.named_parameters()}
    arrays.update(dict(module.named_buffers()))
    return arrays
