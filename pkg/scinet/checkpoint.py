# -*- coding: utf-8 -*-

"""
二进制 checkpoint 容器

布局（小端）：
    magic        8 字节  b'SCINETCK'
    version      uint32
    digest       32 字节 模型配置的 sha256
    meta_len     uint32，随后 meta_len 字节 UTF-8 JSON（config、best metric、epoch/step 等）
    count        uint32
    count 个条目：
        name_len uint16, name (UTF-8)
        dtype    uint8  (0=float32, 1=float64, 2=int64, 3=uint8)
        ndim     uint8, dims ndim x uint32
        payload  行优先原始数据
    trailer      32 字节，前面全部字节的 sha256

写入先落到同目录的临时文件再 os.replace，读取时先校验 trailer。
"""
import hashlib
import json
import logging
import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional, Tuple

import numpy as np

from tensors.layers import state_arrays

from .config import ModelConfig
from .model import SciNet, build_model

logger = logging.getLogger(__name__)

MAGIC = b'SCINETCK'
VERSION = 1
OPTIMIZER_PREFIX = 'optimizer.'

_DTYPES = {0: np.dtype('<f4'), 1: np.dtype('<f8'), 2: np.dtype('<i8'), 3: np.dtype('u1')}
_CODES = {dtype.str: code for code, dtype in _DTYPES.items()}


class CheckpointError(RuntimeError):
    """checkpoint 无法读取或使用"""


class CheckpointIntegrityError(CheckpointError):
    """文件被截断或校验和不符"""


class CheckpointMismatchError(CheckpointError):
    """checkpoint 与模型配置不一致"""


@dataclass
class Checkpoint:
    version: int
    digest: str
    meta: Dict[str, Any]
    arrays: Dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def config(self) -> ModelConfig:
        return ModelConfig.from_dict(self.meta['config'])

    @property
    def model_arrays(self) -> Dict[str, np.ndarray]:
        return {k: v for k, v in self.arrays.items() if not k.startswith(OPTIMIZER_PREFIX)}

    @property
    def optimizer_arrays(self) -> Dict[str, np.ndarray]:
        return {k[len(OPTIMIZER_PREFIX):]: v for k, v in self.arrays.items() if k.startswith(OPTIMIZER_PREFIX)}


# ---------- 写 ----------

def _encode_entry(name: str, array: np.ndarray) -> bytes:
    array = np.asarray(array)
    dtype = array.dtype.newbyteorder('<')
    if dtype.str not in _CODES:
        raise CheckpointError(f'{name}: 不支持的数据类型 {array.dtype}')
    encoded = name.encode('utf-8')
    head = struct.pack('<H', len(encoded)) + encoded
    head += struct.pack('<BB', _CODES[dtype.str], array.ndim)
    head += struct.pack(f'<{array.ndim}I', *array.shape)
    return head + np.ascontiguousarray(array, dtype=dtype).tobytes()


def checkpoint_bytes(config: ModelConfig, arrays: Dict[str, np.ndarray], meta: Optional[Dict[str, Any]] = None) -> bytes:
    meta = dict(meta or {})
    meta['config'] = config.to_dict()
    meta_bytes = json.dumps(meta, sort_keys=True, ensure_ascii=False).encode('utf-8')
    body = bytearray(MAGIC)
    body += struct.pack('<I', VERSION)
    body += bytes.fromhex(config.digest())
    body += struct.pack('<I', len(meta_bytes)) + meta_bytes
    body += struct.pack('<I', len(arrays))
    for name, array in arrays.items():
        body += _encode_entry(name, array)
    body += hashlib.sha256(body).digest()
    return bytes(body)


def save_checkpoint(
    model: SciNet,
    path,
    optimizer_state: Optional[Dict[str, np.ndarray]] = None,
    meta: Optional[Dict[str, Any]] = None,
) -> Path:
    """
    保存模型参数、BN 统计量与（可选）优化器状态

    Args:
        model: SciNet
        path: 目标文件
        optimizer_state: 名字 -> 数组，保存时加 'optimizer.' 前缀
        meta: 附加的 JSON 记录（best metric、epoch、step 等）

    Returns:
        Path: 写入的文件
    """
    path = Path(path)
    arrays = dict(state_arrays(model))
    for name, value in (optimizer_state or {}).items():
        arrays[OPTIMIZER_PREFIX + name] = value
    meta = dict(meta or {})
    meta['optimizer'] = bool(optimizer_state)
    payload = checkpoint_bytes(model.config, arrays, meta)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix='.tmp')
    try:
        with os.fdopen(fd, 'wb') as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    logger.debug('checkpoint 已保存: %s (%d 个数组)', path, len(arrays))
    return path


# ---------- 读 ----------

class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.offset = 0

    def take(self, size: int) -> bytes:
        if self.offset + size > len(self.data):
            raise CheckpointIntegrityError(f'checkpoint 在偏移 {self.offset} 处被截断')
        chunk = self.data[self.offset:self.offset + size]
        self.offset += size
        return chunk

    def unpack(self, fmt: str) -> Tuple:
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def read_checkpoint(path) -> Checkpoint:
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f'checkpoint 不存在: {path}')
    data = path.read_bytes()
    if not data.startswith(MAGIC):
        raise CheckpointError(f'不是 checkpoint 文件: {path}')
    if len(data) < len(MAGIC) + 4 + 32 + 32:
        raise CheckpointIntegrityError(f'checkpoint 被截断: {path}')
    body, trailer = data[:-32], data[-32:]
    if hashlib.sha256(body).digest() != trailer:
        raise CheckpointIntegrityError(f'checkpoint 校验和不符（文件被截断或损坏）: {path}')

    reader = _Reader(body)
    reader.take(len(MAGIC))
    (version,) = reader.unpack('<I')
    if version != VERSION:
        raise CheckpointMismatchError(f'checkpoint 版本 {version} 不受支持（当前 {VERSION}）')
    digest = reader.take(32).hex()
    (meta_len,) = reader.unpack('<I')
    meta = json.loads(reader.take(meta_len).decode('utf-8'))
    (count,) = reader.unpack('<I')
    arrays = {}
    for _ in range(count):
        (name_len,) = reader.unpack('<H')
        name = reader.take(name_len).decode('utf-8')
        code, ndim = reader.unpack('<BB')
        if code not in _DTYPES:
            raise CheckpointIntegrityError(f'{name}: 未知的数据类型编码 {code}')
        shape = reader.unpack(f'<{ndim}I') if ndim else ()
        dtype = _DTYPES[code]
        size = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
        arrays[name] = np.frombuffer(reader.take(size), dtype=dtype).reshape(shape).copy()
    if reader.offset != len(body):
        raise CheckpointIntegrityError(f'checkpoint 末尾有 {len(body) - reader.offset} 字节多余数据')
    return Checkpoint(version=version, digest=digest, meta=meta, arrays=arrays)


def _check_compatible(model: SciNet, checkpoint: Checkpoint) -> None:
    expected = state_arrays(model)
    stored = checkpoint.model_arrays
    for name, value in expected.items():
        if name not in stored:
            raise CheckpointMismatchError(f'checkpoint 缺少参数 {name}')
        if stored[name].shape != value.shape:
            raise CheckpointMismatchError(
                f'参数 {name} 形状不一致: checkpoint {stored[name].shape}, 模型 {value.shape}'
            )
    extra = [name for name in stored if name not in expected]
    if extra:
        raise CheckpointMismatchError(f'checkpoint 含有模型没有的参数 {extra[0]}')
    if checkpoint.digest != model.config.digest():
        raise CheckpointMismatchError(
            f'配置摘要不一致: checkpoint {checkpoint.digest[:12]}, 模型 {model.config.digest()[:12]}'
        )


def restore(model: SciNet, checkpoint: Checkpoint) -> SciNet:
    """把 checkpoint 中的数组写回模型（dtype 以 checkpoint 为准）"""
    _check_compatible(model, checkpoint)
    stored = checkpoint.model_arrays
    for module_name, module in _named_modules(model):
        for name, param in module._parameters.items():
            if param is None:
                continue
            param.value = stored[module_name + name].copy()
            param.grad = np.zeros_like(param.value)
        for name in list(module._buffers):
            setattr(module, name, stored[module_name + name].copy())
    return model


def _named_modules(module, prefix: str = ''):
    yield prefix, module
    for name, child in module._children.items():
        yield from _named_modules(child, f'{prefix}{name}.')


def load_checkpoint(path, config: Optional[ModelConfig] = None) -> SciNet:
    """
    读取并重建模型

    给出 config 时按该配置建模并校验（第一个不一致的参数名或形状、再比较配置摘要）；
    否则使用 checkpoint 内记录的配置。校验失败不会返回部分加载的模型。
    """
    checkpoint = read_checkpoint(path)
    config = config if config is not None else checkpoint.config
    return restore(build_model(config, seed=0), checkpoint)
