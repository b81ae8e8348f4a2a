# -*- coding: utf-8 -*-

"""
训练循环

每个 epoch：按 poly_lr 取学习率，跑 steps_per_epoch 个 Adam 步，然后在完整验证 tile 上
计算 micro-IoU；分数严格提高时覆盖 best.ckpt。epoch 记录逐行写入 epochs.jsonl。

batch 的随机流只由 (seed, epoch, step) 决定，所以后台预取线程不影响结果。
"""
import json
import logging
import math
import time
from concurrent.futures import Future, ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from datasets.exceptions import DataError, EmptyManifestError
from datasets.tiling import SampleTile, stack_batch
from metrics.scoring import ConfusionCounts, MetricConfig, aggregate, confusion
from scinet.checkpoint import save_checkpoint
from scinet.model import SciNet, predict

from .augment import augment, sample_chips
from .config import TrainConfig
from .losses import bce_dice_loss
from .optim import Adam, clip_grad_norm
from .schedule import poly_lr

logger = logging.getLogger(__name__)

EPOCH_LOG_NAME = 'epochs.jsonl'
BEST_CHECKPOINT_NAME = 'best.ckpt'

Validator = Callable[[SciNet, int], float]


class NonFiniteLossError(FloatingPointError):
    """损失出现 NaN/Inf；dump_path 指向保存的现场"""

    def __init__(self, message: str, dump_path: Optional[Path] = None):
        super().__init__(message)
        self.dump_path = dump_path


@dataclass
class FitResult:
    history: List[Dict[str, object]] = field(default_factory=list)
    best_epoch: int = 0
    best_score: float = -math.inf
    steps: int = 0
    checkpoint_path: Optional[Path] = None
    log_path: Optional[Path] = None


# ---------- 数据 ----------

def steps_per_epoch(n_tiles: int, config: TrainConfig) -> int:
    return config.steps_per_epoch or max(1, math.ceil(n_tiles / config.batch_size))


def epoch_order(n_tiles: int, config: TrainConfig, epoch: int) -> np.ndarray:
    return np.random.default_rng([config.seed, epoch, 0xE90C]).permutation(n_tiles)


def make_batch(tiles: Sequence[SampleTile], order: np.ndarray, config: TrainConfig,
               epoch: int, step: int) -> Tuple[np.ndarray, np.ndarray]:
    """
    组装第 epoch 轮第 step 步的 batch：随机裁剪 chip 后做位置增强

    Args:
        tiles: 训练 tile
        order: 本轮的 tile 顺序，不足时循环取
        config: TrainConfig
        epoch, step: 从 0 开始

    Returns:
        (x, y) 网络输入与目标
    """
    rng = np.random.default_rng([config.seed, epoch, step])
    start = step * config.batch_size
    picked = [tiles[order[(start + i) % len(order)]] for i in range(config.batch_size)]
    chips = [augment(sample_chips(t, config.chip, rng), rng, config.augment_p) for t in picked]
    return stack_batch(chips)


class _Prefetcher:
    """在后台线程里提前组装下一个 batch"""

    def __init__(self, build: Callable[[int], Tuple[np.ndarray, np.ndarray]], n_steps: int, enabled: bool):
        self.build = build
        self.n_steps = n_steps
        self.executor = ThreadPoolExecutor(max_workers=1) if enabled else None
        self.pending: Optional[Future] = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        if self.executor is not None:
            self.executor.shutdown(wait=True)

    def __iter__(self):
        if self.executor is None:
            for step in range(self.n_steps):
                yield step, self.build(step)
            return
        self.pending = self.executor.submit(self.build, 0)
        for step in range(self.n_steps):
            batch = self.pending.result()
            if step + 1 < self.n_steps:
                self.pending = self.executor.submit(self.build, step + 1)
            yield step, batch


# ---------- 验证 ----------

def evaluate_tiles(model: SciNet, tiles: Sequence[SampleTile], threshold: float = 0.5,
                   batch_size: int = 4) -> List[Tuple[ConfusionCounts, int]]:
    """完整尺度推理，返回每张 tile 的 (混淆计数, gsd)"""
    per_image = []
    for start in range(0, len(tiles), batch_size):
        chunk = list(tiles[start:start + batch_size])
        shapes = {t.mask.shape for t in chunk}
        groups = [chunk] if len(shapes) == 1 else [[t] for t in chunk]
        for group in groups:
            x, y = stack_batch(group)
            prob = predict(model, x)
            for i, t in enumerate(group):
                per_image.append((confusion(prob[i, 0], y[i, 0], threshold), t.gsd))
    return per_image


def micro_iou(model: SciNet, tiles: Sequence[SampleTile], metric_config: MetricConfig = MetricConfig(),
              batch_size: int = 4) -> float:
    per_image = evaluate_tiles(model, tiles, metric_config.threshold, batch_size)
    overall, _ = aggregate(per_image, 'micro', metric_config)
    return overall.iou


# ---------- 训练 ----------

def _check_disjoint(train_tiles: Sequence[SampleTile], val_tiles: Sequence[SampleTile]) -> None:
    train_ids = {t.tile_id for t in train_tiles if t.tile_id}
    shared = sorted(train_ids.intersection(t.tile_id for t in val_tiles if t.tile_id))
    if shared:
        raise DataError(f'训练集与验证集有 {len(shared)} 个相同 tile, 例如 {shared[0]}')


def _dump_nonfinite(out_dir: Path, step: int, epoch: int, lr: float, loss: float,
                    x: np.ndarray, y: np.ndarray, pred: np.ndarray) -> Path:
    dump_path = out_dir / f'nonfinite_step{step}.npz'
    np.savez(dump_path, inputs=x, targets=y, predictions=pred)
    info = {'step': step, 'epoch': epoch, 'lr': lr, 'loss': repr(loss), 'arrays': dump_path.name}
    dump_path.with_suffix('.json').write_text(json.dumps(info, indent=2), encoding='utf-8')
    return dump_path


def fit(
    model: SciNet,
    train_tiles: Sequence[SampleTile],
    val_tiles: Sequence[SampleTile],
    config: TrainConfig,
    out_dir,
    validate: Optional[Validator] = None,
    metric_config: MetricConfig = MetricConfig(),
) -> FitResult:
    """
    训练模型并保存验证 micro-IoU 最高的 checkpoint

    Args:
        model: 待训练的 SciNet（就地更新）
        train_tiles: 训练 tile，边长不小于 config.chip
        val_tiles: 验证 tile，与训练集不相交
        config: TrainConfig
        out_dir: 输出目录（epochs.jsonl, best.ckpt）
        validate: 可选的验证函数 (model, epoch) -> 分数，默认在 val_tiles 上算 micro-IoU
        metric_config: 默认验证使用的 MetricConfig

    Returns:
        FitResult
    """
    if not train_tiles:
        raise EmptyManifestError('没有训练 tile')
    if validate is None:
        if not val_tiles:
            raise EmptyManifestError('没有验证 tile')
        _check_disjoint(train_tiles, val_tiles)

        def validate(m: SciNet, epoch: int) -> float:
            return micro_iou(m, val_tiles, metric_config, config.batch_size)

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    result = FitResult(log_path=out_dir / EPOCH_LOG_NAME, checkpoint_path=out_dir / BEST_CHECKPOINT_NAME)
    optimizer = Adam(list(model.named_parameters()))
    n_steps = steps_per_epoch(len(train_tiles), config)
    parameters = model.parameters()
    logger.info('开始训练: %d 个训练 tile, %d 个验证 tile, %d epochs x %d steps',
                len(train_tiles), len(val_tiles), config.epochs, n_steps)

    with open(result.log_path, 'w', encoding='utf-8') as log_file:
        for epoch in range(config.epochs):
            started = time.perf_counter()
            lr = poly_lr(epoch, config)
            order = epoch_order(len(train_tiles), config, epoch)
            model.train()
            losses = []

            def build(step: int, epoch=epoch, order=order):
                return make_batch(train_tiles, order, config, epoch, step)

            with _Prefetcher(build, n_steps, config.prefetch) as batches:
                for step, (x, y) in batches:
                    result.steps += 1
                    model.zero_grad()
                    pred = model.forward(x)
                    loss = bce_dice_loss(pred, y, config.bce_weight, config.dice_weight, config.dice_smooth)
                    if not np.isfinite(loss.loss):
                        dump_path = _dump_nonfinite(out_dir, result.steps, epoch + 1, lr, loss.loss, x, y, pred)
                        logger.error('第 %d 步损失非有限 (%r), 现场已保存到 %s', result.steps, loss.loss, dump_path)
                        raise NonFiniteLossError(f'第 {result.steps} 步损失为 {loss.loss!r}', dump_path)
                    model.backward(loss.grad)
                    if config.clip_grad_norm is not None:
                        clip_grad_norm(parameters, config.clip_grad_norm)
                    optimizer.step(lr)
                    losses.append(loss.loss)

            score = float(validate(model, epoch + 1))
            improved = score > result.best_score
            if improved:
                result.best_score = score
                result.best_epoch = epoch + 1
                save_checkpoint(model, result.checkpoint_path, optimizer.state_dict(), meta={
                    'epoch': epoch + 1,
                    'step': result.steps,
                    'val_micro_iou': score,
                    'train': config.to_dict(),
                })
                logger.info('epoch %d: 新的最佳 val micro-IoU %.4f, 已保存 %s',
                            epoch + 1, score, result.checkpoint_path)

            elapsed = time.perf_counter() - started
            record = {
                'epoch': epoch + 1,
                'lr': lr,
                'train_loss': float(np.mean(losses)),
                'val_micro_iou': score,
                'best': improved,
            }
            if not config.deterministic:
                record['wall_time'] = round(elapsed, 3)
            log_file.write(json.dumps(record) + '\n')
            log_file.flush()
            result.history.append(record)
            logger.info('epoch %d/%d lr=%.3g loss=%.4f val_micro_iou=%.4f (%.1fs)',
                        epoch + 1, config.epochs, lr, record['train_loss'], score, elapsed)
    return result
