# -*- coding: utf-8 -*-

"""
按分辨率分层的 k 折划分

每个分辨率类内，各折的 tile 数相差不超过 1。
"""
import logging
import warnings
from collections import Counter

import numpy as np
from sklearn.model_selection import StratifiedKFold

from .exceptions import DataError, EmptyManifestError
from .manifest import Manifest

logger = logging.getLogger(__name__)


def _round_robin(labels: np.ndarray, k: int, seed: int) -> np.ndarray:
    """类内打乱后轮流分配；sklearn 无法处理时使用"""
    rng = np.random.default_rng(seed)
    folds = np.zeros(len(labels), dtype=np.int64)
    offset = 0
    for label in sorted(set(labels.tolist())):
        members = np.flatnonzero(labels == label)
        members = members[rng.permutation(len(members))]
        folds[members] = (np.arange(len(members)) + offset) % k
        offset += len(members)
    return folds


def stratified_kfold(manifest: Manifest, k: int = 10, seed: int = 0) -> Manifest:
    """
    以 gsd 为类别做分层 k 折

    Args:
        manifest: 待划分的清单
        k: 折数
        seed: 随机种子，相同种子得到相同划分

    Returns:
        Manifest: 每条记录带 fold 编号
    """
    if not manifest.records:
        raise EmptyManifestError('清单为空，无法划分')
    if k < 2:
        raise DataError(f'k 必须 >= 2: {k}')
    labels = np.array([record.gsd for record in manifest.records])
    counts = Counter(labels.tolist())
    small = {gsd: n for gsd, n in sorted(counts.items()) if n < k}
    if small:
        logger.warning('以下分辨率的 tile 数少于 %d 折，尽力分配: %s', k, small)

    if len(labels) >= k and max(counts.values()) >= k:
        splitter = StratifiedKFold(n_splits=k, shuffle=True, random_state=seed)
        assignment = np.zeros(len(labels), dtype=np.int64)
        with warnings.catch_warnings():
            warnings.simplefilter('ignore', UserWarning)
            for fold, (_, test_index) in enumerate(splitter.split(np.zeros((len(labels), 1)), labels)):
                assignment[test_index] = fold
    else:
        logger.warning('tile 总数 %d 不足以做 %d 折分层划分，改用类内轮转分配', len(labels), k)
        assignment = _round_robin(labels, k, seed)
    return manifest.with_folds(assignment.tolist(), k)
