# -*- coding: utf-8 -*-

from pathlib import Path

import numpy as np

from datasets.storage import read_png, write_png
from datasets.tiling import to_network_input
from scinet.checkpoint import load_checkpoint
from scinet.model import predict
from pipeline.commands import SciSegCommand


def pad_to_multiple(image: np.ndarray, multiple: int = 32) -> np.ndarray:
    """右侧和下侧用边缘像素补齐到 multiple 的倍数"""
    h, w = image.shape[:2]
    pad_h = -h % multiple
    pad_w = -w % multiple
    if not pad_h and not pad_w:
        return image
    return np.pad(image, ((0, pad_h), (0, pad_w), (0, 0)), mode='edge')


def infer_image(model, image: np.ndarray) -> np.ndarray:
    """完整尺度推理，返回与输入同尺寸的 (h, w) 概率图"""
    h, w = image.shape[:2]
    prob = predict(model, to_network_input([pad_to_multiple(image)]))
    return prob[0, 0, :h, :w]


class Command(SciSegCommand):
    help = '对一张图像做完整尺度推理，写出 0/1 掩码（可选概率图）'

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument('--checkpoint', required=True)
        parser.add_argument('--image', required=True, help='RGB 图像 (PNG)')
        parser.add_argument('--probabilities', action='store_true', help='同时写 8 位概率图')

    def run(self, run_config, **options):
        out_dir = self.output_dir(run_config, options)
        model = load_checkpoint(options['checkpoint'], run_config.model if run_config.model_given else None)
        image = read_png(options['image'], 'RGB')
        prob = infer_image(model, image)
        stem = Path(options['image']).stem
        mask = (prob >= run_config.metrics.threshold).astype(np.uint8)
        mask_path = out_dir / f'{stem}_mask.png'
        write_png(mask, mask_path)
        lines = [f'掩码 {mask_path}: {int(mask.sum())} / {mask.size} 个建筑像素']
        if options['probabilities']:
            prob_path = out_dir / f'{stem}_prob.png'
            write_png(np.round(prob * 255), prob_path)
            lines.append(f'概率图 {prob_path}')
        return '\n'.join(lines) + '\n'
