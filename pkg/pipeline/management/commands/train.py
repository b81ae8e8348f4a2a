# -*- coding: utf-8 -*-

from scinet.checkpoint import load_checkpoint
from scinet.model import build_model, describe
from pipeline.commands import SciSegCommand
from pipeline.experiments import open_manifest, split_tiles
from pipeline.runconfig import write_run_config
from training.trainer import fit


class Command(SciSegCommand):
    help = '训练 Sci-Net：每个 epoch 验证一次，保存验证 micro-IoU 最高的 checkpoint'

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument('--manifest', help='数据清单 manifest.jsonl')
        parser.add_argument('--preset', help='模型预设 tiny/desk/full（别名 paper）/baseline')
        parser.add_argument('--pyramid', help='none/aspp/dense-aspp')
        parser.add_argument('--epochs', type=int)
        parser.add_argument('--batch-size', type=int)
        parser.add_argument('--chip', type=int)
        parser.add_argument('--lr', type=float, dest='lr0')
        parser.add_argument('--steps-per-epoch', type=int)
        parser.add_argument('--val-fold', type=int)
        parser.add_argument('--checkpoint', help='从已有 checkpoint 的权重开始')

    def overrides(self, options):
        return {
            'data.manifest': options.get('manifest'),
            'data.val_fold': options.get('val_fold'),
            'model.preset': options.get('preset'),
            'model.pyramid': options.get('pyramid'),
            'train.epochs': options.get('epochs'),
            'train.batch_size': options.get('batch_size'),
            'train.chip': options.get('chip'),
            'train.lr0': options.get('lr0'),
            'train.steps_per_epoch': options.get('steps_per_epoch'),
        }

    def run(self, run_config, **options):
        out_dir = self.output_dir(run_config, options)
        manifest = open_manifest(run_config)
        train_tiles, val_tiles = split_tiles(manifest, run_config.data.val_fold)
        if options.get('checkpoint'):
            model = load_checkpoint(options['checkpoint'], run_config.model)
        else:
            model = build_model(run_config.model, seed=run_config.seed)
        summary = describe(model)
        self.stdout.write(f"模型 {summary['digest'][:12]}: {summary['parameters']} 个参数, "
                          f"输出步长 {summary['output_stride']}")
        write_run_config(run_config, out_dir / 'run_config.json')
        result = fit(model, train_tiles, val_tiles, run_config.train, out_dir, metric_config=run_config.metrics)
        return (f'最佳 epoch {result.best_epoch}: val micro-IoU {100 * result.best_score:.2f}\n'
                f'checkpoint {result.checkpoint_path}\n'
                f'epoch 日志 {result.log_path}\n')
