# -*- coding: utf-8 -*-

"""
管理命令的公共基类

退出码：0 成功；1 参数或配置错误；2 数据或 checkpoint 错误；3 训练中出现非有限损失。
"""
import logging
import sys
from pathlib import Path
from typing import Any, Dict

from django.conf import settings
from django.core.management.base import BaseCommand, CommandError

from datasets.exceptions import DataError
from metrics.scoring import MetricError
from scinet.checkpoint import CheckpointError
from scinet.config import ModelConfigError
from training.config import TrainConfigError
from training.trainer import NonFiniteLossError

from .runconfig import ConfigError, RunConfig, load_run_config

logger = logging.getLogger(__name__)

EXIT_CONFIG = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, NonFiniteLossError):
        return EXIT_NUMERIC
    if isinstance(exc, (DataError, CheckpointError)):
        return EXIT_DATA
    return EXIT_CONFIG


class SciSegCommand(BaseCommand):
    """
    子类实现 run(run_config, **options)；基类负责：

    - 公共参数 --config/--seed/--out/--deterministic
    - 把 flag 映射为配置覆盖项（overrides 返回 {'section.key': value}）
    - 把领域异常转换为带退出码的 CommandError
    """

    def create_parser(self, prog_name, subcommand, **kwargs):
        parser = super().create_parser(prog_name, subcommand, **kwargs)
        # 参数错误抛 CommandError（退出码 1），不走 argparse 的 exit(2)
        parser.called_from_command_line = False
        return parser

    def run_from_argv(self, argv):
        try:
            super().run_from_argv(argv)
        except CommandError as exc:
            self.stderr.write(f'{exc.__class__.__name__}: {exc}')
            sys.exit(exc.returncode)

    def add_arguments(self, parser):
        parser.add_argument('--config', help='JSON 运行配置文件')
        parser.add_argument('--seed', type=int, help='覆盖配置中的 seed')
        parser.add_argument('--out', help='输出目录，覆盖 output_dir')
        parser.add_argument('--deterministic', action='store_true', default=None,
                            help='结构化输出中不写耗时，重复运行逐字节相同')

    def overrides(self, options: Dict[str, Any]) -> Dict[str, Any]:
        return {}

    def run(self, run_config: RunConfig, **options) -> str:
        raise NotImplementedError

    def output_dir(self, run_config: RunConfig, options: Dict[str, Any]) -> Path:
        return Path(options['out']) if options.get('out') else run_config.output_path

    def handle(self, *args, **options):
        logger.info('%s: SCISEG_NUM_THREADS=%d', self.__module__.rsplit('.', 1)[-1],
                    int(getattr(settings, 'SCISEG_NUM_THREADS', 1)))
        try:
            overrides = {
                'seed': options.get('seed'),
                'output_dir': options.get('out'),
                'train.deterministic': options.get('deterministic'),
            }
            overrides.update(self.overrides(options))
            run_config = load_run_config(options.get('config'), overrides)
            return self.run(run_config, **options)
        except (ConfigError, ModelConfigError, TrainConfigError, MetricError) as exc:
            raise CommandError(str(exc), returncode=EXIT_CONFIG) from exc
        except (DataError, CheckpointError, NonFiniteLossError) as exc:
            if isinstance(exc, NonFiniteLossError) and exc.dump_path is not None:
                logger.error('诊断数据: %s', exc.dump_path)
            raise CommandError(str(exc), returncode=exit_code_for(exc)) from exc
