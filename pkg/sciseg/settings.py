# -*- coding: utf-8 -*-

"""
Django settings for sciseg project.

本项目不使用数据库、路由和 Web 服务，只借用 Django 的 settings、应用注册、
管理命令（manage.py）和测试框架。

For the full list of settings and their values, see
https://docs.djangoproject.com/en/5.2/ref/settings/
"""

import os
from pathlib import Path

from dotenv import load_dotenv

# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent

# Load environment variables from .env located at project root
load_dotenv(BASE_DIR / '.env')


def env_bool(key: str, default: bool = False) -> bool:
    """Helper to parse boolean env values."""
    value = os.getenv(key)
    if value is None:
        return default
    return value.strip().lower() in {'1', 'true', 'yes', 'on'}


def env_int(key: str, default: int) -> int:
    """Helper to parse integer env values."""
    value = os.getenv(key)
    if value is None:
        return default
    try:
        return int(value)
    except ValueError:
        return default


SECRET_KEY = os.getenv('DJANGO_SECRET_KEY', 'sciseg-local-only-not-a-secret')

DEBUG = env_bool('DJANGO_DEBUG', default=False)

ALLOWED_HOSTS = []


# Application definition

INSTALLED_APPS = [
    'tensors.apps.TensorsConfig',
    'receptive.apps.ReceptiveConfig',
    'scinet.apps.ScinetConfig',
    'training.apps.TrainingConfig',
    'metrics.apps.MetricsConfig',
    'datasets.apps.DatasetsConfig',
    'pipeline.apps.PipelineConfig',
]

# 不需要数据库：所有测试都是 SimpleTestCase
DATABASES = {}

USE_TZ = True
TIME_ZONE = 'UTC'

DEFAULT_AUTO_FIELD = 'django.db.models.BigAutoField'


# 日志配置
LOG_LEVEL = os.getenv('SCISEG_LOG_LEVEL', 'INFO').upper()

LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'plain': {
            'format': '%(asctime)s %(levelname)s %(name)s: %(message)s',
        },
    },
    'handlers': {
        'console': {
            'class': 'logging.StreamHandler',
            'formatter': 'plain',
        },
    },
    'root': {
        'handlers': ['console'],
        'level': LOG_LEVEL,
    },
}


# 数值计算配置
SCISEG_NUM_THREADS = max(1, env_int('SCISEG_NUM_THREADS', 1))  # 卷积按 batch 并行的线程数
SCISEG_CHECK_FINITE = env_bool('SCISEG_CHECK_FINITE', False)  # 调试开关：检查每层输出的 NaN/Inf
SCISEG_CONV_BLOCK_ROWS = max(1, env_int('SCISEG_CONV_BLOCK_ROWS', 64))  # im2col 每块的输出行数

# 输出目录（命令行 --out 优先）
SCISEG_OUTPUT_DIR = Path(os.getenv('SCISEG_OUTPUT_DIR', str(BASE_DIR / 'runs')))

# 长时间运行的验收测试（过拟合、尺度实验）
SCISEG_SLOW_TESTS = env_bool('SCISEG_SLOW_TESTS', False)
