# -*- coding: utf-8 -*-

from django.apps import AppConfig


class PipelineConfig(AppConfig):
    name = 'pipeline'
    verbose_name = 'Command-line pipeline'
