# -*- coding: utf-8 -*-

from django.apps import AppConfig


class MetricsConfig(AppConfig):
    name = 'metrics'
    verbose_name = 'Segmentation metrics'
