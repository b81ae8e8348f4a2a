# -*- coding: utf-8 -*-

from django.apps import AppConfig


class DatasetsConfig(AppConfig):
    name = 'datasets'
    verbose_name = 'Synthetic multi-resolution data'
