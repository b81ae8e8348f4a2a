# -*- coding: utf-8 -*-

from django.apps import AppConfig


class ScinetConfig(AppConfig):
    name = 'scinet'
    verbose_name = 'Sci-Net model'
