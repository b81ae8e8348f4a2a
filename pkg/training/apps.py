# -*- coding: utf-8 -*-

from django.apps import AppConfig


class TrainingConfig(AppConfig):
    name = 'training'
    verbose_name = 'Training recipe'
