# -*- coding: utf-8 -*-

from django.apps import AppConfig


class TensorsConfig(AppConfig):
    name = 'tensors'
    verbose_name = 'Tensor layers'
