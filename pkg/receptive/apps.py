# -*- coding: utf-8 -*-

from django.apps import AppConfig


class ReceptiveConfig(AppConfig):
    name = 'receptive'
    verbose_name = 'Receptive-field calculus'
