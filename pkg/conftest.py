"""Pytest wiring: configure Django so the apps' SimpleTestCase suites run."""
import os

import django

os.environ.setdefault('DJANGO_SETTINGS_MODULE', 'sciseg.settings')
django.setup()
