# File: preview_restore/logging/__init__.py

from .logger import Logger

# Create a global Logger instance
logger = Logger()
