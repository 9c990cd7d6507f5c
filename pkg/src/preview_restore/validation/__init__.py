# File: preview_restore/validation/__init__.py

from .validation import Validator
