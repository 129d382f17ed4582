"""Shared model governance by model splitting, and a harness measuring model-completion hardness."""

__version__ = "0.1.0"
