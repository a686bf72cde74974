"""Nucleus instance masks from point annotations."""

__version__ = "0.1.0"
