"""Desk-scale laboratory for label-only membership inference with adaptive
data poisoning."""

__version__ = "0.1.0"
