"""Evaluation harness for class-agnostic object detection proposals."""

__version__ = "0.1.0"
