"""Guided focal-stack refinement for light-field salient object detection."""

__version__ = "0.1.0"
