"""Evaluation, linking, clip stitching and annotation tooling for referring multi-object tracking."""

__version__ = "0.1.0"
