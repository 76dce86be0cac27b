"""Radiomic keypoint detection, graph matching, and affine registration toolkit."""

__version__ = "0.1.0"
