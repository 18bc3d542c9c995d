"""Hierarchical opacity propagation for alpha matting, at desk scale."""

__version__ = "0.1.0"
