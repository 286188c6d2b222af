"""Probabilistic inverse graphics over hierarchical voxel scene graphs."""

__version__ = "0.1.0"
