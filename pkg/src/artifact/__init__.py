"""Sparse constrained Gauss-Newton for articulated tree models."""
