"""Synthetic problems, file formats and the benchmark suite."""
