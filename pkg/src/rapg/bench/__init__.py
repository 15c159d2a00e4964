"""Sparse PCA experiments: data, reference minima, slope fits and the command line."""
