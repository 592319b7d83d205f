"""Gaussian free fields on random conductance clusters.

Tools for generating stationary conductance environments, extracting
percolation clusters, solving Dirichlet problems for the weighted
Laplacian, simulating the variable-speed random walk, evaluating killed
continuum Green kernels, and running the scaling experiments that tie
them together.
"""

__version__ = "0.1.0"
