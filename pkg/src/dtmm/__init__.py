"""Dirichlet-tree multinomial mixtures for clustering microbiome count data."""

__version__ = "0.1.0"
